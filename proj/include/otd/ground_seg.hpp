// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "otd/types.hpp"

namespace otd::ground {

struct GroundSegConfig {
  int rows = 64;
  int cols = 2048;
  double fov_up_deg = 2.0;
  double fov_down_deg = -24.8;
  /// Inclination between consecutive cells of a column above which the walk stops.
  double angle_threshold_deg = 10.0;
  int sector_rows = 4;
  int sector_cols = 4;
  /// Side length of the square x-y footprint (sensor frame, centred on the sensor).
  double sector_extent = 160.0;
  double seed_fraction = 0.2;
  int pca_iterations = 3;
  double plane_distance = 0.25;
  int min_sector_candidates = 10;

  void validate() const;
};

/// Spherical projection of a scan. Row 0 is the lowest elevation bin.
class RangeImage {
 public:
  static constexpr std::int32_t kEmpty = -1;

  RangeImage(int rows, int cols);

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  float range(int row, int col) const { return range_[offset(row, col)]; }
  /// Index of the source point, or kEmpty.
  std::int32_t source(int row, int col) const { return source_[offset(row, col)]; }
  bool occupied(int row, int col) const { return source(row, col) != kEmpty; }

  void set(int row, int col, float range, std::int32_t source) {
    range_[offset(row, col)] = range;
    source_[offset(row, col)] = source;
  }

  std::size_t occupied_count() const;

 private:
  std::size_t offset(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(col);
  }

  int rows_;
  int cols_;
  std::vector<float> range_;
  std::vector<std::int32_t> source_;
};

/// Plane n.p = d for one sector of the footprint grid.
struct SectorPlane {
  Vec3 normal = Vec3::UnitZ();
  double offset = 0.0;
  bool valid = false;

  double distance(const Vec3& p) const { return std::abs(normal.dot(p) - offset); }
};

struct GroundModel {
  int sector_rows = 0;
  int sector_cols = 0;
  double extent = 0.0;
  std::vector<SectorPlane> planes;

  /// Sector containing the x-y position of `p`; positions outside the footprint clamp to the border.
  int sector_of(const Vec3& p) const;
};

/// Per-point ground mask (1 = ground) plus the fitted planes.
struct GroundRefinement {
  std::vector<std::uint8_t> is_ground;
  GroundModel model;
};

struct GroundSegmentation {
  PointCloud ground;
  PointCloud nonground;
};

/// Projects `scan` into a rows x cols image; the nearer point wins a shared cell.
RangeImage build_range_image(const PointCloud& scan, int rows, int cols, double fov_up_deg = 2.0,
                             double fov_down_deg = -24.8);

/// Column walk from the bottom row upward. A cell is a candidate while the inclination of the step
/// into it stays below the threshold; the bottom cell qualifies through the step out of it.
std::vector<std::uint8_t> extract_candidates(const RangeImage& img, const PointCloud& scan,
                                             double angle_threshold_deg);

/// Sector-wise iterative PCA plane fit over the candidates. Only candidates can become ground.
GroundRefinement refine_pca(const PointCloud& scan, std::span<const std::uint8_t> candidates,
                            const GroundSegConfig& cfg);

/// Both steps; returns the per-point ground mask.
std::vector<std::uint8_t> classify_ground(const PointCloud& scan, const GroundSegConfig& cfg);

/// Splits a cloud by a per-point mask (nonzero = ground). Throws on a length mismatch.
GroundSegmentation split_by_mask(const PointCloud& scan, std::span<const std::uint8_t> is_ground);

GroundSegmentation segment_ground(const PointCloud& scan, const GroundSegConfig& cfg);

}  // namespace otd::ground
