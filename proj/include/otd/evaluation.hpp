// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "otd/pipeline.hpp"
#include "otd/types.hpp"
#include "otd/voxel_map.hpp"

namespace otd::eval {

inline constexpr double kEvalVoxelSize = 0.2;

/// SemanticKITTI moving classes (252-259).
std::vector<std::uint16_t> default_moving_classes();

using VoxelSet = std::unordered_set<VoxelKey, VoxelKeyHash>;

/// Voxelised raw map: a voxel holding any moving-class point is dynamic, the rest static.
struct GroundTruth {
  double voxel_size = kEvalVoxelSize;
  VoxelSet static_voxels;
  VoxelSet dynamic_voxels;
};

class GroundTruthBuilder {
 public:
  explicit GroundTruthBuilder(std::vector<std::uint16_t> moving_classes = default_moving_classes(),
                              double voxel_size = kEvalVoxelSize);

  /// `scan` is in the sensor frame and must carry labels.
  void add_frame(const PointCloud& scan, const Pose& pose);
  GroundTruth finish() const;

 private:
  std::unordered_set<std::uint16_t> moving_;
  double voxel_size_;
  VoxelSet occupied_;
  VoxelSet dynamic_;
};

GroundTruth build_ground_truth(std::span<const PointCloud> scans, std::span<const Pose> poses,
                               const std::vector<std::uint16_t>& moving_classes = default_moving_classes(),
                               double voxel_size = kEvalVoxelSize);

GroundTruth build_ground_truth(const Sequence& seq,
                               const std::vector<std::uint16_t>& moving_classes = default_moving_classes(),
                               double voxel_size = kEvalVoxelSize);

/// Voxel-wise preservation / rejection rates. A rate is empty when its ground-truth set is
/// empty; F1 is then empty as well.
struct EvalReport {
  std::optional<double> pr;
  std::optional<double> rr;
  std::optional<double> f1;
  std::size_t static_voxels_total = 0;
  std::size_t static_voxels_preserved = 0;
  std::size_t dynamic_voxels_total = 0;
  std::size_t dynamic_voxels_rejected = 0;
  double eval_voxel_size = kEvalVoxelSize;

  /// "PR[%]/RR[%]/F1", e.g. "99.013/95.494/0.972". Undefined entries, and an F1 of 0,
  /// print as "-".
  std::string table_row() const;
  std::string to_json() const;
};

/// 2 pr rr / (pr + rr), or 0 when both are 0.
double f1_score(double pr, double rr);

EvalReport score(const PointCloud& clean_map, const GroundTruth& gt);

struct PhaseStats {
  std::string phase;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  double p95_ms = 0.0;
};

/// Per-frame wall time split into ground segmentation, map management and dynamic removal.
struct BenchmarkTable {
  std::size_t frames = 0;
  std::vector<PhaseStats> rows;

  /// Columns: phase,mean_ms,median_ms,p95_ms. An empty table has only the header.
  void write_csv(std::ostream& out) const;
  std::string to_text() const;
  const PhaseStats* find(const std::string& phase) const;
};

BenchmarkTable summarize_timings(std::span<const FrameReport> reports);

/// Runs the pipeline over `seq` and summarises the frame timings. Frame loading is not timed.
BenchmarkTable benchmark(const Sequence& seq, const PipelineParams& params);

}  // namespace otd::eval
