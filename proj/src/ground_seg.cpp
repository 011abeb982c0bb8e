// SPDX-License-Identifier: Apache-2.0

#include "otd/ground_seg.hpp"

#include <algorithm>
#include <array>
#include <numbers>
#include <string>

#include <Eigen/Eigenvalues>

#include "otd/error.hpp"

namespace otd::ground {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct PlaneFit {
  SectorPlane plane;
  bool ok = false;
};

// Normal is the eigenvector of the smallest covariance eigenvalue. Rank < 2 is rejected.
PlaneFit fit_plane(const PointCloud& scan, std::span<const std::uint32_t> idx) {
  PlaneFit fit;
  if (idx.size() < 3) return fit;
  Vec3 mean = Vec3::Zero();
  for (const auto i : idx) mean += scan.points[i];
  mean /= static_cast<double>(idx.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto i : idx) {
    const Vec3 d = scan.points[i] - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(idx.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  if (solver.info() != Eigen::Success) return fit;
  const Eigen::Vector3d ev = solver.eigenvalues();
  const double scale = std::max(ev(2), 1e-300);
  if (ev(2) <= 0.0 || ev(1) <= 1e-12 * scale) return fit;
  Vec3 n = solver.eigenvectors().col(0).normalized();
  if (n.z() < 0.0) n = -n;
  fit.plane.normal = n;
  fit.plane.offset = n.dot(mean);
  fit.plane.valid = true;
  fit.ok = true;
  return fit;
}

}  // namespace

void GroundSegConfig::validate() const {
  if (rows < 2 || cols < 2) throw ContractError("range image needs rows, cols >= 2");
  if (!(fov_up_deg > fov_down_deg)) throw ContractError("fov_up_deg must exceed fov_down_deg");
  if (!(angle_threshold_deg > 0.0)) throw ContractError("angle_threshold_deg must be positive");
  if (sector_rows < 1 || sector_cols < 1) throw ContractError("sector grid must be at least 1x1");
  if (!(sector_extent > 0.0)) throw ContractError("sector_extent must be positive");
  if (!(seed_fraction > 0.0 && seed_fraction <= 1.0)) throw ContractError("seed_fraction must lie in (0, 1]");
  if (pca_iterations < 1) throw ContractError("pca_iterations must be >= 1");
  if (!(plane_distance > 0.0)) throw ContractError("plane_distance must be positive");
  if (min_sector_candidates < 3) throw ContractError("min_sector_candidates must be >= 3");
}

RangeImage::RangeImage(int rows, int cols)
    : rows_(rows),
      cols_(cols),
      range_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), 0.0f),
      source_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), kEmpty) {
  if (rows < 2 || cols < 2) throw ContractError("range image needs rows, cols >= 2");
}

std::size_t RangeImage::occupied_count() const {
  return static_cast<std::size_t>(std::count_if(source_.begin(), source_.end(), [](auto s) { return s != kEmpty; }));
}

int GroundModel::sector_of(const Vec3& p) const {
  const double half = extent / 2.0;
  const int c = std::clamp(static_cast<int>(std::floor((p.x() + half) / extent * sector_cols)), 0, sector_cols - 1);
  const int r = std::clamp(static_cast<int>(std::floor((p.y() + half) / extent * sector_rows)), 0, sector_rows - 1);
  return r * sector_cols + c;
}

RangeImage build_range_image(const PointCloud& scan, int rows, int cols, double fov_up_deg, double fov_down_deg) {
  RangeImage img(rows, cols);
  const double down = fov_down_deg * kDegToRad;
  const double span = (fov_up_deg - fov_down_deg) * kDegToRad;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    const Vec3& p = scan.points[i];
    const double r = p.norm();
    if (!(r > 0.0)) continue;
    const double elevation = std::asin(std::clamp(p.z() / r, -1.0, 1.0));
    const double azimuth = std::atan2(p.y(), p.x());
    const int row = std::clamp(static_cast<int>(std::floor((elevation - down) / span * rows)), 0, rows - 1);
    int col = static_cast<int>(std::floor((azimuth + std::numbers::pi) / (2.0 * std::numbers::pi) * cols));
    col = ((col % cols) + cols) % cols;
    const auto rf = static_cast<float>(r);
    if (!img.occupied(row, col) || rf < img.range(row, col)) img.set(row, col, rf, static_cast<std::int32_t>(i));
  }
  return img;
}

std::vector<std::uint8_t> extract_candidates(const RangeImage& img, const PointCloud& scan,
                                             double angle_threshold_deg) {
  std::vector<std::uint8_t> mask(scan.size(), 0);
  const double threshold = angle_threshold_deg * kDegToRad;
  std::vector<std::int32_t> column;
  column.reserve(static_cast<std::size_t>(img.rows()));
  for (int c = 0; c < img.cols(); ++c) {
    column.clear();
    for (int r = 0; r < img.rows(); ++r) {
      if (img.occupied(r, c)) column.push_back(img.source(r, c));
    }
    for (std::size_t k = 1; k < column.size(); ++k) {
      const Vec3& a = scan.points[static_cast<std::size_t>(column[k - 1])];
      const Vec3& b = scan.points[static_cast<std::size_t>(column[k])];
      const double dz = std::abs(b.z() - a.z());
      const double drho = std::abs(b.head<2>().norm() - a.head<2>().norm());
      if (std::atan2(dz, drho) >= threshold) break;
      if (k == 1) mask[static_cast<std::size_t>(column[0])] = 1;
      mask[static_cast<std::size_t>(column[k])] = 1;
    }
  }
  return mask;
}

GroundRefinement refine_pca(const PointCloud& scan, std::span<const std::uint8_t> candidates,
                            const GroundSegConfig& cfg) {
  if (candidates.size() != scan.size()) {
    throw ContractError("candidate mask length " + std::to_string(candidates.size()) + " != scan size " +
                        std::to_string(scan.size()));
  }
  GroundRefinement out;
  out.is_ground.assign(scan.size(), 0);
  GroundModel& model = out.model;
  model.sector_rows = cfg.sector_rows;
  model.sector_cols = cfg.sector_cols;
  model.extent = cfg.sector_extent;
  const auto n_sectors = static_cast<std::size_t>(cfg.sector_rows * cfg.sector_cols);
  model.planes.assign(n_sectors, SectorPlane{});

  std::vector<std::vector<std::uint32_t>> buckets(n_sectors);
  for (std::size_t i = 0; i < scan.size(); ++i) {
    if (candidates[i]) buckets[static_cast<std::size_t>(model.sector_of(scan.points[i]))].push_back(
        static_cast<std::uint32_t>(i));
  }

  std::vector<std::uint8_t> sparse(n_sectors, 0);
  std::vector<std::uint32_t> selected;
  for (std::size_t s = 0; s < n_sectors; ++s) {
    auto& bucket = buckets[s];
    if (static_cast<int>(bucket.size()) < cfg.min_sector_candidates) {
      sparse[s] = 1;
      continue;
    }
    std::vector<std::uint32_t> by_height = bucket;
    std::stable_sort(by_height.begin(), by_height.end(),
                     [&](auto a, auto b) { return scan.points[a].z() < scan.points[b].z(); });
    const auto seed_count = std::max<std::size_t>(
        3, static_cast<std::size_t>(std::ceil(cfg.seed_fraction * static_cast<double>(bucket.size()))));
    selected.assign(by_height.begin(), by_height.begin() + static_cast<std::ptrdiff_t>(std::min(seed_count, by_height.size())));

    PlaneFit fit;
    for (int it = 0; it < cfg.pca_iterations; ++it) {
      fit = fit_plane(scan, selected);
      if (!fit.ok) break;
      selected.clear();
      for (const auto i : bucket) {
        if (fit.plane.distance(scan.points[i]) < cfg.plane_distance) selected.push_back(i);
      }
    }
    if (fit.ok) model.planes[s] = fit.plane;
  }

  // Sparse sectors borrow the first directly fitted 8-neighbour plane.
  static constexpr std::array<std::array<int, 2>, 8> kNeighbours{
      {{-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-1, -1}, {-1, 1}, {1, -1}, {1, 1}}};
  const std::vector<SectorPlane> fitted = model.planes;
  for (int r = 0; r < cfg.sector_rows; ++r) {
    for (int c = 0; c < cfg.sector_cols; ++c) {
      const auto s = static_cast<std::size_t>(r * cfg.sector_cols + c);
      if (!sparse[s]) continue;
      for (const auto& [dr, dc] : kNeighbours) {
        const int nr = r + dr;
        const int nc = c + dc;
        if (nr < 0 || nc < 0 || nr >= cfg.sector_rows || nc >= cfg.sector_cols) continue;
        const auto& candidate = fitted[static_cast<std::size_t>(nr * cfg.sector_cols + nc)];
        if (candidate.valid) {
          model.planes[s] = candidate;
          break;
        }
      }
    }
  }

  for (std::size_t s = 0; s < n_sectors; ++s) {
    const SectorPlane& plane = model.planes[s];
    if (!plane.valid) continue;
    for (const auto i : buckets[s]) {
      if (plane.distance(scan.points[i]) < cfg.plane_distance) out.is_ground[i] = 1;
    }
  }
  return out;
}

std::vector<std::uint8_t> classify_ground(const PointCloud& scan, const GroundSegConfig& cfg) {
  if (scan.empty()) return {};
  const RangeImage img = build_range_image(scan, cfg.rows, cfg.cols, cfg.fov_up_deg, cfg.fov_down_deg);
  const auto candidates = extract_candidates(img, scan, cfg.angle_threshold_deg);
  return refine_pca(scan, candidates, cfg).is_ground;
}

GroundSegmentation split_by_mask(const PointCloud& scan, std::span<const std::uint8_t> is_ground) {
  if (is_ground.size() != scan.size()) {
    throw ContractError("ground mask length " + std::to_string(is_ground.size()) + " != scan size " +
                        std::to_string(scan.size()));
  }
  GroundSegmentation out;
  for (std::size_t i = 0; i < scan.size(); ++i) {
    (is_ground[i] ? out.ground : out.nonground).append_from(scan, i);
  }
  return out;
}

GroundSegmentation segment_ground(const PointCloud& scan, const GroundSegConfig& cfg) {
  const auto mask = classify_ground(scan, cfg);
  return split_by_mask(scan, mask);
}

}  // namespace otd::ground
