// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace otd {

using Vec3 = Eigen::Vector3d;

/// Sequence position of a LiDAR scan.
using FrameIndex = std::uint32_t;

/// SemanticKITTI point label: lower 16 bits semantic class, upper 16 instance id.
struct PointLabel {
  std::uint16_t semantic = 0;
  std::uint16_t instance = 0;

  static PointLabel from_raw(std::uint32_t raw) {
    return {static_cast<std::uint16_t>(raw & 0xFFFFu), static_cast<std::uint16_t>(raw >> 16)};
  }
  std::uint32_t raw() const { return static_cast<std::uint32_t>(semantic) | (static_cast<std::uint32_t>(instance) << 16); }

  friend bool operator==(const PointLabel&, const PointLabel&) = default;
};

/// Ordered 3-D points with optional per-point intensity and labels.
///
/// `intensity` and `labels` are either empty or exactly as long as `points`.
struct PointCloud {
  std::vector<Vec3> points;
  std::vector<float> intensity;
  std::vector<PointLabel> labels;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_intensity() const { return !intensity.empty(); }
  bool has_labels() const { return !labels.empty(); }

  void reserve(std::size_t n) { points.reserve(n); }

  /// Throws ContractError when an optional channel is misaligned with the points.
  void validate() const;

  /// Copies point `i` of `src` (with whatever channels `src` carries) to the end of this cloud.
  void append_from(const PointCloud& src, std::size_t i);
};

/// Rigid transform mapping sensor coordinates into the world frame.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  /// Composition: (a * b).apply(p) == a.apply(b.apply(p)).
  Pose operator*(const Pose& rhs) const {
    return {rotation * rhs.rotation, rotation * rhs.translation + translation};
  }

  Pose inverse() const {
    const Eigen::Matrix3d rt = rotation.transpose();
    return {rt, -(rt * translation)};
  }

  /// Largest deviation of R^T R from identity, plus |det R - 1|.
  double orthonormality_error() const;
  bool is_orthonormal(double tol = 1e-6) const { return orthonormality_error() <= tol; }

  /// Projects the rotation onto SO(3) (nearest rotation in Frobenius norm).
  void orthonormalize();
};

}  // namespace otd
