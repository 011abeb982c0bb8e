// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "otd/types.hpp"

namespace otd {

/// Integer grid cell, floor(coordinate / voxel_size) per axis.
struct VoxelKey {
  std::int32_t i = 0;
  std::int32_t j = 0;
  std::int32_t k = 0;

  VoxelKey offset_z(std::int32_t dk) const { return {i, j, k + dk}; }

  friend bool operator==(const VoxelKey&, const VoxelKey&) = default;
  friend auto operator<=>(const VoxelKey&, const VoxelKey&) = default;
};

struct VoxelKeyHash {
  std::size_t operator()(const VoxelKey& key) const noexcept {
    const auto h = static_cast<std::uint64_t>(static_cast<std::uint32_t>(key.i)) * 73856093ULL ^
                   static_cast<std::uint64_t>(static_cast<std::uint32_t>(key.j)) * 19349669ULL ^
                   static_cast<std::uint64_t>(static_cast<std::uint32_t>(key.k)) * 83492791ULL;
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

VoxelKey voxel_key(const Vec3& p, double voxel_size);

/// Final per-voxel decision over the non-ground and dynamic submaps.
enum class VoxelClass { kStatic, kDynamic, kRestored };

const char* to_string(VoxelClass c);

/// Points and observing frame indices of one voxel.
///
/// The frame set is kept sorted and unique; min/max/count are cached so that the
/// retrieval queries never touch the set itself.
class VoxelData {
 public:
  void add_point(const Eigen::Vector3f& p) { points_.push_back(p); }
  void add_frame(FrameIndex f);

  /// Set union of frames, concatenation of points. `other` is left empty.
  void merge(VoxelData&& other);

  const std::vector<Eigen::Vector3f>& points() const { return points_; }
  const std::vector<FrameIndex>& frames() const { return frames_; }

  FrameIndex min_frame() const { return min_frame_; }
  FrameIndex max_frame() const { return max_frame_; }
  std::size_t count() const { return count_; }

  /// Set once static restoration has returned this voxel to the non-ground submap.
  bool restored() const { return restored_; }
  void set_restored(bool v) { restored_ = v; }

  /// True when the cached statistics agree with the frame set.
  bool stats_consistent() const;

  void truncate_points(std::size_t cap) {
    if (points_.size() > cap) points_.resize(cap);
  }

 private:
  std::vector<Eigen::Vector3f> points_;
  std::vector<FrameIndex> frames_;
  FrameIndex min_frame_ = 0;
  FrameIndex max_frame_ = 0;
  std::size_t count_ = 0;
  bool restored_ = false;
};

/// Sparse key -> voxel store.
class Submap {
 public:
  using Storage = std::unordered_map<VoxelKey, VoxelData, VoxelKeyHash>;

  /// Appends `p` to the voxel at `key` and records frame `f`. `max_points` of 0 means unbounded.
  VoxelData& insert(const VoxelKey& key, const Vec3& p, FrameIndex f, std::size_t max_points = 0);

  const VoxelData* find(const VoxelKey& key) const;
  VoxelData* find(const VoxelKey& key);
  bool contains(const VoxelKey& key) const { return voxels_.find(key) != voxels_.end(); }

  /// Removes and returns the voxel at `key`, if any.
  std::optional<VoxelData> extract(const VoxelKey& key);
  /// Merges `data` into the voxel at `key` (creating it when absent).
  void absorb(const VoxelKey& key, VoxelData&& data);

  std::size_t size() const { return voxels_.size(); }
  bool empty() const { return voxels_.empty(); }
  std::size_t point_count() const;

  Storage::const_iterator begin() const { return voxels_.begin(); }
  Storage::const_iterator end() const { return voxels_.end(); }

  void reserve(std::size_t n) { voxels_.reserve(n); }

 private:
  Storage voxels_;
};

enum class SubmapKind { kGround, kNonground, kDynamic };

const char* to_string(SubmapKind kind);

/// Ground, non-ground and dynamic submaps sharing one grid.
///
/// Invariants: no key is in both `nonground` and `dynamic`; ground voxels are
/// never moved by retrieval.
class MapState {
 public:
  explicit MapState(double voxel_size = 0.2, std::size_t max_points_per_voxel = 0);

  double voxel_size() const { return voxel_size_; }
  std::size_t max_points_per_voxel() const { return max_points_per_voxel_; }

  Submap& submap(SubmapKind kind);
  const Submap& submap(SubmapKind kind) const;

  Submap ground;
  Submap nonground;
  Submap dynamic;

  VoxelKey key_of(const Vec3& p) const { return voxel_key(p, voxel_size_); }

  /// Number of cells covered by a vertical search of `max_range` metres.
  int vertical_steps(double max_range) const;

  /// First ground key strictly below `key` within `max_range`, searching downward.
  std::optional<VoxelKey> ground_voxel_below(const VoxelKey& key, double max_range) const;

  /// Every non-ground key strictly above `key` within `max_range`, bottom-up.
  std::vector<VoxelKey> nonground_voxels_above(const VoxelKey& key, double max_range) const;

  /// Moves a whole voxel. Returns false (and counts a miss) when `key` is absent in `from`.
  bool move_voxel(SubmapKind from, SubmapKind to, const VoxelKey& key);
  std::size_t missed_moves() const { return missed_moves_; }

  std::size_t total_points() const;

  /// Ground plus non-ground points; the dynamic submap is left out.
  PointCloud export_static_map() const;
  PointCloud export_dynamic_map() const;

  /// Final decision for every non-ground and dynamic voxel.
  std::unordered_map<VoxelKey, VoxelClass, VoxelKeyHash> classify_voxels() const;

  /// One CSV row per voxel: submap,i,j,k,count,min_frame,max_frame. Rows are sorted.
  void write_debug_csv(std::ostream& out) const;

  /// Last frame processed by the pipeline, used to enforce increasing frame order.
  std::optional<FrameIndex> last_frame;

 private:
  double voxel_size_;
  std::size_t max_points_per_voxel_;
  std::size_t missed_moves_ = 0;
};

}  // namespace otd
