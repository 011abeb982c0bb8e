// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otd/ground_seg.hpp"
#include "otd/types.hpp"
#include "otd/voxel_map.hpp"

namespace otd {

/// Observation-time thresholds, in frames, and the vertical search range in metres.
struct RemovalConfig {
  int tau_ret = 7;
  int tau_res = 15;
  double vertical_range = 3.0;

  void validate() const;
};

struct PhaseTimings {
  double ground_segmentation_ms = 0.0;
  double map_management_ms = 0.0;
  double dynamic_removal_ms = 0.0;
  double total_ms = 0.0;
};

struct FrameReport {
  FrameIndex frame = 0;
  std::size_t points = 0;
  std::size_t ground_points = 0;
  std::size_t nonground_points = 0;
  std::size_t appeared_dynamic = 0;
  std::size_t disappeared_dynamic = 0;
  std::size_t restored = 0;
  std::vector<VoxelKey> appeared_keys;
  std::vector<VoxelKey> disappeared_keys;
  std::vector<VoxelKey> restored_keys;
  PhaseTimings timings;

  /// Single-line JSON record: frame, counts and per-phase milliseconds.
  std::string to_log_line() const;
};

struct FrameConfig {
  ground::GroundSegConfig ground;
  RemovalConfig removal;
};

/// Downward retrieval for "suddenly appear" voxels.
///
/// Every distinct non-ground key hit by `nonground_world` is paired with the first ground
/// voxel below it within the vertical range. When the non-ground voxel was first observed
/// more than `tau_ret` frames after that ground voxel, it moves to the dynamic submap.
/// Voxels already restored once are not re-tested. Decisions are taken against the state
/// as it was on entry; the moves are applied afterwards. Returns the moved keys.
std::vector<VoxelKey> downward_retrieval(const PointCloud& nonground_world, MapState& state,
                                         const RemovalConfig& cfg);

/// Upward retrieval for "suddenly disappear" voxels: every non-ground voxel within range
/// above a ground key hit by `ground_world` whose last observation trails the ground's by
/// more than `tau_ret` frames moves to the dynamic submap.
std::vector<VoxelKey> upward_retrieval(const PointCloud& ground_world, MapState& state, const RemovalConfig& cfg);

/// Returns dynamic voxels to the non-ground submap when their observation count is within
/// `tau_res` of the ground voxel below them.
std::vector<VoxelKey> static_restoration(MapState& state, std::span<const VoxelKey> touched_dynamic,
                                         const RemovalConfig& cfg);

/// One online step: segment, transform, insert, downward, upward, restore.
///
/// `ground_mask`, when given, replaces the segmentation module (1 = ground per scan point).
/// Throws ContractError, without touching `state`, if `frame` does not exceed the previous
/// frame or the mask length is wrong.
FrameReport process_frame(const PointCloud& scan, const Pose& pose, FrameIndex frame, MapState& state,
                          const FrameConfig& cfg,
                          std::optional<std::span<const std::uint8_t>> ground_mask = std::nullopt);

}  // namespace otd
