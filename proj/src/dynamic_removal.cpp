// SPDX-License-Identifier: Apache-2.0

#include "otd/dynamic_removal.hpp"

#include <chrono>
#include <cstdlib>
#include <unordered_set>

#include <json.hpp>

#include "otd/error.hpp"
#include "otd/io.hpp"

namespace otd {

namespace {

using KeySet = std::unordered_set<VoxelKey, VoxelKeyHash>;
using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// Keys in first-appearance order, each once.
class KeyList {
 public:
  void reserve(std::size_t n) {
    seen_.reserve(n);
    keys_.reserve(n);
  }
  void add(const VoxelKey& key) {
    if (seen_.insert(key).second) keys_.push_back(key);
  }
  const std::vector<VoxelKey>& keys() const { return keys_; }

 private:
  KeySet seen_;
  std::vector<VoxelKey> keys_;
};

std::vector<VoxelKey> distinct_keys(const PointCloud& world, const MapState& state) {
  KeyList list;
  list.reserve(world.size() / 4 + 1);
  for (const Vec3& p : world.points) list.add(state.key_of(p));
  return list.keys();
}

std::int64_t diff(FrameIndex a, FrameIndex b) { return static_cast<std::int64_t>(a) - static_cast<std::int64_t>(b); }

std::vector<VoxelKey> downward_keys(std::span<const VoxelKey> keys, MapState& state, const RemovalConfig& cfg) {
  std::vector<VoxelKey> marked;
  for (const VoxelKey& key : keys) {
    const VoxelData* n = state.nonground.find(key);
    if (!n || n->restored()) continue;
    const auto below = state.ground_voxel_below(key, cfg.vertical_range);
    if (!below) continue;
    const VoxelData* g = state.ground.find(*below);
    if (diff(n->min_frame(), g->min_frame()) > cfg.tau_ret) marked.push_back(key);
  }
  for (const VoxelKey& key : marked) state.move_voxel(SubmapKind::kNonground, SubmapKind::kDynamic, key);
  return marked;
}

std::vector<VoxelKey> upward_keys(std::span<const VoxelKey> ground_keys, MapState& state, const RemovalConfig& cfg) {
  KeyList marked;
  for (const VoxelKey& key : ground_keys) {
    const VoxelData* g = state.ground.find(key);
    if (!g) continue;
    for (const VoxelKey& above : state.nonground_voxels_above(key, cfg.vertical_range)) {
      const VoxelData* n = state.nonground.find(above);
      if (diff(g->max_frame(), n->max_frame()) > cfg.tau_ret) marked.add(above);
    }
  }
  for (const VoxelKey& key : marked.keys()) state.move_voxel(SubmapKind::kNonground, SubmapKind::kDynamic, key);
  return marked.keys();
}

std::vector<VoxelKey> restoration_keys(std::span<const VoxelKey> touched, MapState& state, const RemovalConfig& cfg) {
  std::vector<VoxelKey> restored;
  KeySet seen;
  for (const VoxelKey& key : touched) {
    if (!seen.insert(key).second) continue;
    const VoxelData* d = state.dynamic.find(key);
    if (!d) continue;
    const auto below = state.ground_voxel_below(key, cfg.vertical_range);
    if (!below) continue;
    const VoxelData* g = state.ground.find(*below);
    const auto gap = std::llabs(static_cast<long long>(g->count()) - static_cast<long long>(d->count()));
    if (gap < cfg.tau_res) restored.push_back(key);
  }
  for (const VoxelKey& key : restored) {
    state.move_voxel(SubmapKind::kDynamic, SubmapKind::kNonground, key);
    state.nonground.find(key)->set_restored(true);
  }
  return restored;
}

}  // namespace

void RemovalConfig::validate() const {
  if (tau_ret < 1) throw ContractError("tau_ret must be >= 1");
  if (tau_res < 1) throw ContractError("tau_res must be >= 1");
  if (!(vertical_range > 0.0)) throw ContractError("vertical_range must be positive");
}

std::string FrameReport::to_log_line() const {
  nlohmann::ordered_json j;
  j["frame"] = frame;
  j["points"] = points;
  j["ground_points"] = ground_points;
  j["nonground_points"] = nonground_points;
  j["appeared_dynamic"] = appeared_dynamic;
  j["disappeared_dynamic"] = disappeared_dynamic;
  j["restored"] = restored;
  j["ground_segmentation_ms"] = timings.ground_segmentation_ms;
  j["map_management_ms"] = timings.map_management_ms;
  j["dynamic_removal_ms"] = timings.dynamic_removal_ms;
  j["total_ms"] = timings.total_ms;
  return j.dump();
}

std::vector<VoxelKey> downward_retrieval(const PointCloud& nonground_world, MapState& state,
                                         const RemovalConfig& cfg) {
  const auto keys = distinct_keys(nonground_world, state);
  return downward_keys(keys, state, cfg);
}

std::vector<VoxelKey> upward_retrieval(const PointCloud& ground_world, MapState& state, const RemovalConfig& cfg) {
  const auto keys = distinct_keys(ground_world, state);
  return upward_keys(keys, state, cfg);
}

std::vector<VoxelKey> static_restoration(MapState& state, std::span<const VoxelKey> touched_dynamic,
                                         const RemovalConfig& cfg) {
  return restoration_keys(touched_dynamic, state, cfg);
}

FrameReport process_frame(const PointCloud& scan, const Pose& pose, FrameIndex frame, MapState& state,
                          const FrameConfig& cfg, std::optional<std::span<const std::uint8_t>> ground_mask) {
  if (state.last_frame && frame <= *state.last_frame) {
    throw ContractError("frame " + std::to_string(frame) + " does not follow frame " +
                        std::to_string(*state.last_frame));
  }
  if (ground_mask && ground_mask->size() != scan.size()) {
    throw ContractError("ground mask length " + std::to_string(ground_mask->size()) + " != scan size " +
                        std::to_string(scan.size()));
  }
  cfg.removal.validate();

  FrameReport report;
  report.frame = frame;
  report.points = scan.size();
  const auto t_start = Clock::now();

  // (1) ground segmentation
  std::vector<std::uint8_t> mask;
  if (!ground_mask) mask = ground::classify_ground(scan, cfg.ground);
  const std::span<const std::uint8_t> is_ground = ground_mask ? *ground_mask : std::span<const std::uint8_t>(mask);
  report.timings.ground_segmentation_ms = elapsed_ms(t_start);

  // (2)+(3) world transform and insertion
  const auto t_map = Clock::now();
  state.last_frame = frame;
  KeyList ground_keys;
  KeyList nonground_keys;
  KeyList touched_dynamic;
  ground_keys.reserve(scan.size() / 8 + 1);
  nonground_keys.reserve(scan.size() / 8 + 1);
  const std::size_t cap = state.max_points_per_voxel();
  const PointCloud world = io::transform_to_world(scan, pose);
  for (std::size_t i = 0; i < world.size(); ++i) {
    const Vec3& p = world.points[i];
    const VoxelKey key = state.key_of(p);
    if (is_ground[i]) {
      state.ground.insert(key, p, frame, cap);
      ground_keys.add(key);
      ++report.ground_points;
      continue;
    }
    ++report.nonground_points;
    if (VoxelData* d = state.dynamic.find(key)) {
      if (cap == 0 || d->points().size() < cap) d->add_point(p.cast<float>());
      d->add_frame(frame);
      touched_dynamic.add(key);
    } else {
      state.nonground.insert(key, p, frame, cap);
      nonground_keys.add(key);
    }
  }
  report.timings.map_management_ms = elapsed_ms(t_map);

  // (4)-(6) dynamic removal
  const auto t_removal = Clock::now();
  report.appeared_keys = downward_keys(nonground_keys.keys(), state, cfg.removal);
  report.disappeared_keys = upward_keys(ground_keys.keys(), state, cfg.removal);
  report.restored_keys = restoration_keys(touched_dynamic.keys(), state, cfg.removal);
  report.appeared_dynamic = report.appeared_keys.size();
  report.disappeared_dynamic = report.disappeared_keys.size();
  report.restored = report.restored_keys.size();
  report.timings.dynamic_removal_ms = elapsed_ms(t_removal);
  report.timings.total_ms = elapsed_ms(t_start);
  return report;
}

}  // namespace otd
