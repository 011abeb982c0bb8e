// SPDX-License-Identifier: Apache-2.0

#include "otd/oracle.hpp"

#include <cmath>
#include <cstdlib>
#include <optional>
#include <utility>

#include "otd/error.hpp"
#include "otd/ground_seg.hpp"

namespace otd::sim {

namespace {

using Column = std::pair<std::int32_t, std::int32_t>;

struct Record {
  std::set<FrameIndex> frames;
  bool dynamic = false;
  bool restored = false;
};

VoxelKey key_for(const Vec3& p, double s) {
  return {static_cast<std::int32_t>(std::floor(p.x() / s)), static_cast<std::int32_t>(std::floor(p.y() / s)),
          static_cast<std::int32_t>(std::floor(p.z() / s))};
}

class Model {
 public:
  Model(double voxel_size, const RemovalConfig& cfg) : s_(voxel_size), cfg_(cfg) {}

  // Height difference of `dk` cells is within range when dk * s <= range.
  bool in_range(std::int32_t dk) const { return dk >= 1 && static_cast<double>(dk) * s_ <= cfg_.vertical_range + 1e-9; }

  std::optional<VoxelKey> ground_below(const VoxelKey& key) const {
    auto col = ground_columns_.find({key.i, key.j});
    if (col == ground_columns_.end()) return std::nullopt;
    auto it = col->second.lower_bound(key.k);
    if (it == col->second.begin()) return std::nullopt;
    --it;
    if (!in_range(key.k - *it)) return std::nullopt;
    return VoxelKey{key.i, key.j, *it};
  }

  void step(const PointCloud& scan, const Pose& pose, FrameIndex f, const std::vector<std::uint8_t>& mask,
            std::set<VoxelKey>& marked, std::set<VoxelKey>& restored) {
    std::set<VoxelKey> touched_ground;
    std::set<VoxelKey> touched_nonground;
    std::set<VoxelKey> touched_dynamic;
    for (std::size_t i = 0; i < scan.size(); ++i) {
      const Vec3 w = pose.rotation * scan.points[i] + pose.translation;
      const VoxelKey key = key_for(w, s_);
      if (mask[i]) {
        ground_[key].insert(f);
        ground_columns_[{key.i, key.j}].insert(key.k);
        touched_ground.insert(key);
        continue;
      }
      Record& rec = objects_[key];
      object_columns_[{key.i, key.j}].insert(key.k);
      rec.frames.insert(f);
      (rec.dynamic ? touched_dynamic : touched_nonground).insert(key);
    }

    std::set<VoxelKey> down;
    for (const VoxelKey& key : touched_nonground) {
      const Record& rec = objects_.at(key);
      if (rec.restored) continue;
      const auto g = ground_below(key);
      if (!g) continue;
      const auto gap = static_cast<long long>(*rec.frames.begin()) - static_cast<long long>(*ground_.at(*g).begin());
      if (gap > cfg_.tau_ret) down.insert(key);
    }
    for (const VoxelKey& key : down) objects_.at(key).dynamic = true;

    std::set<VoxelKey> up;
    for (const VoxelKey& g : touched_ground) {
      const FrameIndex g_last = *ground_.at(g).rbegin();
      auto col = object_columns_.find({g.i, g.j});
      if (col == object_columns_.end()) continue;
      for (std::int32_t k : col->second) {
        if (!in_range(k - g.k)) continue;
        const VoxelKey key{g.i, g.j, k};
        const Record& rec = objects_.at(key);
        if (rec.dynamic) continue;
        const auto gap = static_cast<long long>(g_last) - static_cast<long long>(*rec.frames.rbegin());
        if (gap > cfg_.tau_ret) up.insert(key);
      }
    }
    for (const VoxelKey& key : up) objects_.at(key).dynamic = true;
    marked.insert(down.begin(), down.end());
    marked.insert(up.begin(), up.end());

    for (const VoxelKey& key : touched_dynamic) {
      const Record& rec = objects_.at(key);
      if (!rec.dynamic) continue;
      const auto g = ground_below(key);
      if (!g) continue;
      const long long gap = std::llabs(static_cast<long long>(ground_.at(*g).size()) -
                                       static_cast<long long>(rec.frames.size()));
      if (gap < cfg_.tau_res) restored.insert(key);
    }
    for (const VoxelKey& key : restored) {
      Record& rec = objects_.at(key);
      rec.dynamic = false;
      rec.restored = true;
    }
  }

  std::map<VoxelKey, VoxelClass> classes() const {
    std::map<VoxelKey, VoxelClass> out;
    for (const auto& [key, rec] : objects_) {
      out[key] = rec.dynamic ? VoxelClass::kDynamic : rec.restored ? VoxelClass::kRestored : VoxelClass::kStatic;
    }
    return out;
  }

 private:
  // Column (i, j) -> occupied k.
  using ColumnIndex = std::map<Column, std::set<std::int32_t>>;

  double s_;
  RemovalConfig cfg_;
  std::map<VoxelKey, std::set<FrameIndex>> ground_;
  std::map<VoxelKey, Record> objects_;
  ColumnIndex ground_columns_;
  ColumnIndex object_columns_;
};

}  // namespace

OracleResult oracle_classify(const Sequence& seq, const PipelineParams& params) {
  params.frame.removal.validate();
  if (!(params.voxel_size > 0.0)) throw ContractError("voxel size must be positive");
  Model model(params.voxel_size, params.frame.removal);
  OracleResult result;
  std::optional<FrameIndex> last;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Frame frame = seq.load(i);
    if (last && frame.index <= *last) throw ContractError("oracle frames must increase");
    last = frame.index;
    std::vector<std::uint8_t> mask;
    if (params.ground_truth_segmentation) {
      if (!frame.ground_mask) throw ContractError("oracle needs ground masks");
      mask = *frame.ground_mask;
    } else {
      mask = ground::classify_ground(frame.scan, params.frame.ground);
    }
    std::set<VoxelKey> marked;
    std::set<VoxelKey> restored;
    model.step(frame.scan, frame.pose, frame.index, mask, marked, restored);
    result.ever_marked.insert(marked.begin(), marked.end());
    result.marked_per_frame.push_back(std::move(marked));
    result.restored_per_frame.push_back(std::move(restored));
  }
  result.classes = model.classes();
  return result;
}

}  // namespace otd::sim
