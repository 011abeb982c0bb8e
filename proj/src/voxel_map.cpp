// SPDX-License-Identifier: Apache-2.0

#include "otd/voxel_map.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <tuple>

#include "otd/error.hpp"

namespace otd {

VoxelKey voxel_key(const Vec3& p, double voxel_size) {
  return {static_cast<std::int32_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int32_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int32_t>(std::floor(p.z() / voxel_size))};
}

const char* to_string(VoxelClass c) {
  switch (c) {
    case VoxelClass::kStatic: return "static";
    case VoxelClass::kDynamic: return "dynamic";
    case VoxelClass::kRestored: return "restored";
  }
  return "?";
}

const char* to_string(SubmapKind kind) {
  switch (kind) {
    case SubmapKind::kGround: return "ground";
    case SubmapKind::kNonground: return "nonground";
    case SubmapKind::kDynamic: return "dynamic";
  }
  return "?";
}

void VoxelData::add_frame(FrameIndex f) {
  // Pipeline frames arrive in order, so the append path is the common one.
  if (frames_.empty() || f > frames_.back()) {
    frames_.push_back(f);
  } else {
    const auto it = std::lower_bound(frames_.begin(), frames_.end(), f);
    if (it != frames_.end() && *it == f) return;
    frames_.insert(it, f);
  }
  if (count_ == 0) {
    min_frame_ = f;
    max_frame_ = f;
  } else {
    min_frame_ = std::min(min_frame_, f);
    max_frame_ = std::max(max_frame_, f);
  }
  ++count_;
}

void VoxelData::merge(VoxelData&& other) {
  points_.insert(points_.end(), other.points_.begin(), other.points_.end());
  if (!other.frames_.empty()) {
    std::vector<FrameIndex> merged;
    merged.reserve(frames_.size() + other.frames_.size());
    std::set_union(frames_.begin(), frames_.end(), other.frames_.begin(), other.frames_.end(),
                   std::back_inserter(merged));
    frames_ = std::move(merged);
    min_frame_ = frames_.front();
    max_frame_ = frames_.back();
    count_ = frames_.size();
  }
  restored_ = restored_ || other.restored_;
  other = VoxelData{};
}

bool VoxelData::stats_consistent() const {
  if (count_ != frames_.size()) return false;
  if (frames_.empty()) return points_.empty();
  return min_frame_ == *std::min_element(frames_.begin(), frames_.end()) &&
         max_frame_ == *std::max_element(frames_.begin(), frames_.end()) &&
         std::adjacent_find(frames_.begin(), frames_.end(), std::greater_equal<>()) == frames_.end();
}

VoxelData& Submap::insert(const VoxelKey& key, const Vec3& p, FrameIndex f, std::size_t max_points) {
  VoxelData& v = voxels_[key];
  if (max_points == 0 || v.points().size() < max_points) v.add_point(p.cast<float>());
  v.add_frame(f);
  return v;
}

const VoxelData* Submap::find(const VoxelKey& key) const {
  const auto it = voxels_.find(key);
  return it == voxels_.end() ? nullptr : &it->second;
}

VoxelData* Submap::find(const VoxelKey& key) {
  const auto it = voxels_.find(key);
  return it == voxels_.end() ? nullptr : &it->second;
}

std::optional<VoxelData> Submap::extract(const VoxelKey& key) {
  auto node = voxels_.extract(key);
  if (node.empty()) return std::nullopt;
  return std::move(node.mapped());
}

void Submap::absorb(const VoxelKey& key, VoxelData&& data) {
  auto [it, inserted] = voxels_.try_emplace(key, std::move(data));
  if (!inserted) it->second.merge(std::move(data));
}

std::size_t Submap::point_count() const {
  std::size_t n = 0;
  for (const auto& [key, v] : voxels_) n += v.points().size();
  return n;
}

MapState::MapState(double voxel_size, std::size_t max_points_per_voxel)
    : voxel_size_(voxel_size), max_points_per_voxel_(max_points_per_voxel) {
  if (!(voxel_size > 0.0)) throw ContractError("voxel size must be positive");
}

Submap& MapState::submap(SubmapKind kind) {
  switch (kind) {
    case SubmapKind::kGround: return ground;
    case SubmapKind::kNonground: return nonground;
    case SubmapKind::kDynamic: return dynamic;
  }
  return ground;
}

const Submap& MapState::submap(SubmapKind kind) const {
  return const_cast<MapState*>(this)->submap(kind);
}

int MapState::vertical_steps(double max_range) const {
  if (!(max_range > 0.0)) throw ContractError("vertical range must be positive");
  return static_cast<int>(std::floor(max_range / voxel_size_ + 1e-9));
}

std::optional<VoxelKey> MapState::ground_voxel_below(const VoxelKey& key, double max_range) const {
  const int steps = vertical_steps(max_range);
  for (int s = 1; s <= steps; ++s) {
    const VoxelKey below = key.offset_z(-s);
    if (ground.contains(below)) return below;
  }
  return std::nullopt;
}

std::vector<VoxelKey> MapState::nonground_voxels_above(const VoxelKey& key, double max_range) const {
  const int steps = vertical_steps(max_range);
  std::vector<VoxelKey> out;
  for (int s = 1; s <= steps; ++s) {
    const VoxelKey above = key.offset_z(s);
    if (nonground.contains(above)) out.push_back(above);
  }
  return out;
}

bool MapState::move_voxel(SubmapKind from, SubmapKind to, const VoxelKey& key) {
  auto data = submap(from).extract(key);
  if (!data) {
    ++missed_moves_;
    return false;
  }
  submap(to).absorb(key, std::move(*data));
  return true;
}

std::size_t MapState::total_points() const {
  return ground.point_count() + nonground.point_count() + dynamic.point_count();
}

namespace {

// Sorted by key so exports are reproducible regardless of hash-table layout.
void append_sorted(const Submap& submap, PointCloud& out) {
  std::vector<const std::pair<const VoxelKey, VoxelData>*> entries;
  entries.reserve(submap.size());
  for (const auto& entry : submap) entries.push_back(&entry);
  std::sort(entries.begin(), entries.end(), [](auto a, auto b) { return a->first < b->first; });
  for (const auto* entry : entries) {
    for (const auto& p : entry->second.points()) out.points.push_back(p.cast<double>());
  }
}

}  // namespace

PointCloud MapState::export_static_map() const {
  PointCloud out;
  out.reserve(ground.point_count() + nonground.point_count());
  append_sorted(ground, out);
  append_sorted(nonground, out);
  return out;
}

PointCloud MapState::export_dynamic_map() const {
  PointCloud out;
  append_sorted(dynamic, out);
  return out;
}

std::unordered_map<VoxelKey, VoxelClass, VoxelKeyHash> MapState::classify_voxels() const {
  std::unordered_map<VoxelKey, VoxelClass, VoxelKeyHash> out;
  out.reserve(nonground.size() + dynamic.size());
  for (const auto& [key, v] : nonground) out.emplace(key, v.restored() ? VoxelClass::kRestored : VoxelClass::kStatic);
  for (const auto& [key, v] : dynamic) out.emplace(key, VoxelClass::kDynamic);
  return out;
}

void MapState::write_debug_csv(std::ostream& out) const {
  out << "submap,i,j,k,count,min_frame,max_frame\n";
  for (const SubmapKind kind : {SubmapKind::kGround, SubmapKind::kNonground, SubmapKind::kDynamic}) {
    std::vector<std::tuple<VoxelKey, const VoxelData*>> rows;
    for (const auto& [key, v] : submap(kind)) rows.emplace_back(key, &v);
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return std::get<0>(a) < std::get<0>(b); });
    for (const auto& [key, v] : rows) {
      out << to_string(kind) << ',' << key.i << ',' << key.j << ',' << key.k << ',' << v->count() << ','
          << v->min_frame() << ',' << v->max_frame() << '\n';
    }
  }
}

}  // namespace otd
