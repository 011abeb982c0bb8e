// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "otd/dynamic_removal.hpp"
#include "otd/io.hpp"
#include "otd/types.hpp"
#include "otd/voxel_map.hpp"

namespace otd {

/// SemanticKITTI ground classes: road, parking, sidewalk, other-ground, lane-marking, terrain.
bool is_ground_class(std::uint16_t semantic);

/// Ground mask taken from point labels (requires `cloud.has_labels()`).
std::vector<std::uint8_t> ground_mask_from_labels(const PointCloud& cloud);

struct Frame {
  PointCloud scan;
  Pose pose;
  FrameIndex index = 0;
  /// Ground-truth segmentation, when the sequence provides one.
  std::optional<std::vector<std::uint8_t>> ground_mask;
};

/// Random-access source of frames in processing order.
class Sequence {
 public:
  virtual ~Sequence() = default;
  virtual std::size_t size() const = 0;
  virtual Frame load(std::size_t i) const = 0;
};

/// KITTI layout on disk: velodyne/*.bin, a pose file, optional labels/*.label and calib.txt.
class KittiSequence : public Sequence {
 public:
  struct Options {
    std::filesystem::path scan_dir;
    std::filesystem::path pose_file;
    std::filesystem::path label_dir;   // empty: unlabeled
    std::filesystem::path calib_file;  // empty: poses are already LiDAR-frame
    std::optional<std::size_t> start;  // inclusive sequence positions
    std::optional<std::size_t> end;
    io::RangeFilter range;
    bool ground_truth_segmentation = false;
  };

  /// Validates the layout eagerly: missing files throw IoError, count mismatches ContractError.
  explicit KittiSequence(Options options);

  std::size_t size() const override { return last_ - first_ + 1; }
  Frame load(std::size_t i) const override;

  const std::vector<Pose>& poses() const { return poses_; }
  std::size_t first() const { return first_; }
  std::size_t last() const { return last_; }
  std::size_t dropped_nonfinite() const { return dropped_nonfinite_; }

 private:
  Options options_;
  std::vector<std::filesystem::path> scans_;
  std::vector<Pose> poses_;
  std::size_t first_ = 0;
  std::size_t last_ = 0;
  mutable std::size_t dropped_nonfinite_ = 0;
};

class InMemorySequence : public Sequence {
 public:
  InMemorySequence() = default;
  explicit InMemorySequence(std::vector<Frame> frames) : frames_(std::move(frames)) {}

  std::size_t size() const override { return frames_.size(); }
  Frame load(std::size_t i) const override { return frames_.at(i); }
  const Frame& at(std::size_t i) const { return frames_.at(i); }
  void push_back(Frame f) { frames_.push_back(std::move(f)); }

 private:
  std::vector<Frame> frames_;
};

struct PipelineParams {
  double voxel_size = 0.2;
  std::size_t max_points_per_voxel = 0;
  FrameConfig frame;
  /// Use each frame's ground mask instead of the segmentation module.
  bool ground_truth_segmentation = false;
};

struct RunResult {
  MapState state;
  std::vector<FrameReport> reports;
  /// Every voxel moved to the dynamic submap at least once.
  std::unordered_set<VoxelKey, VoxelKeyHash> ever_marked;

  std::size_t appeared_total() const;
  std::size_t disappeared_total() const;
  std::size_t restored_total() const;
  double mean_frame_ms() const;
};

/// Runs every frame of `seq` through process_frame in order.
RunResult run_sequence(const Sequence& seq, const PipelineParams& params,
                       const std::function<void(const FrameReport&)>& on_frame = {});

}  // namespace otd
