// SPDX-License-Identifier: Apache-2.0

#include "otd/pipeline.hpp"

#include <numeric>
#include <string>

#include "otd/error.hpp"

namespace otd {

bool is_ground_class(std::uint16_t semantic) {
  switch (semantic) {
    case 40:
    case 44:
    case 48:
    case 49:
    case 60:
    case 72:
      return true;
    default:
      return false;
  }
}

std::vector<std::uint8_t> ground_mask_from_labels(const PointCloud& cloud) {
  if (!cloud.has_labels()) throw ContractError("ground-truth segmentation requires labels");
  cloud.validate();
  std::vector<std::uint8_t> mask(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) mask[i] = is_ground_class(cloud.labels[i].semantic) ? 1 : 0;
  return mask;
}

KittiSequence::KittiSequence(Options options) : options_(std::move(options)) {
  if (!std::filesystem::exists(options_.pose_file)) throw IoError("pose file not found: " + options_.pose_file.string());
  scans_ = io::list_scans(options_.scan_dir);
  poses_ = io::read_poses(options_.pose_file);
  if (!options_.calib_file.empty()) poses_ = io::to_lidar_frame(poses_, io::read_calibration(options_.calib_file));
  if (!options_.label_dir.empty() && !std::filesystem::is_directory(options_.label_dir)) {
    throw IoError("label directory not found: " + options_.label_dir.string());
  }
  if (options_.ground_truth_segmentation && options_.label_dir.empty()) {
    throw ContractError("ground-truth segmentation needs a label directory");
  }
  if (scans_.empty()) throw ContractError("no scans in " + options_.scan_dir.string());
  if (scans_.size() != poses_.size()) {
    throw ContractError("scan count " + std::to_string(scans_.size()) + " != pose count " +
                        std::to_string(poses_.size()));
  }
  first_ = options_.start.value_or(0);
  last_ = options_.end.value_or(scans_.size() - 1);
  if (first_ > last_ || last_ >= scans_.size()) {
    throw ContractError("frame window [" + std::to_string(first_) + ", " + std::to_string(last_) +
                        "] outside sequence of " + std::to_string(scans_.size()) + " scans");
  }
}

Frame KittiSequence::load(std::size_t i) const {
  const std::size_t pos = first_ + i;
  if (pos > last_) throw ContractError("frame " + std::to_string(i) + " outside window");
  Frame frame;
  const auto& scan_path = scans_[pos];
  PointCloud raw;
  if (!options_.label_dir.empty()) {
    const auto label_path = options_.label_dir / (scan_path.stem().string() + ".label");
    raw = io::read_labeled_scan(scan_path, label_path, &dropped_nonfinite_);
  } else {
    raw = io::read_scan(scan_path, &dropped_nonfinite_);
  }
  frame.scan = io::filter_range(raw, options_.range);
  frame.pose = poses_[pos];
  frame.index = static_cast<FrameIndex>(pos);
  if (options_.ground_truth_segmentation) frame.ground_mask = ground_mask_from_labels(frame.scan);
  return frame;
}

std::size_t RunResult::appeared_total() const {
  return std::accumulate(reports.begin(), reports.end(), std::size_t{0},
                         [](std::size_t n, const FrameReport& r) { return n + r.appeared_dynamic; });
}

std::size_t RunResult::disappeared_total() const {
  return std::accumulate(reports.begin(), reports.end(), std::size_t{0},
                         [](std::size_t n, const FrameReport& r) { return n + r.disappeared_dynamic; });
}

std::size_t RunResult::restored_total() const {
  return std::accumulate(reports.begin(), reports.end(), std::size_t{0},
                         [](std::size_t n, const FrameReport& r) { return n + r.restored; });
}

double RunResult::mean_frame_ms() const {
  if (reports.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& r : reports) sum += r.timings.total_ms;
  return sum / static_cast<double>(reports.size());
}

RunResult run_sequence(const Sequence& seq, const PipelineParams& params,
                       const std::function<void(const FrameReport&)>& on_frame) {
  params.frame.removal.validate();
  params.frame.ground.validate();
  RunResult result{MapState(params.voxel_size, params.max_points_per_voxel), {}, {}};
  result.reports.reserve(seq.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Frame frame = seq.load(i);
    std::optional<std::span<const std::uint8_t>> mask;
    if (params.ground_truth_segmentation) {
      if (!frame.ground_mask) throw ContractError("frame " + std::to_string(frame.index) + " has no ground mask");
      mask = std::span<const std::uint8_t>(*frame.ground_mask);
    }
    FrameReport report = process_frame(frame.scan, frame.pose, frame.index, result.state, params.frame, mask);
    result.ever_marked.insert(report.appeared_keys.begin(), report.appeared_keys.end());
    result.ever_marked.insert(report.disappeared_keys.begin(), report.disappeared_keys.end());
    if (on_frame) on_frame(report);
    report.appeared_keys.clear();
    report.appeared_keys.shrink_to_fit();
    report.disappeared_keys.clear();
    report.disappeared_keys.shrink_to_fit();
    report.restored_keys.clear();
    report.restored_keys.shrink_to_fit();
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace otd
