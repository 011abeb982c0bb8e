// SPDX-License-Identifier: Apache-2.0

#include "otd/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "otd/error.hpp"
#include "otd/io.hpp"

namespace otd::eval {

std::vector<std::uint16_t> default_moving_classes() { return {252, 253, 254, 255, 256, 257, 258, 259}; }

GroundTruthBuilder::GroundTruthBuilder(std::vector<std::uint16_t> moving_classes, double voxel_size)
    : moving_(moving_classes.begin(), moving_classes.end()), voxel_size_(voxel_size) {
  if (!(voxel_size > 0.0)) throw ContractError("evaluation voxel size must be positive");
}

void GroundTruthBuilder::add_frame(const PointCloud& scan, const Pose& pose) {
  if (!scan.has_labels() && !scan.empty()) throw ContractError("ground truth needs a labeled scan");
  scan.validate();
  for (std::size_t i = 0; i < scan.size(); ++i) {
    // Maps hold float32 points; voxelise the coordinates the map will actually contain.
    const Vec3 stored = pose.apply(scan.points[i]).cast<float>().cast<double>();
    const VoxelKey key = voxel_key(stored, voxel_size_);
    occupied_.insert(key);
    if (moving_.contains(scan.labels[i].semantic)) dynamic_.insert(key);
  }
}

GroundTruth GroundTruthBuilder::finish() const {
  GroundTruth gt;
  gt.voxel_size = voxel_size_;
  gt.dynamic_voxels = dynamic_;
  for (const VoxelKey& key : occupied_) {
    if (!dynamic_.contains(key)) gt.static_voxels.insert(key);
  }
  return gt;
}

GroundTruth build_ground_truth(std::span<const PointCloud> scans, std::span<const Pose> poses,
                               const std::vector<std::uint16_t>& moving_classes, double voxel_size) {
  if (scans.size() != poses.size()) {
    throw ContractError("scan count " + std::to_string(scans.size()) + " != pose count " +
                        std::to_string(poses.size()));
  }
  GroundTruthBuilder builder(moving_classes, voxel_size);
  for (std::size_t i = 0; i < scans.size(); ++i) builder.add_frame(scans[i], poses[i]);
  return builder.finish();
}

GroundTruth build_ground_truth(const Sequence& seq, const std::vector<std::uint16_t>& moving_classes,
                               double voxel_size) {
  GroundTruthBuilder builder(moving_classes, voxel_size);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Frame frame = seq.load(i);
    builder.add_frame(frame.scan, frame.pose);
  }
  return builder.finish();
}

double f1_score(double pr, double rr) { return pr + rr > 0.0 ? 2.0 * pr * rr / (pr + rr) : 0.0; }

EvalReport score(const PointCloud& clean_map, const GroundTruth& gt) {
  VoxelSet occupied;
  occupied.reserve(clean_map.size() / 4 + 1);
  for (const Vec3& p : clean_map.points) occupied.insert(voxel_key(p, gt.voxel_size));

  EvalReport report;
  report.eval_voxel_size = gt.voxel_size;
  report.static_voxels_total = gt.static_voxels.size();
  report.dynamic_voxels_total = gt.dynamic_voxels.size();
  for (const VoxelKey& key : gt.static_voxels) report.static_voxels_preserved += occupied.contains(key) ? 1 : 0;
  std::size_t dynamic_kept = 0;
  for (const VoxelKey& key : gt.dynamic_voxels) dynamic_kept += occupied.contains(key) ? 1 : 0;
  report.dynamic_voxels_rejected = report.dynamic_voxels_total - dynamic_kept;

  if (report.static_voxels_total > 0) {
    report.pr = static_cast<double>(report.static_voxels_preserved) / static_cast<double>(report.static_voxels_total);
  }
  if (report.dynamic_voxels_total > 0) {
    report.rr = 1.0 - static_cast<double>(dynamic_kept) / static_cast<double>(report.dynamic_voxels_total);
  }
  if (report.pr && report.rr) report.f1 = f1_score(*report.pr, *report.rr);
  return report;
}

std::string EvalReport::table_row() const {
  auto pct = [](const std::optional<double>& v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", *v * 100.0);
    return std::string(buf);
  };
  // An F1 of zero only says that one rate is zero; it prints as undefined.
  std::string f1_text = "-";
  if (f1 && *f1 > 0.0) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", *f1);
    f1_text = buf;
  }
  return pct(pr) + "/" + pct(rr) + "/" + f1_text;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j["pr"] = opt(pr);
  j["rr"] = opt(rr);
  j["f1"] = opt(f1);
  j["static_voxels_total"] = static_voxels_total;
  j["static_voxels_preserved"] = static_voxels_preserved;
  j["dynamic_voxels_total"] = dynamic_voxels_total;
  j["dynamic_voxels_rejected"] = dynamic_voxels_rejected;
  j["eval_voxel_size"] = eval_voxel_size;
  return j.dump();
}

namespace {

PhaseStats stats_of(std::string phase, std::vector<double> values) {
  PhaseStats s;
  s.phase = std::move(phase);
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean_ms = sum / static_cast<double>(values.size());
  const std::size_t n = values.size();
  s.median_ms = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = values[std::max<std::size_t>(rank, 1) - 1];
  return s;
}

}  // namespace

BenchmarkTable summarize_timings(std::span<const FrameReport> reports) {
  BenchmarkTable table;
  table.frames = reports.size();
  if (reports.empty()) return table;
  std::vector<double> seg, map, removal, total;
  for (const FrameReport& r : reports) {
    seg.push_back(r.timings.ground_segmentation_ms);
    map.push_back(r.timings.map_management_ms);
    removal.push_back(r.timings.dynamic_removal_ms);
    total.push_back(r.timings.total_ms);
  }
  table.rows.push_back(stats_of("ground_segmentation", std::move(seg)));
  table.rows.push_back(stats_of("map_management", std::move(map)));
  table.rows.push_back(stats_of("dynamic_removal", std::move(removal)));
  table.rows.push_back(stats_of("total", std::move(total)));
  return table;
}

void BenchmarkTable::write_csv(std::ostream& out) const {
  out << "phase,mean_ms,median_ms,p95_ms\n";
  for (const PhaseStats& row : rows) {
    out << row.phase << ',' << row.mean_ms << ',' << row.median_ms << ',' << row.p95_ms << '\n';
  }
}

std::string BenchmarkTable::to_text() const {
  std::ostringstream out;
  char line[128];
  std::snprintf(line, sizeof(line), "%-22s %10s %10s %10s\n", "phase", "mean[ms]", "median[ms]", "p95[ms]");
  out << line;
  for (const PhaseStats& row : rows) {
    std::snprintf(line, sizeof(line), "%-22s %10.3f %10.3f %10.3f\n", row.phase.c_str(), row.mean_ms, row.median_ms,
                  row.p95_ms);
    out << line;
  }
  out << "frames: " << frames << '\n';
  return out.str();
}

const PhaseStats* BenchmarkTable::find(const std::string& phase) const {
  for (const PhaseStats& row : rows) {
    if (row.phase == phase) return &row;
  }
  return nullptr;
}

BenchmarkTable benchmark(const Sequence& seq, const PipelineParams& params) {
  const RunResult result = run_sequence(seq, params);
  return summarize_timings(result.reports);
}

}  // namespace otd::eval
