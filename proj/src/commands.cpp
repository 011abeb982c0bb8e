// SPDX-License-Identifier: Apache-2.0

#include "otd/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "otd/config.hpp"
#include "otd/error.hpp"
#include "otd/evaluation.hpp"
#include "otd/io.hpp"
#include "otd/pipeline.hpp"
#include "otd/simulator.hpp"

namespace otd::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string scans;
  std::string poses;
  std::string labels;
  std::string calib;
  std::string out;
  std::optional<std::size_t> start;
  std::optional<std::size_t> end;
  bool gt_seg = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_out) {
  cmd->add_option("-c,--config", o.config_file, "JSON config file");
  cmd->add_option("--set", o.overrides, "Config override key=value (repeatable)");
  cmd->add_option("--scans", o.scans, "Directory of velodyne .bin scans");
  cmd->add_option("--poses", o.poses, "KITTI pose file");
  cmd->add_option("--labels", o.labels, "Directory of .label files");
  cmd->add_option("--calib", o.calib, "calib.txt; poses are converted to the LiDAR frame");
  cmd->add_option("--start", o.start, "First frame (inclusive)");
  cmd->add_option("--end", o.end, "Last frame (inclusive)");
  cmd->add_flag("--gt-seg", o.gt_seg, "Use ground classes from the labels instead of ground segmentation");
  if (with_out) cmd->add_option("-o,--out", o.out, "Output directory");
}

PipelineConfig resolve_config(const CommonOptions& o) {
  PipelineConfig cfg = o.config_file.empty() ? PipelineConfig{} : PipelineConfig::load(o.config_file);
  for (const auto& assignment : o.overrides) cfg.apply_override(assignment);
  if (!o.scans.empty()) cfg.scan_dir = o.scans;
  if (!o.poses.empty()) cfg.pose_file = o.poses;
  if (!o.labels.empty()) cfg.label_dir = o.labels;
  if (!o.calib.empty()) cfg.calib_file = o.calib;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.start) cfg.start_frame = o.start;
  if (o.end) cfg.end_frame = o.end;
  if (o.gt_seg) cfg.ground_truth_segmentation = true;
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* what) {
  if (value.empty()) throw UsageError(std::string("missing ") + what);
}

KittiSequence open_sequence(const PipelineConfig& cfg) {
  require(cfg.scan_dir, "--scans (or scan_dir)");
  require(cfg.pose_file, "--poses (or pose_file)");
  KittiSequence::Options opts;
  opts.scan_dir = cfg.scan_dir;
  opts.pose_file = cfg.pose_file;
  opts.label_dir = cfg.label_dir;
  opts.calib_file = cfg.calib_file;
  opts.start = cfg.start_frame;
  opts.end = cfg.end_frame;
  opts.range = cfg.range_filter();
  opts.ground_truth_segmentation = cfg.ground_truth_segmentation;
  return KittiSequence(opts);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

int cmd_run(const CommonOptions& o, bool debug_csv, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(o);
  require(cfg.output_dir, "--out (or output_dir)");
  const KittiSequence seq = open_sequence(cfg);

  std::ostringstream log;
  const RunResult result = run_sequence(seq, cfg.pipeline_params(), [&](const FrameReport& r) {
    log << r.to_log_line() << '\n';
  });

  // Outputs are written only once every frame went through.
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  const io::MapFormat format = cfg.map_format();
  const std::string ext(io::file_extension(format));
  const PointCloud static_map = result.state.export_static_map();
  io::write_map(dir / ("static_map" + ext), static_map, format);
  std::size_t dynamic_points = 0;
  if (cfg.write_dynamic_map) {
    const PointCloud dynamic_map = result.state.export_dynamic_map();
    dynamic_points = dynamic_map.size();
    io::write_map(dir / ("dynamic_map" + ext), dynamic_map, format);
  }
  write_text(dir / "config.json", cfg.to_json_text());
  write_text(dir / "frames.jsonl", log.str());
  if (debug_csv) {
    std::ostringstream csv;
    result.state.write_debug_csv(csv);
    write_text(dir / "voxels.csv", csv.str());
  }

  nlohmann::ordered_json summary;
  summary["frames"] = result.reports.size();
  summary["first_frame"] = seq.first();
  summary["last_frame"] = seq.last();
  summary["appeared_dynamic"] = result.appeared_total();
  summary["disappeared_dynamic"] = result.disappeared_total();
  summary["restored"] = result.restored_total();
  summary["ever_marked_voxels"] = result.ever_marked.size();
  summary["dynamic_voxels"] = result.state.dynamic.size();
  summary["static_map_points"] = static_map.size();
  summary["dynamic_map_points"] = dynamic_points;
  summary["dropped_nonfinite"] = seq.dropped_nonfinite();
  summary["mean_frame_ms"] = result.mean_frame_ms();
  write_text(dir / "summary.json", summary.dump(2) + "\n");

  char mean[32];
  std::snprintf(mean, sizeof(mean), "%.3f", result.mean_frame_ms());
  out << "frames: " << result.reports.size() << " [" << seq.first() << ", " << seq.last() << "]\n"
      << "voxels marked: " << result.appeared_total() << " appeared, " << result.disappeared_total()
      << " disappeared, " << result.restored_total() << " restored\n"
      << "dynamic voxels: " << result.state.dynamic.size() << '\n'
      << "static map points: " << static_map.size() << '\n'
      << "mean ms/frame: " << mean << '\n';
  return kExitOk;
}

int cmd_eval(const CommonOptions& o, const std::string& map_path, bool as_json, std::ostream& out) {
  const PipelineConfig cfg = resolve_config(o);
  require(cfg.label_dir, "--labels (or label_dir)");
  require(map_path, "--map");
  if (!fs::exists(map_path)) throw IoError("map not found: " + map_path);
  const KittiSequence seq = open_sequence(cfg);
  const eval::GroundTruth gt = eval::build_ground_truth(seq, cfg.moving_classes, cfg.eval_voxel_size);
  const PointCloud clean = io::read_map(map_path);
  const eval::EvalReport report = eval::score(clean, gt);
  out << report.table_row() << '\n';
  if (as_json) out << report.to_json() << '\n';
  return kExitOk;
}

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir, std::ostream& out) {
  require(scenario_path, "--scenario");
  require(out_dir, "--out");
  const sim::Scenario sc = sim::Scenario::load(scenario_path);
  const auto frames = sim::render_sequence(sc);
  sim::export_kitti(frames, sc, out_dir);
  std::size_t points = 0;
  for (const auto& f : frames) points += f.scan.size();
  out << "rendered " << frames.size() << " frames, " << points << " points -> " << out_dir << '\n';
  return kExitOk;
}

int cmd_bench(const CommonOptions& o, const std::string& scenario_path, const std::string& csv_path,
              std::ostream& out) {
  const PipelineConfig cfg = resolve_config(o);
  eval::BenchmarkTable table;
  if (!scenario_path.empty()) {
    const sim::Scenario sc = sim::Scenario::load(scenario_path);
    const auto frames = sim::render_sequence(sc);
    table = eval::benchmark(sim::to_sequence(frames), cfg.pipeline_params());
  } else {
    table = eval::benchmark(open_sequence(cfg), cfg.pipeline_params());
  }
  out << table.to_text();
  if (csv_path == "-") {
    table.write_csv(out);
  } else if (!csv_path.empty()) {
    std::ostringstream csv;
    table.write_csv(csv);
    write_text(csv_path, csv.str());
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic point removal by observation time difference", "otd"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  bool debug_csv = false;
  auto* run = app.add_subcommand("run", "Build a clean static map from a KITTI-layout sequence");
  add_common(run, run_opts, true);
  run->add_flag("--debug-csv", debug_csv, "Also write voxels.csv");

  CommonOptions eval_opts;
  std::string map_path;
  bool as_json = false;
  auto* ev = app.add_subcommand("eval", "Score a cleaned map against labeled scans");
  add_common(ev, eval_opts, false);
  ev->add_option("--map", map_path, "Cleaned map (PCD or PLY)");
  ev->add_flag("--json", as_json, "Also print the counts as JSON");

  std::string scenario_path;
  std::string sim_out;
  auto* simc = app.add_subcommand("simulate", "Render a scenario into KITTI files");
  simc->add_option("--scenario", scenario_path, "Scenario JSON file");
  simc->add_option("-o,--out", sim_out, "Output directory");

  CommonOptions bench_opts;
  std::string bench_scenario;
  std::string csv_path;
  auto* bench = app.add_subcommand("bench", "Per-phase timing table");
  add_common(bench, bench_opts, false);
  bench->add_option("--scenario", bench_scenario, "Benchmark a rendered scenario instead of files");
  bench->add_option("--csv", csv_path, "Write phase,mean_ms,median_ms,p95_ms CSV here ('-' for stdout)");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run->parsed()) return cmd_run(run_opts, debug_csv, out);
    if (ev->parsed()) return cmd_eval(eval_opts, map_path, as_json, out);
    if (simc->parsed()) return cmd_simulate(scenario_path, sim_out, out);
    if (bench->parsed()) return cmd_bench(bench_opts, bench_scenario, csv_path, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitContract;
  }
  return kExitUsage;
}

}  // namespace otd::cli
