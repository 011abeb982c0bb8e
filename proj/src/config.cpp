// SPDX-License-Identifier: Apache-2.0

#include "otd/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "otd/error.hpp"

namespace otd {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename Config, typename F>
void for_each_field(Config& c, F&& f) {
  f("scan_dir", c.scan_dir);
  f("pose_file", c.pose_file);
  f("label_dir", c.label_dir);
  f("calib_file", c.calib_file);
  f("output_dir", c.output_dir);
  f("start_frame", c.start_frame);
  f("end_frame", c.end_frame);
  f("voxel_size", c.voxel_size);
  f("max_points_per_voxel", c.max_points_per_voxel);
  f("tau_ret", c.tau_ret);
  f("tau_res", c.tau_res);
  f("vertical_range", c.vertical_range);
  f("min_range", c.min_range);
  f("max_range", c.max_range);
  f("rows", c.rows);
  f("cols", c.cols);
  f("fov_up_deg", c.fov_up_deg);
  f("fov_down_deg", c.fov_down_deg);
  f("angle_threshold_deg", c.angle_threshold_deg);
  f("sector_rows", c.sector_rows);
  f("sector_cols", c.sector_cols);
  f("sector_extent", c.sector_extent);
  f("seed_fraction", c.seed_fraction);
  f("pca_iterations", c.pca_iterations);
  f("plane_distance", c.plane_distance);
  f("min_sector_candidates", c.min_sector_candidates);
  f("ground_truth_segmentation", c.ground_truth_segmentation);
  f("eval_voxel_size", c.eval_voxel_size);
  f("moving_classes", c.moving_classes);
  f("output_format", c.output_format);
  f("write_dynamic_map", c.write_dynamic_map);
}

template <typename T>
void assign(const json& value, T& out, const std::string& key) {
  // json's get<int> silently truncates floats and wraps negatives; be strict instead.
  if constexpr (std::is_same_v<T, bool>) {
    if (!value.is_boolean()) throw ContractError("config key '" + key + "' must be a boolean");
    out = value.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!value.is_number_integer()) throw ContractError("config key '" + key + "' must be an integer");
    if (std::is_unsigned_v<T> && value.is_number_integer() && !value.is_number_unsigned() && value.get<long long>() < 0) {
      throw ContractError("config key '" + key + "' must be non-negative");
    }
    out = value.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!value.is_number()) throw ContractError("config key '" + key + "' must be a number");
    out = value.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!value.is_string()) throw ContractError("config key '" + key + "' must be a string");
    out = value.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::optional<std::size_t>>) {
    if (value.is_null()) {
      out.reset();
    } else {
      std::size_t v = 0;
      assign(value, v, key);
      out = v;
    }
  } else {
    if (!value.is_array()) throw ContractError("config key '" + key + "' must be an array");
    out.clear();
    for (const json& item : value) {
      if (!item.is_number_unsigned() || item.get<unsigned long long>() > 0xFFFF) {
        throw ContractError("config key '" + key + "' must hold integers in [0, 65535]");
      }
      out.push_back(item.get<std::uint16_t>());
    }
  }
}

void apply_json(PipelineConfig& c, const json& j) {
  if (!j.is_object()) throw ContractError("config must be a JSON object");
  std::set<std::string> known;
  for_each_field(c, [&](const char* name, auto&) { known.insert(name); });
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ContractError("unknown config key '" + key + "'");
  }
  for_each_field(c, [&](const char* name, auto& field) {
    if (j.contains(name)) assign(j.at(name), field, name);
  });
}

}  // namespace

PipelineConfig PipelineConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  apply_json(c, j);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string PipelineConfig::to_json_text() const {
  ordered_json j;
  for_each_field(*this, [&](const char* name, const auto& field) {
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_same_v<T, std::optional<std::size_t>>) {
      j[name] = field ? json(*field) : json(nullptr);
    } else {
      j[name] = field;
    }
  });
  return j.dump(2) + "\n";
}

void PipelineConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ContractError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  PipelineConfig next = *this;
  apply_json(next, json{{key, value}});
  next.validate();
  *this = std::move(next);
}

void PipelineConfig::validate() const {
  if (!(voxel_size > 0.0)) throw ContractError("voxel_size must be positive");
  if (!(eval_voxel_size > 0.0)) throw ContractError("eval_voxel_size must be positive");
  if (!(min_range >= 0.0) || !(max_range > min_range)) throw ContractError("need 0 <= min_range < max_range");
  if (start_frame && end_frame && *start_frame > *end_frame) throw ContractError("start_frame exceeds end_frame");
  io::parse_map_format(output_format);
  pipeline_params().frame.removal.validate();
  pipeline_params().frame.ground.validate();
}

PipelineParams PipelineConfig::pipeline_params() const {
  PipelineParams p;
  p.voxel_size = voxel_size;
  p.max_points_per_voxel = max_points_per_voxel;
  p.ground_truth_segmentation = ground_truth_segmentation;
  p.frame.removal.tau_ret = tau_ret;
  p.frame.removal.tau_res = tau_res;
  p.frame.removal.vertical_range = vertical_range;
  auto& g = p.frame.ground;
  g.rows = rows;
  g.cols = cols;
  g.fov_up_deg = fov_up_deg;
  g.fov_down_deg = fov_down_deg;
  g.angle_threshold_deg = angle_threshold_deg;
  g.sector_rows = sector_rows;
  g.sector_cols = sector_cols;
  g.sector_extent = sector_extent;
  g.seed_fraction = seed_fraction;
  g.pca_iterations = pca_iterations;
  g.plane_distance = plane_distance;
  g.min_sector_candidates = min_sector_candidates;
  return p;
}

io::RangeFilter PipelineConfig::range_filter() const { return {min_range, max_range}; }

io::MapFormat PipelineConfig::map_format() const { return io::parse_map_format(output_format); }

}  // namespace otd
