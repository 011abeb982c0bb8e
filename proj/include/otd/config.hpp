// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "otd/io.hpp"
#include "otd/pipeline.hpp"

namespace otd {

/// Every tunable of the pipeline plus the input/output paths, read from a flat JSON object.
///
/// Unknown keys are rejected. `to_json_text` writes every field, so parsing the echo gives
/// back an equal config.
struct PipelineConfig {
  std::string scan_dir;
  std::string pose_file;
  std::string label_dir;
  std::string calib_file;
  std::string output_dir;
  std::optional<std::size_t> start_frame;
  std::optional<std::size_t> end_frame;

  double voxel_size = 0.2;
  std::size_t max_points_per_voxel = 0;
  int tau_ret = 7;
  int tau_res = 15;
  double vertical_range = 3.0;
  double min_range = 0.5;
  double max_range = 80.0;

  int rows = 64;
  int cols = 2048;
  double fov_up_deg = 2.0;
  double fov_down_deg = -24.8;
  double angle_threshold_deg = 10.0;
  int sector_rows = 4;
  int sector_cols = 4;
  double sector_extent = 160.0;
  double seed_fraction = 0.2;
  int pca_iterations = 3;
  double plane_distance = 0.25;
  int min_sector_candidates = 10;
  bool ground_truth_segmentation = false;

  double eval_voxel_size = 0.2;
  std::vector<std::uint16_t> moving_classes = {252, 253, 254, 255, 256, 257, 258, 259};

  std::string output_format = "binary-pcd";
  bool write_dynamic_map = true;

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;

  /// Throws ParseError for malformed JSON, ContractError for unknown keys, wrong types or
  /// out-of-range values.
  static PipelineConfig from_json_text(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;

  /// Applies "key=value"; the value is read as JSON, or as a bare string when that fails.
  void apply_override(const std::string& assignment);

  void validate() const;

  PipelineParams pipeline_params() const;
  io::RangeFilter range_filter() const;
  io::MapFormat map_format() const;
};

}  // namespace otd
