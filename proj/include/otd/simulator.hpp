// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "otd/pipeline.hpp"
#include "otd/types.hpp"

namespace otd::sim {

/// Semantic classes written for simulated points.
inline constexpr std::uint16_t kGroundClass = 40;   // road
inline constexpr std::uint16_t kStaticClass = 50;   // building
inline constexpr std::uint16_t kDynamicClass = 252; // moving-car

struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p, double tol = 0.0) const {
    return (p.array() >= min.array() - tol).all() && (p.array() <= max.array() + tol).all();
  }
};

/// Ray/box slab test. Returns the entry distance along `dir` when it lies in (0, max_t].
std::optional<double> intersect(const Box& box, const Vec3& origin, const Vec3& dir, double max_t);

/// z = height + tan(slope) * (x cos(direction) + y sin(direction))
struct GroundPlane {
  double height = 0.0;
  double slope_deg = 0.0;
  double slope_direction_deg = 0.0;

  double z_at(double x, double y) const;
  /// Upward unit normal.
  Vec3 normal() const;
};

struct Waypoint {
  int frame = 0;
  Vec3 position = Vec3::Zero();
};

/// Box of fixed size whose min corner follows a trajectory; it only exists for frames in
/// [visible_from, visible_to].
struct DynamicObject {
  int id = 1;
  Vec3 size = Vec3::Ones();
  Vec3 start = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  /// Piecewise-linear trajectory of the min corner; overrides start/velocity when non-empty.
  std::vector<Waypoint> waypoints;
  int visible_from = 0;
  int visible_to = 0;

  bool visible(int frame) const { return frame >= visible_from && frame <= visible_to; }
  Vec3 corner_at(int frame) const;
  Box box_at(int frame) const;
};

struct SensorSpec {
  int rows = 64;
  int cols = 1024;
  double fov_up_deg = 2.0;
  double fov_down_deg = -24.8;
  double max_range = 50.0;
  /// Mounting height above the ground plane.
  double height = 1.73;
  double start_x = 0.0;
  double start_y = 0.0;
  double yaw_deg = 0.0;
  double velocity_x = 0.0;
  double velocity_y = 0.0;
  double yaw_rate_deg = 0.0;
};

struct Scenario {
  std::string name;
  int frames = 0;
  GroundPlane ground;
  SensorSpec sensor;
  std::vector<Box> static_objects;
  std::vector<DynamicObject> dynamic_objects;
  double noise_sigma = 0.0;
  std::uint64_t seed = 1;

  /// Human-readable schema violations; empty when the scenario is valid.
  std::vector<std::string> violations() const;

  Pose sensor_pose(int frame) const;

  /// Parses the JSON scenario format. Throws ParseError on syntax/type errors and
  /// ContractError (listing every violation) when the content is invalid.
  static Scenario from_json_text(const std::string& text);
  static Scenario load(const std::filesystem::path& path);
  std::string to_json_text() const;
};

struct LabeledFrame {
  /// Sensor-frame points; labels hold semantic class and object id (instance).
  PointCloud scan;
  Pose pose;
  FrameIndex index = 0;
};

std::vector<LabeledFrame> render_sequence(const Scenario& sc);
LabeledFrame render_frame(const Scenario& sc, int frame);

/// Wraps rendered frames as a pipeline sequence, with ground masks taken from the labels.
InMemorySequence to_sequence(std::span<const LabeledFrame> frames);

/// Writes velodyne/NNNNNN.bin, labels/NNNNNN.label, poses.txt and scenario.json.
void export_kitti(std::span<const LabeledFrame> frames, const Scenario& sc, const std::filesystem::path& out_dir);

}  // namespace otd::sim
