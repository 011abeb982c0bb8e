// SPDX-License-Identifier: Apache-2.0

#include "otd/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Geometry>
#include <json.hpp>

#include "otd/error.hpp"
#include "otd/io.hpp"

namespace otd::sim {

namespace {

using nlohmann::json;

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Strict object reader: every key must be known, every value the right type.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where, std::vector<std::string>& errors)
      : j_(j), where_(std::move(where)), errors_(errors) {
    if (!j_.is_object()) {
      errors_.push_back(where_ + ": expected an object");
      return;
    }
  }

  ~ObjectReader() {
    if (!j_.is_object()) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) errors_.push_back(where_ + ": unknown key '" + key + "'");
    }
  }

  template <typename T>
  void read(const char* key, T& out, bool required = false) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) {
      if (required) errors_.push_back(where_ + ": missing key '" + key + "'");
      return;
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      errors_.push_back(where_ + "." + key + ": wrong type");
    }
  }

  void read_vec(const char* key, Vec3& out, bool required = false) {
    std::vector<double> v;
    read(key, v, required);
    if (!j_.is_object() || !j_.contains(key)) return;
    if (v.size() != 3) {
      errors_.push_back(where_ + "." + key + ": expected 3 numbers");
      return;
    }
    out = Vec3(v[0], v[1], v[2]);
  }

  const json* child(const char* key) {
    seen_.insert(key);
    if (!j_.is_object() || !j_.contains(key)) return nullptr;
    return &j_.at(key);
  }

 private:
  const json& j_;
  std::string where_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

std::optional<double> intersect(const Box& box, const Vec3& origin, const Vec3& dir, double max_t) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir(a)) < 1e-15) {
      if (origin(a) < box.min(a) || origin(a) > box.max(a)) return std::nullopt;
      continue;
    }
    double t1 = (box.min(a) - origin(a)) / dir(a);
    double t2 = (box.max(a) - origin(a)) / dir(a);
    if (t1 > t2) std::swap(t1, t2);
    t_near = std::max(t_near, t1);
    t_far = std::min(t_far, t2);
    if (t_near > t_far) return std::nullopt;
  }
  if (t_near <= 0.0 || t_near > max_t) return std::nullopt;
  return t_near;
}

double GroundPlane::z_at(double x, double y) const {
  const double s = std::tan(slope_deg * kDegToRad);
  const double dir = slope_direction_deg * kDegToRad;
  return height + s * (x * std::cos(dir) + y * std::sin(dir));
}

Vec3 GroundPlane::normal() const {
  const double s = std::tan(slope_deg * kDegToRad);
  const double dir = slope_direction_deg * kDegToRad;
  return Vec3(-s * std::cos(dir), -s * std::sin(dir), 1.0).normalized();
}

Vec3 DynamicObject::corner_at(int frame) const {
  if (waypoints.empty()) return start + velocity * static_cast<double>(frame);
  if (frame <= waypoints.front().frame) return waypoints.front().position;
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    const Waypoint& a = waypoints[i - 1];
    const Waypoint& b = waypoints[i];
    if (frame <= b.frame) {
      const double u = static_cast<double>(frame - a.frame) / static_cast<double>(b.frame - a.frame);
      return a.position + u * (b.position - a.position);
    }
  }
  return waypoints.back().position;
}

Box DynamicObject::box_at(int frame) const {
  const Vec3 c = corner_at(frame);
  return {c, c + size};
}

std::vector<std::string> Scenario::violations() const {
  std::vector<std::string> out;
  if (frames < 1) out.push_back("frames must be >= 1 (got " + std::to_string(frames) + ")");
  if (sensor.rows < 2 || sensor.cols < 2) out.push_back("sensor.rows and sensor.cols must be >= 2");
  if (!(sensor.fov_up_deg > sensor.fov_down_deg)) out.push_back("sensor.fov_up_deg must exceed sensor.fov_down_deg");
  if (sensor.fov_up_deg > 90.0 || sensor.fov_down_deg < -90.0) out.push_back("sensor FOV must lie within +-90 deg");
  if (!(sensor.max_range > 0.0)) out.push_back("sensor.max_range must be positive");
  if (!(sensor.height > 0.0)) out.push_back("sensor.height must be positive");
  if (!(noise_sigma >= 0.0)) out.push_back("noise_sigma must be >= 0");
  if (!(std::abs(ground.slope_deg) < 45.0)) out.push_back("ground.slope_deg must lie in (-45, 45)");
  for (std::size_t i = 0; i < static_objects.size(); ++i) {
    const Box& b = static_objects[i];
    if (!((b.max - b.min).array() > 0.0).all()) {
      out.push_back("static_objects[" + std::to_string(i) + "]: box must have positive extents");
    }
  }
  std::set<int> ids;
  for (std::size_t i = 0; i < dynamic_objects.size(); ++i) {
    const DynamicObject& o = dynamic_objects[i];
    const std::string where = "dynamic_objects[" + std::to_string(i) + "]";
    if (!(o.size.array() > 0.0).all()) out.push_back(where + ": size must be positive");
    if (o.id < 1 || o.id > 0xFFFF) out.push_back(where + ": id must lie in [1, 65535]");
    if (!ids.insert(o.id).second) out.push_back(where + ": duplicate id " + std::to_string(o.id));
    if (o.visible_from < 0 || o.visible_to >= frames || o.visible_from > o.visible_to) {
      out.push_back(where + ": visibility [" + std::to_string(o.visible_from) + ", " + std::to_string(o.visible_to) +
                    "] must lie within [0, frames)");
    }
    for (std::size_t w = 1; w < o.waypoints.size(); ++w) {
      if (o.waypoints[w].frame <= o.waypoints[w - 1].frame) {
        out.push_back(where + ": waypoint frames must increase");
        break;
      }
    }
  }
  return out;
}

Pose Scenario::sensor_pose(int frame) const {
  const double t = static_cast<double>(frame);
  const double x = sensor.start_x + sensor.velocity_x * t;
  const double y = sensor.start_y + sensor.velocity_y * t;
  const double yaw = (sensor.yaw_deg + sensor.yaw_rate_deg * t) * kDegToRad;
  Pose pose;
  pose.rotation = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  pose.translation = Vec3(x, y, ground.z_at(x, y) + sensor.height);
  return pose;
}

Scenario Scenario::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("scenario is not valid JSON: ") + e.what());
  }
  std::vector<std::string> errors;
  Scenario sc;
  {
    ObjectReader root(j, "scenario", errors);
    root.read("name", sc.name);
    root.read("frames", sc.frames, true);
    root.read("noise_sigma", sc.noise_sigma);
    root.read("seed", sc.seed);
    if (const json* g = root.child("ground")) {
      ObjectReader r(*g, "ground", errors);
      r.read("height", sc.ground.height);
      r.read("slope_deg", sc.ground.slope_deg);
      r.read("slope_direction_deg", sc.ground.slope_direction_deg);
    }
    if (const json* s = root.child("sensor")) {
      ObjectReader r(*s, "sensor", errors);
      r.read("rows", sc.sensor.rows);
      r.read("cols", sc.sensor.cols);
      r.read("fov_up_deg", sc.sensor.fov_up_deg);
      r.read("fov_down_deg", sc.sensor.fov_down_deg);
      r.read("max_range", sc.sensor.max_range);
      r.read("height", sc.sensor.height);
      std::vector<double> start{sc.sensor.start_x, sc.sensor.start_y};
      std::vector<double> vel{sc.sensor.velocity_x, sc.sensor.velocity_y};
      r.read("start", start);
      r.read("velocity", vel);
      if (start.size() != 2 || vel.size() != 2) {
        errors.push_back("sensor.start and sensor.velocity take 2 numbers (x, y)");
      } else {
        sc.sensor.start_x = start[0];
        sc.sensor.start_y = start[1];
        sc.sensor.velocity_x = vel[0];
        sc.sensor.velocity_y = vel[1];
      }
      r.read("yaw_deg", sc.sensor.yaw_deg);
      r.read("yaw_rate_deg", sc.sensor.yaw_rate_deg);
    }
    if (const json* list = root.child("static_objects")) {
      if (!list->is_array()) errors.push_back("static_objects: expected an array");
      for (std::size_t i = 0; list->is_array() && i < list->size(); ++i) {
        ObjectReader r((*list)[i], "static_objects[" + std::to_string(i) + "]", errors);
        Box b;
        r.read_vec("min", b.min, true);
        r.read_vec("max", b.max, true);
        sc.static_objects.push_back(b);
      }
    }
    if (const json* list = root.child("dynamic_objects")) {
      if (!list->is_array()) errors.push_back("dynamic_objects: expected an array");
      for (std::size_t i = 0; list->is_array() && i < list->size(); ++i) {
        const std::string where = "dynamic_objects[" + std::to_string(i) + "]";
        ObjectReader r((*list)[i], where, errors);
        DynamicObject o;
        o.id = static_cast<int>(i) + 1;
        r.read("id", o.id);
        r.read_vec("size", o.size, true);
        r.read_vec("start", o.start);
        r.read_vec("velocity", o.velocity);
        std::vector<int> visible;
        r.read("visible", visible, true);
        if (visible.size() == 2) {
          o.visible_from = visible[0];
          o.visible_to = visible[1];
        } else if (!visible.empty()) {
          errors.push_back(where + ".visible: expected [first_frame, last_frame]");
        }
        if (const json* wps = r.child("waypoints")) {
          for (std::size_t w = 0; wps->is_array() && w < wps->size(); ++w) {
            ObjectReader wr((*wps)[w], where + ".waypoints[" + std::to_string(w) + "]", errors);
            Waypoint wp;
            wr.read("frame", wp.frame, true);
            wr.read_vec("position", wp.position, true);
            o.waypoints.push_back(wp);
          }
        }
        sc.dynamic_objects.push_back(o);
      }
    }
  }
  for (auto& v : sc.violations()) errors.push_back(std::move(v));
  if (!errors.empty()) {
    std::string msg = "invalid scenario:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ContractError(msg);
  }
  return sc;
}

Scenario Scenario::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

std::string Scenario::to_json_text() const {
  nlohmann::ordered_json j;
  j["name"] = name;
  j["frames"] = frames;
  j["noise_sigma"] = noise_sigma;
  j["seed"] = seed;
  j["ground"] = {{"height", ground.height},
                 {"slope_deg", ground.slope_deg},
                 {"slope_direction_deg", ground.slope_direction_deg}};
  j["sensor"] = {{"rows", sensor.rows},
                 {"cols", sensor.cols},
                 {"fov_up_deg", sensor.fov_up_deg},
                 {"fov_down_deg", sensor.fov_down_deg},
                 {"max_range", sensor.max_range},
                 {"height", sensor.height},
                 {"start", {sensor.start_x, sensor.start_y}},
                 {"yaw_deg", sensor.yaw_deg},
                 {"velocity", {sensor.velocity_x, sensor.velocity_y}},
                 {"yaw_rate_deg", sensor.yaw_rate_deg}};
  j["static_objects"] = json::array();
  for (const Box& b : static_objects) j["static_objects"].push_back({{"min", vec_json(b.min)}, {"max", vec_json(b.max)}});
  j["dynamic_objects"] = json::array();
  for (const DynamicObject& o : dynamic_objects) {
    nlohmann::ordered_json d;
    d["id"] = o.id;
    d["size"] = vec_json(o.size);
    d["start"] = vec_json(o.start);
    d["velocity"] = vec_json(o.velocity);
    d["visible"] = {o.visible_from, o.visible_to};
    if (!o.waypoints.empty()) {
      d["waypoints"] = json::array();
      for (const Waypoint& w : o.waypoints) d["waypoints"].push_back({{"frame", w.frame}, {"position", vec_json(w.position)}});
    }
    j["dynamic_objects"].push_back(d);
  }
  return j.dump(2) + "\n";
}

LabeledFrame render_frame(const Scenario& sc, int frame) {
  LabeledFrame out;
  out.index = static_cast<FrameIndex>(frame);
  out.pose = sc.sensor_pose(frame);
  const Vec3 origin = out.pose.translation;

  struct Target {
    Box box;
    PointLabel label;
  };
  std::vector<Target> targets;
  for (const Box& b : sc.static_objects) targets.push_back({b, {kStaticClass, 0}});
  for (const DynamicObject& o : sc.dynamic_objects) {
    if (o.visible(frame)) targets.push_back({o.box_at(frame), {kDynamicClass, static_cast<std::uint16_t>(o.id)}});
  }

  const double s = std::tan(sc.ground.slope_deg * kDegToRad);
  const double sdir = sc.ground.slope_direction_deg * kDegToRad;
  const Vec3 plane_n(-s * std::cos(sdir), -s * std::sin(sdir), 1.0);
  const double plane_c = sc.ground.height;

  std::mt19937_64 rng(sc.seed * 1000003ULL + static_cast<std::uint64_t>(frame));
  std::normal_distribution<double> noise(0.0, sc.noise_sigma > 0.0 ? sc.noise_sigma : 1.0);

  const SensorSpec& sn = sc.sensor;
  const double down = sn.fov_down_deg * kDegToRad;
  const double elev_step = (sn.fov_up_deg - sn.fov_down_deg) * kDegToRad / sn.rows;
  const double az_step = 2.0 * std::numbers::pi / sn.cols;
  out.scan.points.reserve(static_cast<std::size_t>(sn.rows * sn.cols));
  out.scan.labels.reserve(static_cast<std::size_t>(sn.rows * sn.cols));
  out.scan.intensity.reserve(static_cast<std::size_t>(sn.rows * sn.cols));

  for (int r = 0; r < sn.rows; ++r) {
    const double e = down + (r + 0.5) * elev_step;
    for (int c = 0; c < sn.cols; ++c) {
      const double a = -std::numbers::pi + (c + 0.5) * az_step;
      const Vec3 d_sensor(std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e));
      const Vec3 d_world = out.pose.rotation * d_sensor;

      double best = sn.max_range;
      bool hit = false;
      PointLabel label{kGroundClass, 0};
      const double denom = plane_n.dot(d_world);
      if (denom < 0.0) {
        const double t = (plane_c - plane_n.dot(origin)) / denom;
        if (t > 0.0 && t <= best) {
          best = t;
          hit = true;
        }
      }
      for (const Target& tg : targets) {
        if (auto t = intersect(tg.box, origin, d_world, best); t && *t < best) {
          best = *t;
          label = tg.label;
          hit = true;
        }
      }
      if (!hit) continue;
      const double range = sc.noise_sigma > 0.0 ? best + noise(rng) : best;
      if (!(range > 0.0)) continue;
      out.scan.points.push_back(d_sensor * range);
      out.scan.labels.push_back(label);
      out.scan.intensity.push_back(0.0f);
    }
  }
  return out;
}

std::vector<LabeledFrame> render_sequence(const Scenario& sc) {
  if (auto v = sc.violations(); !v.empty()) {
    std::string msg = "invalid scenario:";
    for (const auto& e : v) msg += "\n  - " + e;
    throw ContractError(msg);
  }
  std::vector<LabeledFrame> frames;
  frames.reserve(static_cast<std::size_t>(sc.frames));
  for (int f = 0; f < sc.frames; ++f) frames.push_back(render_frame(sc, f));
  return frames;
}

InMemorySequence to_sequence(std::span<const LabeledFrame> frames) {
  InMemorySequence seq;
  for (const LabeledFrame& lf : frames) {
    Frame f;
    f.scan = lf.scan;
    f.pose = lf.pose;
    f.index = lf.index;
    f.ground_mask = ground_mask_from_labels(lf.scan);
    seq.push_back(std::move(f));
  }
  return seq;
}

void export_kitti(std::span<const LabeledFrame> frames, const Scenario& sc, const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "velodyne");
  fs::create_directories(out_dir / "labels");
  std::vector<Pose> poses;
  poses.reserve(frames.size());
  for (const LabeledFrame& f : frames) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06u", static_cast<unsigned>(f.index));
    io::write_scan(out_dir / "velodyne" / (std::string(name) + ".bin"), f.scan);
    io::write_labels(out_dir / "labels" / (std::string(name) + ".label"), f.scan.labels);
    poses.push_back(f.pose);
  }
  io::write_poses(out_dir / "poses.txt", poses);
  std::ofstream echo(out_dir / "scenario.json");
  if (!echo) throw IoError("cannot write " + (out_dir / "scenario.json").string());
  echo << sc.to_json_text();
}

}  // namespace otd::sim
