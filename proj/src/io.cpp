// SPDX-License-Identifier: Apache-2.0

#include "otd/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "otd/error.hpp"

namespace otd {

void PointCloud::validate() const {
  if (!intensity.empty() && intensity.size() != points.size()) {
    throw ContractError("intensity count " + std::to_string(intensity.size()) + " != point count " +
                        std::to_string(points.size()));
  }
  if (!labels.empty() && labels.size() != points.size()) {
    throw ContractError("label count " + std::to_string(labels.size()) + " != point count " +
                        std::to_string(points.size()));
  }
}

void PointCloud::append_from(const PointCloud& src, std::size_t i) {
  points.push_back(src.points[i]);
  if (src.has_intensity()) intensity.push_back(src.intensity[i]);
  if (src.has_labels()) labels.push_back(src.labels[i]);
}

double Pose::orthonormality_error() const {
  const double gram = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return gram + std::abs(rotation.determinant() - 1.0);
}

void Pose::orthonormalize() {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d u = svd.matrixU();
    u.col(2) *= -1.0;
    r = u * svd.matrixV().transpose();
  }
  rotation = r;
}

namespace io {

namespace {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

std::ofstream open_for_write(const fs::path& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  return out;
}

void finish_write(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

template <typename T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void store_le(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

PointCloud decode_scan(const std::vector<char>& bytes, const fs::path& path) {
  constexpr std::size_t kRecord = 16;
  if (bytes.size() % kRecord != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kRecord;
    throw ParseError(path.string() + ": truncated record at byte offset " + std::to_string(offset) + " (file size " +
                     std::to_string(bytes.size()) + " is not a multiple of 16)");
  }
  const std::size_t n = bytes.size() / kRecord;
  PointCloud cloud;
  cloud.points.reserve(n);
  cloud.intensity.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const char* rec = bytes.data() + i * kRecord;
    const float x = load_le<float>(rec);
    const float y = load_le<float>(rec + 4);
    const float z = load_le<float>(rec + 8);
    const float w = load_le<float>(rec + 12);
    cloud.points.emplace_back(x, y, z);
    cloud.intensity.push_back(w);
  }
  return cloud;
}

std::size_t drop_nonfinite(PointCloud& cloud) {
  std::size_t kept = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!cloud.points[i].allFinite()) continue;
    cloud.points[kept] = cloud.points[i];
    if (cloud.has_intensity()) cloud.intensity[kept] = cloud.intensity[i];
    if (cloud.has_labels()) cloud.labels[kept] = cloud.labels[i];
    ++kept;
  }
  const std::size_t dropped = cloud.size() - kept;
  cloud.points.resize(kept);
  if (cloud.has_intensity()) cloud.intensity.resize(kept);
  if (cloud.has_labels()) cloud.labels.resize(kept);
  return dropped;
}

std::string format_double(double v) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string format_float(float v) {
  std::array<char, 32> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

bool parse_double(std::string_view tok, double& out) {
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

Pose pose_from_row_major(const std::array<double, 12>& v) {
  Pose pose;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) pose.rotation(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
    pose.translation(r) = v[static_cast<std::size_t>(r * 4 + 3)];
  }
  return pose;
}

}  // namespace

PointCloud read_scan(const fs::path& path, std::size_t* dropped_nonfinite) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  PointCloud cloud = decode_scan(read_file(path), path);
  const std::size_t dropped = drop_nonfinite(cloud);
  if (dropped_nonfinite) *dropped_nonfinite += dropped;
  return cloud;
}

void write_scan(const fs::path& path, const PointCloud& cloud) {
  cloud.validate();
  std::string buf;
  buf.reserve(cloud.size() * 16);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.points[i];
    store_le(buf, static_cast<float>(p.x()));
    store_le(buf, static_cast<float>(p.y()));
    store_le(buf, static_cast<float>(p.z()));
    store_le(buf, cloud.has_intensity() ? cloud.intensity[i] : 0.0f);
  }
  auto out = open_for_write(path, true);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish_write(out, path);
}

PointCloud read_labeled_scan(const fs::path& scan_path, const fs::path& label_path, std::size_t* dropped_nonfinite) {
  if (!fs::exists(scan_path)) throw IoError("file not found: " + scan_path.string());
  PointCloud cloud = decode_scan(read_file(scan_path), scan_path);
  std::vector<PointLabel> labels = read_labels(label_path);
  if (labels.size() != cloud.size()) {
    throw ContractError("length mismatch: " + label_path.string() + " has " + std::to_string(labels.size()) +
                        " labels but " + scan_path.string() + " has " + std::to_string(cloud.size()) + " points");
  }
  cloud.labels = std::move(labels);
  const std::size_t dropped = drop_nonfinite(cloud);
  if (dropped_nonfinite) *dropped_nonfinite += dropped;
  return cloud;
}

std::vector<Pose> read_poses(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file " + path.string());
  std::vector<Pose> poses;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != 12) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 12 numbers, found " +
                       std::to_string(tokens.size()));
    }
    std::array<double, 12> v{};
    for (std::size_t i = 0; i < 12; ++i) {
      if (!parse_double(tokens[i], v[i]) || !std::isfinite(v[i])) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + std::string(tokens[i]) +
                         "'");
      }
    }
    Pose pose = pose_from_row_major(v);
    if (!pose.is_orthonormal(1e-6)) pose.orthonormalize();
    poses.push_back(pose);
  }
  return poses;
}

void write_poses(const fs::path& path, std::span<const Pose> poses) {
  auto out = open_for_write(path, false);
  for (const Pose& pose : poses) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 4; ++c) {
        const double v = c < 3 ? pose.rotation(r, c) : pose.translation(r);
        if (r != 0 || c != 0) out << ' ';
        out << format_double(v);
      }
    }
    out << '\n';
  }
  finish_write(out, path);
}

std::vector<PointLabel> read_labels(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  const auto bytes = read_file(path);
  if (bytes.size() % 4 != 0) {
    throw ParseError(path.string() + ": truncated label file (size " + std::to_string(bytes.size()) +
                     " is not a multiple of 4)");
  }
  std::vector<PointLabel> labels(bytes.size() / 4);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = PointLabel::from_raw(load_le<std::uint32_t>(bytes.data() + 4 * i));
  }
  return labels;
}

void write_labels(const fs::path& path, std::span<const PointLabel> labels) {
  std::string buf;
  buf.reserve(labels.size() * 4);
  for (const PointLabel& l : labels) store_le(buf, l.raw());
  auto out = open_for_write(path, true);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  finish_write(out, path);
}

Pose read_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open calibration file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = split_ws(line);
    if (tokens.empty() || tokens.front() != "Tr:") continue;
    if (tokens.size() != 13) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": Tr entry needs 12 numbers");
    }
    std::array<double, 12> v{};
    for (std::size_t i = 0; i < 12; ++i) {
      if (!parse_double(tokens[i + 1], v[i])) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number");
      }
    }
    Pose tr = pose_from_row_major(v);
    if (!tr.is_orthonormal(1e-6)) tr.orthonormalize();
    return tr;
  }
  throw ParseError(path.string() + ": no 'Tr:' entry");
}

std::vector<Pose> to_lidar_frame(std::span<const Pose> camera_poses, const Pose& velo_to_cam) {
  const Pose cam_to_velo = velo_to_cam.inverse();
  std::vector<Pose> out;
  out.reserve(camera_poses.size());
  for (const Pose& p : camera_poses) out.push_back(cam_to_velo * p * velo_to_cam);
  return out;
}

std::vector<fs::path> list_scans(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("scan directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".bin") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

PointCloud filter_range(const PointCloud& cloud, const RangeFilter& filter) {
  cloud.validate();
  PointCloud out;
  out.reserve(cloud.size());
  const double lo2 = filter.min_range * filter.min_range;
  const double hi2 = filter.max_range * filter.max_range;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double r2 = cloud.points[i].squaredNorm();
    if (r2 < lo2 || r2 > hi2) continue;
    out.append_from(cloud, i);
  }
  return out;
}

PointCloud transform_to_world(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.points.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) out.points[i] = pose.apply(cloud.points[i]);
  out.intensity = cloud.intensity;
  out.labels = cloud.labels;
  return out;
}

MapFormat parse_map_format(std::string_view name) {
  if (name == "ascii-pcd") return MapFormat::kAsciiPcd;
  if (name == "binary-pcd") return MapFormat::kBinaryPcd;
  if (name == "ply") return MapFormat::kPly;
  throw ContractError("unknown map format '" + std::string(name) + "' (expected ascii-pcd, binary-pcd or ply)");
}

std::string_view to_string(MapFormat format) {
  switch (format) {
    case MapFormat::kAsciiPcd: return "ascii-pcd";
    case MapFormat::kBinaryPcd: return "binary-pcd";
    case MapFormat::kPly: return "ply";
  }
  return "?";
}

std::string_view file_extension(MapFormat format) { return format == MapFormat::kPly ? ".ply" : ".pcd"; }

void write_map(const fs::path& path, const PointCloud& cloud, MapFormat format) {
  const fs::path parent = path.parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw IoError("parent directory does not exist: " + parent.string());
  }
  const std::size_t n = cloud.size();
  std::string body;
  std::ostringstream header;
  if (format == MapFormat::kPly) {
    header << "ply\nformat binary_little_endian 1.0\nelement vertex " << n
           << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  } else {
    header << "# .PCD v0.7 - Point Cloud Data file format\n"
           << "VERSION 0.7\nFIELDS x y z\nSIZE 4 4 4\nTYPE F F F\nCOUNT 1 1 1\n"
           << "WIDTH " << n << "\nHEIGHT 1\nVIEWPOINT 0 0 0 1 0 0 0\nPOINTS " << n << "\nDATA "
           << (format == MapFormat::kAsciiPcd ? "ascii" : "binary") << "\n";
  }
  if (format == MapFormat::kAsciiPcd) {
    body.reserve(n * 30);
    for (const Vec3& p : cloud.points) {
      body += format_float(static_cast<float>(p.x()));
      body += ' ';
      body += format_float(static_cast<float>(p.y()));
      body += ' ';
      body += format_float(static_cast<float>(p.z()));
      body += '\n';
    }
  } else {
    body.reserve(n * 12);
    for (const Vec3& p : cloud.points) {
      store_le(body, static_cast<float>(p.x()));
      store_le(body, static_cast<float>(p.y()));
      store_le(body, static_cast<float>(p.z()));
    }
  }
  auto out = open_for_write(path, true);
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  finish_write(out, path);
}

namespace {

struct MapHeader {
  std::size_t points = 0;
  std::size_t fields = 3;
  bool binary = false;
  std::size_t data_offset = 0;
};

MapHeader parse_pcd_header(const std::vector<char>& bytes, const fs::path& path) {
  MapHeader h;
  std::size_t pos = 0;
  bool have_data = false;
  while (pos < bytes.size() && !have_data) {
    std::size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    const std::string_view line(bytes.data() + pos, end - pos);
    pos = end + 1;
    const auto tok = split_ws(line);
    if (tok.empty() || tok.front().starts_with("#")) continue;
    if (tok.front() == "FIELDS") {
      h.fields = tok.size() - 1;
      if (h.fields < 3 || tok[1] != "x" || tok[2] != "y" || tok[3] != "z") {
        throw ParseError(path.string() + ": PCD fields must start with x y z");
      }
    } else if (tok.front() == "TYPE") {
      for (std::size_t i = 1; i < tok.size(); ++i) {
        if (tok[i] != "F") throw ParseError(path.string() + ": only float PCD fields are supported");
      }
    } else if (tok.front() == "SIZE") {
      for (std::size_t i = 1; i < tok.size(); ++i) {
        if (tok[i] != "4") throw ParseError(path.string() + ": only 4-byte PCD fields are supported");
      }
    } else if (tok.front() == "POINTS" && tok.size() == 2) {
      h.points = std::stoull(std::string(tok[1]));
    } else if (tok.front() == "DATA" && tok.size() == 2) {
      if (tok[1] == "ascii") {
        h.binary = false;
      } else if (tok[1] == "binary") {
        h.binary = true;
      } else {
        throw ParseError(path.string() + ": unsupported PCD DATA " + std::string(tok[1]));
      }
      have_data = true;
    }
  }
  if (!have_data) throw ParseError(path.string() + ": PCD header has no DATA line");
  h.data_offset = pos;
  return h;
}

MapHeader parse_ply_header(const std::vector<char>& bytes, const fs::path& path) {
  MapHeader h;
  h.fields = 0;
  std::size_t pos = 0;
  bool done = false;
  bool in_vertex = false;
  while (pos < bytes.size() && !done) {
    std::size_t end = pos;
    while (end < bytes.size() && bytes[end] != '\n') ++end;
    const std::string_view line(bytes.data() + pos, end - pos);
    pos = end + 1;
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.front() == "format") {
      if (tok.size() < 2) throw ParseError(path.string() + ": bad PLY format line");
      if (tok[1] == "binary_little_endian") {
        h.binary = true;
      } else if (tok[1] == "ascii") {
        h.binary = false;
      } else {
        throw ParseError(path.string() + ": unsupported PLY format " + std::string(tok[1]));
      }
    } else if (tok.front() == "element" && tok.size() == 3) {
      in_vertex = tok[1] == "vertex";
      if (in_vertex) h.points = std::stoull(std::string(tok[2]));
    } else if (tok.front() == "property" && in_vertex) {
      if (tok.size() != 3 || tok[1] != "float") throw ParseError(path.string() + ": only float vertex properties");
      ++h.fields;
    } else if (tok.front() == "end_header") {
      done = true;
    }
  }
  if (!done || h.fields < 3) throw ParseError(path.string() + ": incomplete PLY header");
  h.data_offset = pos;
  return h;
}

PointCloud decode_body(const std::vector<char>& bytes, const MapHeader& h, const fs::path& path) {
  PointCloud cloud;
  cloud.points.reserve(h.points);
  if (h.binary) {
    const std::size_t stride = 4 * h.fields;
    if (bytes.size() < h.data_offset + stride * h.points) {
      throw ParseError(path.string() + ": binary body shorter than declared point count");
    }
    for (std::size_t i = 0; i < h.points; ++i) {
      const char* rec = bytes.data() + h.data_offset + i * stride;
      cloud.points.emplace_back(load_le<float>(rec), load_le<float>(rec + 4), load_le<float>(rec + 8));
    }
    return cloud;
  }
  const std::string_view body(bytes.data() + h.data_offset, bytes.size() - h.data_offset);
  std::size_t pos = 0;
  while (pos < body.size() && cloud.size() < h.points) {
    std::size_t end = body.find('\n', pos);
    if (end == std::string_view::npos) end = body.size();
    const auto tok = split_ws(body.substr(pos, end - pos));
    pos = end + 1;
    if (tok.empty()) continue;
    if (tok.size() < 3) throw ParseError(path.string() + ": short ascii record");
    float v[3];
    for (int k = 0; k < 3; ++k) {
      const auto res = std::from_chars(tok[static_cast<std::size_t>(k)].data(),
                                       tok[static_cast<std::size_t>(k)].data() + tok[static_cast<std::size_t>(k)].size(),
                                       v[k]);
      if (res.ec != std::errc()) throw ParseError(path.string() + ": bad ascii coordinate");
    }
    cloud.points.emplace_back(v[0], v[1], v[2]);
  }
  if (cloud.size() != h.points) throw ParseError(path.string() + ": ascii body shorter than declared point count");
  return cloud;
}

}  // namespace

PointCloud read_map(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("file not found: " + path.string());
  const auto bytes = read_file(path);
  const bool is_ply = bytes.size() >= 3 && std::string_view(bytes.data(), 3) == "ply";
  const MapHeader h = is_ply ? parse_ply_header(bytes, path) : parse_pcd_header(bytes, path);
  return decode_body(bytes, h, path);
}

}  // namespace io
}  // namespace otd
