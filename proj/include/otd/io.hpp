// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "otd/types.hpp"

namespace otd::io {

namespace fs = std::filesystem;

/// Ingest range gate applied before segmentation. Points closer than
/// `min_range` (ego-vehicle returns) or farther than `max_range` are dropped.
struct RangeFilter {
  double min_range = 0.5;
  double max_range = 80.0;
};

/// Reads a KITTI velodyne scan: little-endian float32 quadruples (x, y, z, intensity).
/// Non-finite points are dropped; their number is added to `dropped_nonfinite` when given.
PointCloud read_scan(const fs::path& path, std::size_t* dropped_nonfinite = nullptr);
void write_scan(const fs::path& path, const PointCloud& cloud);

/// Reads a scan together with its SemanticKITTI label file. Lengths must match.
PointCloud read_labeled_scan(const fs::path& scan_path, const fs::path& label_path,
                             std::size_t* dropped_nonfinite = nullptr);

/// KITTI odometry poses: one row-major 3x4 matrix (12 numbers) per line.
std::vector<Pose> read_poses(const fs::path& path);
/// Shortest round-trip decimal representation, so read_poses(write_poses(x)) == x bit-exactly.
void write_poses(const fs::path& path, std::span<const Pose> poses);

/// SemanticKITTI labels: one little-endian uint32 per point.
std::vector<PointLabel> read_labels(const fs::path& path);
void write_labels(const fs::path& path, std::span<const PointLabel> labels);

/// Reads the `Tr:` (velodyne -> camera) entry of a KITTI calib.txt.
Pose read_calibration(const fs::path& path);

/// Converts camera-frame odometry poses to LiDAR-frame poses: Tr^-1 * P * Tr.
std::vector<Pose> to_lidar_frame(std::span<const Pose> camera_poses, const Pose& velo_to_cam);

/// Sorted list of `*.bin` files in a velodyne directory.
std::vector<fs::path> list_scans(const fs::path& dir);

PointCloud filter_range(const PointCloud& cloud, const RangeFilter& filter);

/// Maps every point through `pose`; intensity and labels are carried along.
PointCloud transform_to_world(const PointCloud& cloud, const Pose& pose);

enum class MapFormat { kAsciiPcd, kBinaryPcd, kPly };

MapFormat parse_map_format(std::string_view name);
std::string_view to_string(MapFormat format);
std::string_view file_extension(MapFormat format);

/// Writes x, y, z as float32. The parent directory must already exist.
void write_map(const fs::path& path, const PointCloud& cloud, MapFormat format);

/// Reads back any file produced by write_map (format detected from the header).
PointCloud read_map(const fs::path& path);

}  // namespace otd::io
