// SPDX-License-Identifier: Apache-2.0

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "otd/error.hpp"
#include "otd/io.hpp"
#include "test_util.hpp"

namespace otd {
namespace {

using test::TempDir;

// Little-endian float32 bytes, built without the reader's code path.
void push_f32(std::vector<std::uint8_t>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

Pose random_pose(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Pose pose;
  pose.rotation = Eigen::Quaterniond(n(rng), n(rng), n(rng), n(rng)).normalized().toRotationMatrix();
  pose.translation = Vec3(n(rng), n(rng), n(rng)) * 20.0;
  return pose;
}

TEST(ReadScan, DecodesHandBuiltRecords) {
  TempDir dir;
  std::vector<std::uint8_t> bytes;
  for (float v : {1.0f, 2.0f, 3.0f, 0.5f, 4.0f, 5.0f, 6.0f, 0.1f}) push_f32(bytes, v);
  test::write_bytes(dir / "a.bin", bytes);

  const PointCloud cloud = io::read_scan(dir / "a.bin");
  ASSERT_EQ(cloud.size(), 2u);
  EXPECT_EQ(cloud.points[0], Vec3(1, 2, 3));
  EXPECT_EQ(cloud.points[1], Vec3(4, 5, 6));
  EXPECT_FLOAT_EQ(cloud.intensity[0], 0.5f);
  EXPECT_FLOAT_EQ(cloud.intensity[1], 0.1f);
}

TEST(ReadScan, EmptyFileIsEmptyCloud) {
  TempDir dir;
  test::write_bytes(dir / "e.bin", {});
  EXPECT_TRUE(io::read_scan(dir / "e.bin").empty());
}

TEST(ReadScan, TruncatedRecordNamesOffset) {
  TempDir dir;
  std::vector<std::uint8_t> bytes;
  for (float v : {1.0f, 2.0f, 3.0f, 0.5f, 7.0f}) push_f32(bytes, v);
  test::write_bytes(dir / "t.bin", bytes);
  try {
    io::read_scan(dir / "t.bin");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("16"), std::string::npos) << e.what();
  }
}

TEST(ReadScan, MissingFileIsIoError) {
  TempDir dir;
  EXPECT_THROW(io::read_scan(dir / "nope.bin"), IoError);
}

TEST(ReadScan, DropsNonFinitePointsAndCounts) {
  TempDir dir;
  std::vector<std::uint8_t> bytes;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  for (float v : {1.0f, 1.0f, 1.0f, 0.0f, nan, 0.0f, 0.0f, 0.0f, 0.0f, inf, 0.0f, 0.0f, 2.0f, 2.0f, 2.0f, 0.0f})
    push_f32(bytes, v);
  test::write_bytes(dir / "n.bin", bytes);
  std::size_t dropped = 0;
  const PointCloud cloud = io::read_scan(dir / "n.bin", &dropped);
  EXPECT_EQ(cloud.size(), 2u);
  EXPECT_EQ(dropped, 2u);
}

TEST(ReadScan, WriteReadRoundTripIsBitExactForFloats) {
  TempDir dir;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-80.0f, 80.0f);
  PointCloud cloud;
  for (int i = 0; i < 500; ++i) {
    cloud.points.emplace_back(u(rng), u(rng), u(rng));
    cloud.intensity.push_back(u(rng));
  }
  io::write_scan(dir / "r.bin", cloud);
  EXPECT_EQ(std::filesystem::file_size(dir / "r.bin"), 500u * 16u);
  const PointCloud back = io::read_scan(dir / "r.bin");
  ASSERT_EQ(back.size(), cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    EXPECT_EQ(back.points[i], cloud.points[i]);
    EXPECT_EQ(back.intensity[i], cloud.intensity[i]);
  }
}

TEST(ReadLabels, DecodesSemanticAndInstance) {
  TempDir dir;
  std::vector<std::uint8_t> bytes;
  push_u32(bytes, 0x00000009u);
  push_u32(bytes, 0x000100FCu);
  test::write_bytes(dir / "l.label", bytes);
  const auto labels = io::read_labels(dir / "l.label");
  ASSERT_EQ(labels.size(), 2u);
  EXPECT_EQ(labels[0].semantic, 9);
  EXPECT_EQ(labels[0].instance, 0);
  EXPECT_EQ(labels[1].semantic, 252);
  EXPECT_EQ(labels[1].instance, 1);
}

TEST(ReadLabels, TruncatedIsParseError) {
  TempDir dir;
  test::write_bytes(dir / "l.label", {1, 2, 3, 4, 5, 6});
  EXPECT_THROW(io::read_labels(dir / "l.label"), ParseError);
}

TEST(ReadLabels, RoundTrip) {
  TempDir dir;
  const std::vector<PointLabel> labels{{40, 0}, {252, 7}, {0xFFFF, 0xFFFF}};
  io::write_labels(dir / "l.label", labels);
  EXPECT_EQ(io::read_labels(dir / "l.label"), labels);
}

TEST(ReadLabeledScan, LengthMismatchIsContractError) {
  TempDir dir;
  PointCloud cloud;
  cloud.points = {Vec3(1, 0, 0), Vec3(2, 0, 0)};
  io::write_scan(dir / "s.bin", cloud);
  io::write_labels(dir / "s.label", std::vector<PointLabel>{{40, 0}});
  EXPECT_THROW(io::read_labeled_scan(dir / "s.bin", dir / "s.label"), ContractError);
}

TEST(ReadPoses, IdentityAndTranslation) {
  TempDir dir;
  test::write_file(dir / "p.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 5 0 1 0 0 0 0 1 0\n");
  const auto poses = io::read_poses(dir / "p.txt");
  ASSERT_EQ(poses.size(), 2u);
  EXPECT_EQ(poses[0].rotation, Eigen::Matrix3d::Identity());
  EXPECT_EQ(poses[0].translation, Vec3::Zero());
  EXPECT_EQ(poses[1].rotation, Eigen::Matrix3d::Identity());
  EXPECT_EQ(poses[1].translation, Vec3(5, 0, 0));
}

TEST(ReadPoses, MalformedLineReportsLineNumber) {
  TempDir dir;
  test::write_file(dir / "p.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n");
  try {
    io::read_poses(dir / "p.txt");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  test::write_file(dir / "q.txt", "1 0 0 0 0 1 0 0 0 0 1 x\n");
  EXPECT_THROW(io::read_poses(dir / "q.txt"), ParseError);
}

TEST(ReadPoses, WriteReadRoundTripIsBitExact) {
  TempDir dir;
  std::mt19937_64 rng(2);
  std::vector<Pose> poses;
  for (int i = 0; i < 3; ++i) poses.push_back(random_pose(rng));
  io::write_poses(dir / "p.txt", poses);
  const auto back = io::read_poses(dir / "p.txt");
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].rotation, poses[i].rotation);
    EXPECT_EQ(back[i].translation, poses[i].translation);
  }
}

TEST(ReadPoses, DriftedRotationIsReorthonormalised) {
  TempDir dir;
  test::write_file(dir / "p.txt", "1.001 0 0 0 0 1 0.002 0 0 0 0.999 0\n");
  const auto poses = io::read_poses(dir / "p.txt");
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_TRUE(poses[0].is_orthonormal(1e-9));
  EXPECT_NEAR(poses[0].rotation.determinant(), 1.0, 1e-9);
}

TEST(Calibration, LidarFramePosesMatchMatrixProduct) {
  TempDir dir;
  test::write_file(dir / "calib.txt",
                   "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"
                   "Tr: 0 -1 0 0.1 0 0 -1 -0.05 1 0 0 -0.3\n");
  const Pose tr = io::read_calibration(dir / "calib.txt");
  std::mt19937_64 rng(3);
  const Pose cam = random_pose(rng);
  const Pose lidar = io::to_lidar_frame(std::vector<Pose>{cam}, tr)[0];

  auto homogeneous = [](const Pose& p) {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = p.rotation;
    m.topRightCorner<3, 1>() = p.translation;
    return m;
  };
  const Eigen::Matrix4d expected = homogeneous(tr).inverse() * homogeneous(cam) * homogeneous(tr);
  EXPECT_TRUE(homogeneous(lidar).isApprox(expected, 1e-12));
}

TEST(ListScans, SortedBinFilesOnly) {
  TempDir dir;
  for (const char* name : {"000002.bin", "000000.bin", "000001.bin", "notes.txt"}) test::write_file(dir / name, "");
  const auto files = io::list_scans(dir.path());
  ASSERT_EQ(files.size(), 3u);
  EXPECT_EQ(files[0].filename(), "000000.bin");
  EXPECT_EQ(files[2].filename(), "000002.bin");
}

TEST(FilterRange, DropsNearAndFarKeepsBounds) {
  PointCloud cloud;
  cloud.points = {Vec3(0.2, 0, 0), Vec3(0.5, 0, 0), Vec3(10, 0, 0), Vec3(80, 0, 0), Vec3(0, 80.5, 0)};
  cloud.labels = {{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}};
  const PointCloud out = io::filter_range(cloud, {});
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out.labels[0].semantic, 2);
  EXPECT_EQ(out.labels[2].semantic, 4);
}

TEST(TransformToWorld, IdentityAndTranslation) {
  PointCloud cloud;
  cloud.points = {Vec3(1, 0, 0)};
  cloud.labels = {{252, 3}};
  EXPECT_EQ(io::transform_to_world(cloud, Pose::identity()).points[0], Vec3(1, 0, 0));
  Pose up;
  up.translation = Vec3(0, 0, 5);
  const PointCloud moved = io::transform_to_world(cloud, up);
  EXPECT_EQ(moved.points[0], Vec3(1, 0, 5));
  EXPECT_EQ(moved.labels[0], (PointLabel{252, 3}));
}

TEST(TransformToWorld, IsAnIsometry) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int trial = 0; trial < 10; ++trial) {
    PointCloud cloud;
    for (int i = 0; i < 60; ++i) cloud.points.emplace_back(u(rng), u(rng), u(rng));
    const PointCloud w = io::transform_to_world(cloud, random_pose(rng));
    for (std::size_t a = 0; a < cloud.size(); ++a) {
      for (std::size_t b = a + 1; b < cloud.size(); ++b) {
        ASSERT_NEAR((w.points[a] - w.points[b]).norm(), (cloud.points[a] - cloud.points[b]).norm(), 1e-9);
      }
    }
  }
}

TEST(TransformToWorld, CompositionMatchesSequentialApplication) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  PointCloud cloud;
  for (int i = 0; i < 200; ++i) cloud.points.emplace_back(u(rng), u(rng), u(rng));
  const Pose p1 = random_pose(rng);
  const Pose p2 = random_pose(rng);
  const PointCloud once = io::transform_to_world(cloud, p2 * p1);
  const PointCloud twice = io::transform_to_world(io::transform_to_world(cloud, p1), p2);
  for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_LT((once.points[i] - twice.points[i]).norm(), 1e-9);
}

class MapFormats : public ::testing::TestWithParam<io::MapFormat> {};

TEST_P(MapFormats, RoundTripWithinFloatPrecision) {
  TempDir dir;
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud cloud;
  for (int i = 0; i < 10000; ++i) cloud.points.emplace_back(u(rng), u(rng), u(rng));
  const auto path = dir / ("m" + std::string(io::file_extension(GetParam())));
  io::write_map(path, cloud, GetParam());
  const PointCloud back = io::read_map(path);
  ASSERT_EQ(back.size(), cloud.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i) worst = std::max(worst, (back.points[i] - cloud.points[i]).cwiseAbs().maxCoeff());
  EXPECT_LE(worst, 1e-6);
}

TEST_P(MapFormats, EmptyCloudIsValidFile) {
  TempDir dir;
  const auto path = dir / "empty";
  io::write_map(path, PointCloud{}, GetParam());
  EXPECT_TRUE(io::read_map(path).empty());
}

TEST_P(MapFormats, MissingParentDirectoryIsIoError) {
  TempDir dir;
  EXPECT_THROW(io::write_map(dir / "no/such/dir/map", PointCloud{}, GetParam()), IoError);
}

INSTANTIATE_TEST_SUITE_P(All, MapFormats,
                         ::testing::Values(io::MapFormat::kAsciiPcd, io::MapFormat::kBinaryPcd, io::MapFormat::kPly));

TEST(WriteMap, AsciiPcdHeaderDeclaresPointCount) {
  TempDir dir;
  PointCloud cloud;
  cloud.points = {Vec3(1, 2, 3), Vec3(4, 5, 6)};
  io::write_map(dir / "a.pcd", cloud, io::MapFormat::kAsciiPcd);
  const std::string text = test::read_file(dir / "a.pcd");
  EXPECT_NE(text.find("POINTS 2\n"), std::string::npos);
  EXPECT_NE(text.find("WIDTH 2\n"), std::string::npos);
  EXPECT_NE(text.find("DATA ascii\n"), std::string::npos);
}

TEST(MapFormat, ParsesNamesAndRejectsUnknown) {
  EXPECT_EQ(io::parse_map_format("ply"), io::MapFormat::kPly);
  EXPECT_EQ(io::parse_map_format("ascii-pcd"), io::MapFormat::kAsciiPcd);
  EXPECT_THROW(io::parse_map_format("las"), ContractError);
}

TEST(PointCloudValidate, LabelCountMustMatch) {
  PointCloud cloud;
  cloud.points = {Vec3(1, 0, 0)};
  cloud.labels = {{1, 0}, {2, 0}};
  EXPECT_THROW(cloud.validate(), ContractError);
}

}  // namespace
}  // namespace otd
