// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>
#include <json.hpp>

#include "otd/dynamic_removal.hpp"
#include "otd/error.hpp"
#include "otd/pipeline.hpp"
#include "otd/simulator.hpp"

namespace otd {
namespace {

Vec3 centre(const VoxelKey& k, double s = 0.2) { return Vec3((k.i + 0.5) * s, (k.j + 0.5) * s, (k.k + 0.5) * s); }

void observe(Submap& m, const VoxelKey& k, std::initializer_list<FrameIndex> frames) {
  for (FrameIndex f : frames) m.insert(k, centre(k), f);
}

void observe_range(Submap& m, const VoxelKey& k, FrameIndex first, FrameIndex last) {
  for (FrameIndex f = first; f <= last; ++f) m.insert(k, centre(k), f);
}

PointCloud cloud_at(std::initializer_list<VoxelKey> keys) {
  PointCloud c;
  for (const auto& k : keys) c.points.push_back(centre(k));
  return c;
}

std::set<VoxelKey> as_set(const std::vector<VoxelKey>& v) { return {v.begin(), v.end()}; }

const VoxelKey kObj{0, 0, 5};
const VoxelKey kGround{0, 0, 0};

TEST(Downward, LateObjectOverEarlyGroundIsMarked) {
  MapState s;
  observe(s.ground, kGround, {2});
  observe(s.nonground, kObj, {10});
  EXPECT_EQ(downward_retrieval(cloud_at({kObj}), s, {}), std::vector<VoxelKey>{kObj});
  EXPECT_TRUE(s.dynamic.contains(kObj));
  EXPECT_FALSE(s.nonground.contains(kObj));
}

TEST(Downward, StrictInequality) {
  MapState s;
  observe(s.ground, kGround, {3});
  observe(s.nonground, kObj, {10});  // difference exactly 7
  EXPECT_TRUE(downward_retrieval(cloud_at({kObj}), s, {}).empty());
}

TEST(Downward, SimultaneousAppearanceIsStatic) {
  MapState s;
  observe(s.ground, kGround, {0, 1, 2});
  observe(s.nonground, kObj, {0, 1, 2});
  EXPECT_TRUE(downward_retrieval(cloud_at({kObj}), s, {}).empty());
}

TEST(Downward, NoGroundBelowLeavesVoxel) {
  MapState s;
  observe(s.ground, kObj.offset_z(-16), {0});
  observe(s.nonground, kObj, {30});
  EXPECT_TRUE(downward_retrieval(cloud_at({kObj}), s, {}).empty());
  EXPECT_TRUE(s.nonground.contains(kObj));
}

TEST(Downward, UsesFirstGroundBelow) {
  MapState s;
  observe(s.ground, kObj.offset_z(-2), {9});   // first below, young
  observe(s.ground, kObj.offset_z(-6), {0});   // older, deeper
  observe(s.nonground, kObj, {12});
  EXPECT_TRUE(downward_retrieval(cloud_at({kObj}), s, {}).empty());
}

TEST(Downward, RestoredVoxelIsNotRetested) {
  MapState s;
  observe(s.ground, kGround, {0});
  observe(s.nonground, kObj, {20});
  s.nonground.find(kObj)->set_restored(true);
  EXPECT_TRUE(downward_retrieval(cloud_at({kObj}), s, {}).empty());
}

TEST(Upward, GroundOutlivesObject) {
  MapState s;
  observe(s.ground, kGround, {0, 30});
  observe(s.nonground, kObj, {0, 10});
  observe(s.nonground, kObj.offset_z(8), {0, 29});
  EXPECT_EQ(upward_retrieval(cloud_at({kGround}), s, {}), std::vector<VoxelKey>{kObj});
  EXPECT_TRUE(s.dynamic.contains(kObj));
  EXPECT_TRUE(s.nonground.contains(kObj.offset_z(8)));
}

TEST(Upward, StrictInequalityAndRange) {
  MapState s;
  observe(s.ground, kGround, {0, 17});
  observe(s.nonground, kGround.offset_z(3), {10});   // difference exactly 7
  observe(s.nonground, kGround.offset_z(16), {0});   // out of range
  EXPECT_TRUE(upward_retrieval(cloud_at({kGround}), s, {}).empty());
}

TEST(Upward, CoObservedObjectNeverMarked) {
  MapState s;
  for (FrameIndex f = 0; f < 50; ++f) {
    observe(s.ground, kGround, {f});
    observe(s.nonground, kObj, {f});
    ASSERT_TRUE(upward_retrieval(cloud_at({kGround}), s, {}).empty());
  }
}

TEST(Restoration, CountsWithinThresholdRestore) {
  MapState s;
  observe_range(s.ground, kGround, 0, 49);
  observe_range(s.dynamic, kObj, 10, 49);  // 40 vs 50
  const std::vector<VoxelKey> touched{kObj};
  EXPECT_EQ(static_restoration(s, touched, {}), touched);
  EXPECT_TRUE(s.nonground.contains(kObj));
  EXPECT_TRUE(s.nonground.find(kObj)->restored());
}

TEST(Restoration, LargeGapStaysDynamic) {
  MapState s;
  observe_range(s.ground, kGround, 0, 49);
  observe_range(s.dynamic, kObj, 47, 49);  // 3 vs 50
  const std::vector<VoxelKey> touched{kObj};
  EXPECT_TRUE(static_restoration(s, touched, {}).empty());
}

TEST(Restoration, StrictInequality) {
  MapState s;
  observe_range(s.ground, kGround, 0, 29);
  observe_range(s.dynamic, kObj, 15, 29);  // 15 vs 30
  const std::vector<VoxelKey> touched{kObj};
  EXPECT_TRUE(static_restoration(s, touched, {}).empty());
}

TEST(Restoration, AbsoluteDifference) {
  MapState s;
  observe_range(s.ground, kGround, 0, 9);
  observe_range(s.dynamic, kObj, 0, 19);  // dynamic observed more often than ground
  const std::vector<VoxelKey> touched{kObj};
  EXPECT_EQ(static_restoration(s, touched, {}), touched);
}

TEST(RemovalConfig, Validation) {
  RemovalConfig c;
  c.tau_ret = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.vertical_range = 0.0;
  EXPECT_THROW(c.validate(), ContractError);
}

// Brute-force downward and upward rules over the touched voxels of one frame, without MapState queries.
std::set<VoxelKey> brute_force_marks(const MapState& s, const std::set<VoxelKey>& touched_nonground,
                                     const std::set<VoxelKey>& touched_ground, const RemovalConfig& cfg) {
  std::set<VoxelKey> marked;
  const int steps = static_cast<int>(cfg.vertical_range / s.voxel_size() + 1e-9);
  for (const VoxelKey& k : touched_nonground) {
    const VoxelData* n = s.nonground.find(k);
    if (!n || n->restored()) continue;
    for (int d = 1; d <= steps; ++d) {
      const VoxelData* g = s.ground.find(k.offset_z(-d));
      if (!g) continue;
      if (static_cast<long>(n->min_frame()) - static_cast<long>(g->min_frame()) > cfg.tau_ret) marked.insert(k);
      break;
    }
  }
  for (const auto& [k, n] : s.nonground) {
    if (marked.contains(k)) continue;
    for (int d = 1; d <= steps; ++d) {
      const VoxelKey below = k.offset_z(-d);
      if (!touched_ground.contains(below)) continue;
      const VoxelData* g = s.ground.find(below);
      if (static_cast<long>(g->max_frame()) - static_cast<long>(n.max_frame()) > cfg.tau_ret) marked.insert(k);
    }
  }
  return marked;
}

struct RandomWorld {
  MapState state;
  std::set<VoxelKey> touched_nonground;
  std::set<VoxelKey> touched_ground;
  PointCloud nonground_cloud;
  PointCloud ground_cloud;
};

RandomWorld random_world(std::mt19937_64& rng, FrameIndex now) {
  RandomWorld w;
  std::uniform_int_distribution<int> xy(0, 14);
  std::uniform_int_distribution<int> z(-3, 20);
  auto random_frames = [&](Submap& m, const VoxelKey& k) {
    const auto a = static_cast<FrameIndex>(rng() % now);
    const auto b = static_cast<FrameIndex>(rng() % now);
    m.insert(k, centre(k), std::min(a, b));
    m.insert(k, centre(k), std::max(a, b));
  };
  for (int n = 0; n < 4000; ++n) {
    const VoxelKey k{xy(rng), xy(rng), z(rng)};
    if (rng() % 3 == 0) {
      random_frames(w.state.ground, k);
    } else if (!w.state.dynamic.contains(k)) {
      random_frames(w.state.nonground, k);
      if (rng() % 20 == 0) w.state.nonground.find(k)->set_restored(true);
    }
  }
  // The current frame touches some voxels.
  std::vector<VoxelKey> ng_keys, g_keys;
  for (const auto& [k, v] : w.state.nonground) ng_keys.push_back(k);
  for (const auto& [k, v] : w.state.ground) g_keys.push_back(k);
  std::sort(ng_keys.begin(), ng_keys.end());
  std::sort(g_keys.begin(), g_keys.end());
  for (const VoxelKey& k : ng_keys) {
    if (rng() % 4 != 0) continue;
    w.state.nonground.insert(k, centre(k), now);
    w.touched_nonground.insert(k);
    w.nonground_cloud.points.push_back(centre(k));
  }
  for (const VoxelKey& k : g_keys) {
    if (rng() % 4 != 0) continue;
    w.state.ground.insert(k, centre(k), now);
    w.touched_ground.insert(k);
    w.ground_cloud.points.push_back(centre(k));
    w.ground_cloud.points.push_back(centre(k));  // duplicates must not matter
  }
  return w;
}

TEST(Retrieval, MatchesExhaustiveOracleOnRandomMaps) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    RandomWorld w = random_world(rng, 60);
    ASSERT_LE(w.state.nonground.size() + w.state.ground.size(), 10000u);
    RemovalConfig cfg;
    cfg.tau_ret = 1 + static_cast<int>(rng() % 20);

    // Downward is judged first; upward sees the state after its moves, like the pipeline.
    MapState frozen = w.state;
    const auto down = as_set(downward_retrieval(w.nonground_cloud, w.state, cfg));
    std::set<VoxelKey> expected_down = brute_force_marks(frozen, w.touched_nonground, {}, cfg);
    EXPECT_EQ(down, expected_down);

    const MapState after_down = w.state;
    const auto up = as_set(upward_retrieval(w.ground_cloud, w.state, cfg));
    EXPECT_EQ(up, brute_force_marks(after_down, {}, w.touched_ground, cfg));

    for (const VoxelKey& k : up) EXPECT_FALSE(w.state.nonground.contains(k));
    for (const auto& [k, v] : w.state.nonground) EXPECT_FALSE(w.state.dynamic.contains(k));
  }
}

TEST(Retrieval, MarksNeedGroundContact) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 20; ++trial) {
    RandomWorld w = random_world(rng, 40);
    const MapState before = w.state;
    const auto down = downward_retrieval(w.nonground_cloud, w.state, {});
    const auto up = upward_retrieval(w.ground_cloud, w.state, {});
    for (const VoxelKey& k : down) EXPECT_TRUE(before.ground_voxel_below(k, 3.0));
    for (const VoxelKey& k : up) EXPECT_TRUE(before.ground_voxel_below(k, 3.0));
  }
}

TEST(Retrieval, RaisingTauRetShrinksMarks) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const RandomWorld w = random_world(rng, 80);
    std::set<VoxelKey> previous;
    bool first = true;
    for (int tau : {1, 3, 7, 15, 31}) {
      MapState s = w.state;
      RemovalConfig cfg;
      cfg.tau_ret = tau;
      std::set<VoxelKey> marks = as_set(downward_retrieval(w.nonground_cloud, s, cfg));
      for (const auto& k : upward_retrieval(w.ground_cloud, s, cfg)) marks.insert(k);
      if (!first) EXPECT_TRUE(std::includes(previous.begin(), previous.end(), marks.begin(), marks.end()));
      previous = marks;
      first = false;
    }
  }
}

TEST(ProcessFrame, RejectsNonIncreasingFrameWithoutMutation) {
  MapState s;
  PointCloud scan;
  scan.points = {Vec3(5, 0, -1.7), Vec3(5, 0, 0)};
  const std::vector<std::uint8_t> mask{1, 0};
  FrameConfig cfg;
  process_frame(scan, Pose::identity(), 3, s, cfg, mask);
  const std::size_t points = s.total_points();
  EXPECT_THROW(process_frame(scan, Pose::identity(), 3, s, cfg, mask), ContractError);
  EXPECT_THROW(process_frame(scan, Pose::identity(), 2, s, cfg, mask), ContractError);
  const std::vector<std::uint8_t> short_mask{1};
  EXPECT_THROW(process_frame(scan, Pose::identity(), 4, s, cfg, short_mask), ContractError);
  EXPECT_EQ(s.total_points(), points);
  EXPECT_EQ(s.last_frame, 3u);
}

TEST(ProcessFrame, PointsIntoDynamicVoxelAccrueThere) {
  MapState s;
  const VoxelKey k = s.key_of(Vec3(5.1, 0.1, 0.1));
  s.dynamic.insert(k, Vec3(5.1, 0.1, 0.1), 0);
  PointCloud scan;
  scan.points = {Vec3(5.1, 0.1, 0.1)};
  const std::vector<std::uint8_t> mask{0};
  process_frame(scan, Pose::identity(), 1, s, FrameConfig{}, mask);
  EXPECT_FALSE(s.nonground.contains(k));
  EXPECT_EQ(s.dynamic.find(k)->count(), 2u);
}

TEST(ProcessFrame, ReportsAndLogLine) {
  MapState s;
  PointCloud scan;
  scan.points = {Vec3(5.1, 0.1, -0.1), Vec3(5.1, 0.1, 0.5), Vec3(5.1, 0.1, 0.55)};
  const std::vector<std::uint8_t> mask{1, 0, 0};
  const FrameReport r = process_frame(scan, Pose::identity(), 0, s, FrameConfig{}, mask);
  EXPECT_EQ(r.points, 3u);
  EXPECT_EQ(r.ground_points, 1u);
  EXPECT_EQ(r.nonground_points, 2u);
  EXPECT_LE(r.timings.ground_segmentation_ms + r.timings.map_management_ms + r.timings.dynamic_removal_ms,
            r.timings.total_ms);
  const auto j = nlohmann::json::parse(r.to_log_line());
  EXPECT_EQ(j.at("frame"), 0);
  EXPECT_EQ(j.at("nonground_points"), 2);
  EXPECT_TRUE(j.contains("dynamic_removal_ms"));
}

sim::Scenario box_scene(int frames, int visible_from, int visible_to) {
  sim::Scenario sc;
  sc.frames = frames;
  sc.ground.height = -0.1;
  sc.sensor.cols = 1024;
  sc.sensor.max_range = 20.0;
  sim::DynamicObject box;
  box.size = Vec3(1.8, 1.8, 1.2);
  box.start = Vec3(5.1, -0.9, 0.3);
  box.visible_from = visible_from;
  box.visible_to = visible_to;
  sc.dynamic_objects = {box};
  return sc;
}

PipelineParams gt_params() {
  PipelineParams p;
  p.ground_truth_segmentation = true;
  return p;
}

TEST(Pipeline, StaticSceneNeverMarks) {
  sim::Scenario sc;
  sc.frames = 30;
  sc.sensor.cols = 512;
  sc.sensor.max_range = 20.0;
  sc.static_objects = {{{4.1, -1.1, -0.5}, {5.9, 1.1, 1.0}}};
  const auto frames = sim::render_sequence(sc);
  const RunResult run = run_sequence(sim::to_sequence(frames), gt_params());
  EXPECT_TRUE(run.ever_marked.empty());
}

TEST(Pipeline, AppearingObjectDynamicByFrame28) {
  const auto frames = sim::render_sequence(box_scene(29, 20, 28));
  std::vector<std::size_t> dynamic_after;
  const RunResult run = run_sequence(sim::to_sequence(frames), gt_params(), [&](const FrameReport& r) {
    dynamic_after.push_back(r.appeared_dynamic);
  });
  // Ground has been observed since frame 0, so the first sighting is already 20 frames late.
  for (int f = 0; f < 20; ++f) EXPECT_EQ(dynamic_after[static_cast<std::size_t>(f)], 0u) << f;
  EXPECT_GT(dynamic_after[20], 0u);
  EXPECT_EQ(run.state.nonground.size(), 0u);
  EXPECT_GT(run.state.dynamic.size(), 0u);
}

TEST(Pipeline, DepartingObjectMarkedOnceGapExceedsTau) {
  const auto frames = sim::render_sequence(box_scene(25, 0, 10));
  std::vector<std::size_t> disappeared;
  const RunResult run = run_sequence(sim::to_sequence(frames), gt_params(), [&](const FrameReport& r) {
    disappeared.push_back(r.disappeared_dynamic);
  });
  // Last sighting at 10: the gap first exceeds 7 at frame 18.
  for (int f = 0; f < 18; ++f) EXPECT_EQ(disappeared[static_cast<std::size_t>(f)], 0u) << f;
  EXPECT_GT(disappeared[18], 0u);
  EXPECT_EQ(run.state.nonground.size(), 0u);
}

TEST(Pipeline, InvariantsHoldAfterEveryFrame) {
  const auto frames = sim::render_sequence(box_scene(40, 5, 25));
  const InMemorySequence seq = sim::to_sequence(frames);
  MapState s;
  std::size_t inserted = 0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Frame f = seq.load(i);
    process_frame(f.scan, f.pose, f.index, s, FrameConfig{}, std::span<const std::uint8_t>(*f.ground_mask));
    inserted += f.scan.size();
    ASSERT_EQ(s.total_points(), inserted);
    for (const auto& [k, v] : s.nonground) ASSERT_FALSE(s.dynamic.contains(k));
    for (const SubmapKind kind : {SubmapKind::kGround, SubmapKind::kNonground, SubmapKind::kDynamic})
      for (const auto& [k, v] : s.submap(kind)) ASSERT_TRUE(v.stats_consistent());
  }
}

}  // namespace
}  // namespace otd
