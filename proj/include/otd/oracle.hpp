// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <set>
#include <vector>

#include "otd/pipeline.hpp"
#include "otd/voxel_map.hpp"

namespace otd::sim {

/// Reference classification computed with ordered containers and a brute-force column
/// search. Slow, but shares no map code with the online pipeline.
struct OracleResult {
  std::map<VoxelKey, VoxelClass> classes;
  std::vector<std::set<VoxelKey>> marked_per_frame;
  std::vector<std::set<VoxelKey>> restored_per_frame;
  std::set<VoxelKey> ever_marked;
};

OracleResult oracle_classify(const Sequence& seq, const PipelineParams& params);

}  // namespace otd::sim
