#pragma once

// Brute-force visibility reference used only by tests. It shares no code with
// the slab-test implementation: projection goes through Eigen's quaternion,
// and occlusion is a stepped march along each ray with separating-axis
// segment/box tests.

#include <vector>

#include "activeview/voxel.hpp"

namespace av::oracle {

std::vector<uint32_t> visible_voxels_bruteforce(const VoxelGrid& grid, const Scene& scene,
                                                const CameraPose& g, const Resolution& res,
                                                int steps_per_voxel = 4);

double iou_bruteforce(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b);

}  // namespace av::oracle
