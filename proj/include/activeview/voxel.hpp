#pragma once

// Voxelized scene content and the view-coverage metric built on top of it.

#include <array>
#include <cstdint>
#include <vector>

#include "activeview/geometry.hpp"
#include "activeview/scene.hpp"

namespace av {

inline constexpr double kDefaultVoxelResolution = 0.15;
inline constexpr int64_t kMaxVoxelCount = int64_t{1} << 24;

/// Regular grid anchored at the room's minimum corner. A cell is occupied when
/// it overlaps a solid object or contains part of the room shell; free space
/// is never occupied.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(const Vec3& origin, double resolution, const std::array<int, 3>& dims);

  static VoxelGrid from_scene(const Scene& scene, double resolution = kDefaultVoxelResolution);

  const Vec3& origin() const { return origin_; }
  double resolution() const { return resolution_; }
  const std::array<int, 3>& dims() const { return dims_; }
  int64_t size() const { return int64_t{dims_[0]} * dims_[1] * dims_[2]; }

  uint32_t linear_index(int i, int j, int k) const {
    return static_cast<uint32_t>((int64_t{k} * dims_[1] + j) * dims_[0] + i);
  }
  std::array<int, 3> cell_of(uint32_t idx) const;
  Vec3 center(uint32_t idx) const;
  Aabb cell_box(uint32_t idx) const;

  bool occupied(uint32_t idx) const { return occupancy_[idx] != 0; }
  void set_occupied(uint32_t idx, bool v) { occupancy_[idx] = v ? 1 : 0; }
  /// Sorted linear indices of all occupied cells.
  std::vector<uint32_t> occupied_indices() const;

  /// Stable identity of the grid geometry, used to reject cross-grid IoU.
  uint64_t fingerprint() const;

 private:
  Vec3 origin_ = Vec3::Zero();
  double resolution_ = kDefaultVoxelResolution;
  std::array<int, 3> dims_{0, 0, 0};
  std::vector<uint8_t> occupancy_;
};

struct VisibleVoxelSet {
  std::vector<uint32_t> indices;  // sorted, unique
  uint64_t grid_fingerprint = 0;

  size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

/// Occupied voxels whose center projects inside the image with positive depth
/// and whose center is not hidden behind a scene surface by more than half a
/// voxel edge. The result does not depend on `workers`.
VisibleVoxelSet visible_voxels(const VoxelGrid& grid, const Scene& scene, const CameraPose& g,
                               const Resolution& res, int workers = 1);

/// |a ∩ b| / |a ∪ b|; two empty sets count as identical (1.0).
double view_coverage_iou(const VisibleVoxelSet& a, const VisibleVoxelSet& b);

}  // namespace av
