#include "activeview/voxel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <spdlog/spdlog.h>
#include <thread>

namespace av {

VoxelGrid::VoxelGrid(const Vec3& origin, double resolution, const std::array<int, 3>& dims)
    : origin_(origin), resolution_(resolution), dims_(dims) {
  if (!(resolution > 0.0)) throw GeometryError("voxel resolution must be positive");
  for (int d : dims) {
    if (d <= 0) throw GeometryError("voxel grid dims must be positive");
  }
  if (size() > kMaxVoxelCount) throw GeometryError("voxel grid exceeds 2^24 cells");
  occupancy_.assign(static_cast<size_t>(size()), 0);
}

VoxelGrid VoxelGrid::from_scene(const Scene& scene, double resolution) {
  const Vec3 extent = scene.room.size();
  std::array<int, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    dims[a] = std::max(1, static_cast<int>(std::ceil(extent[a] / resolution - 1e-9)));
  }
  VoxelGrid grid(scene.room.min, resolution, dims);
  const Aabb& room = scene.room;
  for (int k = 0; k < dims[2]; ++k) {
    for (int j = 0; j < dims[1]; ++j) {
      for (int i = 0; i < dims[0]; ++i) {
        const uint32_t idx = grid.linear_index(i, j, k);
        const Aabb cell = grid.cell_box(idx);
        bool occ = false;
        if (cell.overlaps(room)) {
          bool interior = true;
          for (int a = 0; a < 3; ++a) {
            if (!(cell.min[a] > room.min[a] && cell.max[a] < room.max[a])) interior = false;
          }
          occ = !interior;
        }
        for (const auto& o : scene.objects) {
          if (occ) break;
          occ = cell.overlaps(o.box);
        }
        grid.set_occupied(idx, occ);
      }
    }
  }
  return grid;
}

std::array<int, 3> VoxelGrid::cell_of(uint32_t idx) const {
  const int i = static_cast<int>(idx % static_cast<uint32_t>(dims_[0]));
  const uint32_t rest = idx / static_cast<uint32_t>(dims_[0]);
  const int j = static_cast<int>(rest % static_cast<uint32_t>(dims_[1]));
  const int k = static_cast<int>(rest / static_cast<uint32_t>(dims_[1]));
  return {i, j, k};
}

Vec3 VoxelGrid::center(uint32_t idx) const {
  const auto c = cell_of(idx);
  return origin_ + resolution_ * Vec3(c[0] + 0.5, c[1] + 0.5, c[2] + 0.5);
}

Aabb VoxelGrid::cell_box(uint32_t idx) const {
  const auto c = cell_of(idx);
  const Vec3 lo = origin_ + resolution_ * Vec3(c[0], c[1], c[2]);
  return {lo, lo + Vec3::Constant(resolution_)};
}

std::vector<uint32_t> VoxelGrid::occupied_indices() const {
  std::vector<uint32_t> out;
  for (size_t i = 0; i < occupancy_.size(); ++i) {
    if (occupancy_[i]) out.push_back(static_cast<uint32_t>(i));
  }
  return out;
}

uint64_t VoxelGrid::fingerprint() const {
  // FNV-1a over the geometry-defining fields.
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (int a = 0; a < 3; ++a) mix(std::bit_cast<uint64_t>(origin_[a]));
  mix(std::bit_cast<uint64_t>(resolution_));
  for (int d : dims_) mix(static_cast<uint64_t>(d));
  return h;
}

namespace {

bool voxel_visible(const VoxelGrid& grid, const Scene& scene, const CameraPose& g,
                   const Resolution& res, uint32_t idx) {
  const Vec3 c = grid.center(idx);
  if (!project_point(c, g, res).in_image()) return false;
  const Vec3 delta = c - g.t;
  const double dist = delta.norm();
  if (dist == 0.0) return true;
  const Vec3 dir = delta / dist;
  const auto hit = first_hit(scene, g.t, dir);
  if (!hit) return true;
  return hit->t >= dist - 0.5 * grid.resolution();
}

}  // namespace

VisibleVoxelSet visible_voxels(const VoxelGrid& grid, const Scene& scene, const CameraPose& g,
                               const Resolution& res, int workers) {
  VisibleVoxelSet out;
  out.grid_fingerprint = grid.fingerprint();
  const std::vector<uint32_t> candidates = grid.occupied_indices();
  const size_t n = candidates.size();
  std::vector<uint8_t> flags(n, 0);
  const int w = std::clamp(workers, 1, 64);
  auto run = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) flags[i] = voxel_visible(grid, scene, g, res, candidates[i]);
  };
  if (w == 1 || n < 1024) {
    run(0, n);
  } else {
    std::vector<std::jthread> pool;
    const size_t chunk = (n + w - 1) / w;
    for (int t = 0; t < w; ++t) {
      const size_t b = std::min(n, t * chunk);
      const size_t e = std::min(n, b + chunk);
      pool.emplace_back(run, b, e);
    }
  }
  for (size_t i = 0; i < n; ++i) {
    if (flags[i]) out.indices.push_back(candidates[i]);
  }
  return out;
}

double view_coverage_iou(const VisibleVoxelSet& a, const VisibleVoxelSet& b) {
  if (a.grid_fingerprint != b.grid_fingerprint) {
    throw GeometryError("view_coverage_iou: visible sets come from different grids");
  }
  if (a.empty() && b.empty()) {
    spdlog::debug("view_coverage_iou: both visible sets empty, defined as 1.0");
    return 1.0;
  }
  size_t inter = 0;
  size_t i = 0, j = 0;
  while (i < a.indices.size() && j < b.indices.size()) {
    if (a.indices[i] == b.indices[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a.indices[i] < b.indices[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace av
