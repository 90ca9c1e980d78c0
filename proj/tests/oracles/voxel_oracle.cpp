#include "voxel_oracle.hpp"

#include <cmath>
#include <set>

namespace av::oracle {

namespace {

// Closed segment [p0, p1] against closed box, separating axis theorem.
bool segment_touches_box(const Vec3& p0, const Vec3& p1, const Aabb& box) {
  const Vec3 c = box.center();
  const Vec3 e = 0.5 * box.size();
  const Vec3 m = 0.5 * (p0 + p1) - c;
  const Vec3 h = 0.5 * (p1 - p0);
  const Vec3 ah = h.cwiseAbs();
  for (int i = 0; i < 3; ++i) {
    if (std::abs(m[i]) > e[i] + ah[i]) return false;
  }
  const Vec3 cr = m.cross(h);
  if (std::abs(cr.x()) > e.y() * ah.z() + e.z() * ah.y()) return false;
  if (std::abs(cr.y()) > e.x() * ah.z() + e.z() * ah.x()) return false;
  if (std::abs(cr.z()) > e.x() * ah.y() + e.y() * ah.x()) return false;
  return true;
}

bool inside_closed(const Vec3& p, const Aabb& b) {
  for (int a = 0; a < 3; ++a) {
    if (p[a] < b.min[a] || p[a] > b.max[a]) return false;
  }
  return true;
}

}  // namespace

std::vector<uint32_t> visible_voxels_bruteforce(const VoxelGrid& grid, const Scene& scene,
                                                const CameraPose& g, const Resolution& res,
                                                int steps_per_voxel) {
  const Eigen::Quaterniond rot(g.q.w, g.q.x, g.q.y, g.q.z);
  const double fx = res.width / (2.0 * std::tan(g.fov.x() / 2.0));
  const double fy = res.height / (2.0 * std::tan(g.fov.y() / 2.0));
  const double step = grid.resolution() / steps_per_voxel;
  const double tol = grid.resolution() / 2.0;

  std::vector<uint32_t> out;
  for (uint32_t idx = 0; idx < static_cast<uint32_t>(grid.size()); ++idx) {
    if (!grid.occupied(idx)) continue;
    const Vec3 c = grid.center(idx);
    const Vec3 pc = rot.conjugate() * (c - g.t);
    if (pc.z() <= 0.0) continue;
    const double u = fx * pc.x() / pc.z() + res.width / 2.0;
    const double v = fy * pc.y() / pc.z() + res.height / 2.0;
    if (u < 0.0 || u >= res.width || v < 0.0 || v >= res.height) continue;

    const double dist = (c - g.t).norm();
    const double limit = dist - tol;
    bool blocked = false;
    if (limit > 0.0) {
      const Vec3 dir = (c - g.t) / dist;
      // March: each step checks the segment it sweeps and its end sample.
      for (double s0 = 0.0; s0 < limit && !blocked; s0 += step) {
        const double s1 = std::min(limit, s0 + step);
        const Vec3 a = g.t + s0 * dir;
        const Vec3 b = g.t + s1 * dir;
        if (!inside_closed(b, scene.room)) blocked = true;
        for (const auto& o : scene.objects) {
          if (blocked) break;
          blocked = segment_touches_box(a, b, o.box);
        }
      }
    }
    if (!blocked) out.push_back(idx);
  }
  return out;
}

double iou_bruteforce(const std::vector<uint32_t>& a, const std::vector<uint32_t>& b) {
  const std::set<uint32_t> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::set<uint32_t> uni = sa;
  uni.insert(sb.begin(), sb.end());
  if (uni.empty()) return 1.0;
  size_t inter = 0;
  for (uint32_t x : sa) inter += sb.count(x);
  return static_cast<double>(inter) / static_cast<double>(uni.size());
}

}  // namespace av::oracle
