#include "activeview/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace av {

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion quat_normalize(const Quaternion& q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw GeometryError("degenerate rotation: quaternion has zero norm");
  }
  Quaternion out{q.w / n, q.x / n, q.y / n, q.z / n};
  const std::array<double, 4> c{out.w, out.x, out.y, out.z};
  for (double v : c) {
    if (v == 0.0) continue;
    if (v < 0.0) out = {-out.w, -out.x, -out.y, -out.z};
    break;
  }
  // Signed zeros would break bitwise equality between equivalent results.
  out.w += 0.0;
  out.x += 0.0;
  out.y += 0.0;
  out.z += 0.0;
  return out;
}

Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Quaternion quat_conjugate(const Quaternion& q) { return {q.w, -q.x, -q.y, -q.z}; }

double quat_dot(const Quaternion& a, const Quaternion& b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

Quaternion quat_from_axis_angle(const Vec3& axis, double angle) {
  const Vec3 u = axis.normalized();
  const double s = std::sin(angle / 2.0);
  return quat_normalize({std::cos(angle / 2.0), u.x() * s, u.y() * s, u.z() * s});
}

Quaternion quat_from_matrix(const Mat3& r) {
  const Eigen::Quaterniond e(r);
  return quat_normalize({e.w(), e.x(), e.y(), e.z()});
}

Mat3 quat_to_matrix(const Quaternion& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

Vec3 quat_rotate(const Quaternion& q, const Vec3& v) { return quat_to_matrix(q) * v; }

double rotation_geodesic(const Quaternion& qa, const Quaternion& qb) {
  // Same angle as 2*acos(|<qa,qb>|), taken through atan2 of the relative
  // rotation so that identical inputs give exactly zero instead of the
  // sqrt(eps)-sized error acos has near 1. The vector part is written out so
  // that swapping the arguments only flips its sign bitwise.
  const double w = std::abs(quat_dot(qa, qb));
  const double x = (qa.w * qb.x - qb.w * qa.x) - (qa.y * qb.z - qa.z * qb.y);
  const double y = (qa.w * qb.y - qb.w * qa.y) - (qa.z * qb.x - qa.x * qb.z);
  const double z = (qa.w * qb.z - qb.w * qa.z) - (qa.x * qb.y - qa.y * qb.x);
  return 2.0 * std::atan2(std::sqrt(x * x + y * y + z * z), w);
}

double translation_error(const Vec3& ta, const Vec3& tb) { return (ta - tb).norm(); }

CameraPose CameraPose::identity(const Vec2& fov) {
  CameraPose g;
  g.fov = fov;
  return g;
}

CameraPose compose(const CameraPose& a, const CameraPose& b) {
  CameraPose out;
  out.q = quat_normalize(quat_multiply(a.q, b.q));
  out.t = quat_rotate(a.q, b.t) + a.t;
  out.fov = b.fov;
  return out;
}

CameraPose inverse(const CameraPose& g) {
  CameraPose out;
  out.q = quat_normalize(quat_conjugate(g.q));
  out.t = -quat_rotate(out.q, g.t);
  out.fov = g.fov;
  return out;
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec2& fov) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 up = Vec3::UnitZ();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) {
    // Looking straight up or down; any horizontal right vector works.
    up = Vec3::UnitX();
    right = forward.cross(up);
  }
  right.normalize();
  const Vec3 down = forward.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = forward;
  CameraPose g;
  g.q = quat_from_matrix(r);
  g.t = eye;
  g.fov = fov;
  return g;
}

std::vector<CameraPose> relative_to_start(std::span<const CameraPose> world_poses) {
  if (world_poses.empty()) throw GeometryError("relative_to_start: empty pose list");
  const CameraPose inv0 = inverse(world_poses.front());
  std::vector<CameraPose> out;
  out.reserve(world_poses.size());
  for (const auto& g : world_poses) out.push_back(compose(inv0, g));
  out.front().q = Quaternion::identity();
  out.front().t = Vec3::Zero();
  return out;
}

PoseEncoding encode_pose(const CameraPose& g) {
  return {g.q.w, g.q.x, g.q.y, g.q.z, g.t.x(), g.t.y(), g.t.z(), g.fov.x(), g.fov.y()};
}

DecodedPose decode_pose(std::span<const double, 9> v) {
  DecodedPose out;
  out.pose.q = quat_normalize({v[0], v[1], v[2], v[3]});
  out.pose.t = Vec3(v[4], v[5], v[6]);
  constexpr double kMinFov = 1e-3;
  constexpr double kMaxFov = std::numbers::pi - 1e-3;
  for (int i = 0; i < 2; ++i) {
    const double f = v[7 + i];
    double clamped = std::isfinite(f) ? std::clamp(f, kMinFov, kMaxFov) : 1.0;
    if (clamped != f) out.valid = false;
    out.pose.fov[i] = clamped;
  }
  return out;
}

Intrinsics intrinsics_for(const Vec2& fov, const Resolution& res) {
  Intrinsics k;
  k.fx = 0.5 * res.width / std::tan(0.5 * fov.x());
  k.fy = 0.5 * res.height / std::tan(0.5 * fov.y());
  k.cx = 0.5 * res.width;
  k.cy = 0.5 * res.height;
  return k;
}

Projection project_point(const Vec3& p, const CameraPose& g, const Resolution& res) {
  Projection out;
  const Vec3 pc = g.to_camera(p);
  out.depth = pc.z();
  if (!(pc.z() > 0.0)) {
    out.status = ProjectionStatus::kBehindCamera;
    return out;
  }
  const Intrinsics k = intrinsics_for(g.fov, res);
  out.pixel = Vec2(k.fx * pc.x() / pc.z() + k.cx, k.fy * pc.y() / pc.z() + k.cy);
  const bool inside = out.pixel.x() >= 0.0 && out.pixel.x() < res.width &&
                      out.pixel.y() >= 0.0 && out.pixel.y() < res.height;
  out.status = inside ? ProjectionStatus::kInImage : ProjectionStatus::kOutsideImage;
  return out;
}

Vec3 pixel_ray(double u, double v, const Intrinsics& k) {
  return Vec3((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
}

}  // namespace av
