#pragma once

// Pose algebra and pinhole projection shared by every other module.
//
// Conventions: camera frame is x right, y down, z forward. A CameraPose maps
// camera coordinates into the reference frame (p_ref = R(q) * p_cam + t), so t
// is the camera center. Pixel coordinates are continuous with (0,0) at the
// top-left corner of the image; the center of pixel (i, j) is (i+0.5, j+0.5).

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace av {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }
  double norm() const;
  friend bool operator==(const Quaternion&, const Quaternion&) = default;
};

/// Unit norm with sign canonicalized: w >= 0, ties broken by the first nonzero
/// component being positive. Throws GeometryError on a zero-norm input.
Quaternion quat_normalize(const Quaternion& q);
Quaternion quat_multiply(const Quaternion& a, const Quaternion& b);
Quaternion quat_conjugate(const Quaternion& q);
double quat_dot(const Quaternion& a, const Quaternion& b);
Quaternion quat_from_axis_angle(const Vec3& axis, double angle);
Quaternion quat_from_matrix(const Mat3& r);
Mat3 quat_to_matrix(const Quaternion& q);
Vec3 quat_rotate(const Quaternion& q, const Vec3& v);

/// Angular distance on SO(3), 2*acos(|<qa,qb>|), in [0, pi].
double rotation_geodesic(const Quaternion& qa, const Quaternion& qb);
double translation_error(const Vec3& ta, const Vec3& tb);

struct CameraPose {
  Quaternion q;
  Vec3 t = Vec3::Zero();
  Vec2 fov = Vec2::Constant(1.2217304763960306);  // 70 degrees

  static CameraPose identity(const Vec2& fov);
  Mat3 rotation() const { return quat_to_matrix(q); }
  Vec3 forward() const { return rotation().col(2); }
  /// Camera-frame point into the reference frame.
  Vec3 to_reference(const Vec3& p_cam) const { return rotation() * p_cam + t; }
  Vec3 to_camera(const Vec3& p_ref) const { return rotation().transpose() * (p_ref - t); }
};

/// a * b: apply b first, then a. Field of view is taken from b.
CameraPose compose(const CameraPose& a, const CameraPose& b);
CameraPose inverse(const CameraPose& g);

/// Camera at `eye` looking at `target` with zero roll about the world z axis.
CameraPose look_at(const Vec3& eye, const Vec3& target, const Vec2& fov);

/// Re-express world poses relative to the first one. Throws on empty input.
std::vector<CameraPose> relative_to_start(std::span<const CameraPose> world_poses);

/// Layout [qw, qx, qy, qz, tx, ty, tz, fov_h, fov_v].
using PoseEncoding = std::array<double, 9>;

struct DecodedPose {
  CameraPose pose;
  bool valid = true;  // false when the field of view had to be clamped
};

PoseEncoding encode_pose(const CameraPose& g);
/// Normalizes the quaternion block and clamps the field of view into (0, pi).
/// Throws GeometryError when the quaternion block is zero.
DecodedPose decode_pose(std::span<const double, 9> v);

struct Resolution {
  int width = 64;
  int height = 64;
  friend bool operator==(const Resolution&, const Resolution&) = default;
};

struct Intrinsics {
  double fx, fy, cx, cy;
};

Intrinsics intrinsics_for(const Vec2& fov, const Resolution& res);

enum class ProjectionStatus { kInImage, kBehindCamera, kOutsideImage };

struct Projection {
  ProjectionStatus status = ProjectionStatus::kBehindCamera;
  Vec2 pixel = Vec2::Zero();  // meaningful unless behind the camera
  double depth = 0.0;         // camera-frame z

  bool in_image() const { return status == ProjectionStatus::kInImage; }
};

Projection project_point(const Vec3& p, const CameraPose& g, const Resolution& res);

/// Unit-depth camera-frame ray through continuous pixel coordinate (u, v).
Vec3 pixel_ray(double u, double v, const Intrinsics& k);

}  // namespace av
