#include <doctest.h>

#include <cmath>
#include <numbers>

#include "activeview/geometry.hpp"
#include "test_util.hpp"

using namespace av;
using av::testing::random_pose;
using av::testing::random_quat;

namespace {

constexpr double kPi = std::numbers::pi;

bool same_quat(const Quaternion& a, const Quaternion& b, double tol) {
  return std::abs(a.w - b.w) <= tol && std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol &&
         std::abs(a.z - b.z) <= tol;
}

}  // namespace

TEST_CASE("quat_normalize canonical forms") {
  CHECK(quat_normalize({1, 0, 0, 0}) == Quaternion{1, 0, 0, 0});
  CHECK(quat_normalize({-1, 0, 0, 0}) == Quaternion{1, 0, 0, 0});
  CHECK(quat_normalize({2, 0, 0, 0}) == Quaternion{1, 0, 0, 0});
  // w == 0: first nonzero component decides the sign.
  const Quaternion q = quat_normalize({0, 0, -3, 4});
  CHECK(q.y == doctest::Approx(0.6));
  CHECK(q.z == doctest::Approx(-0.8));
  CHECK_THROWS_AS(quat_normalize({0, 0, 0, 0}), GeometryError);
}

TEST_CASE("quat_normalize output is unit with w >= 0") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 5.0);
  for (int i = 0; i < 500; ++i) {
    const Quaternion q = quat_normalize({n(rng), n(rng), n(rng), n(rng)});
    CHECK(std::abs(q.norm() - 1.0) <= 1e-12);
    CHECK(q.w >= 0.0);
  }
}

TEST_CASE("rotation_geodesic reference values") {
  const Quaternion id;
  const Quaternion z180 = quat_from_axis_angle(Vec3::UnitZ(), kPi);
  const Quaternion z90 = quat_from_axis_angle(Vec3::UnitZ(), kPi / 2);
  CHECK(rotation_geodesic(id, id) == 0.0);
  CHECK(std::abs(rotation_geodesic(id, z180) - kPi) <= 1e-12);
  CHECK(std::abs(rotation_geodesic(id, z90) - kPi / 2) <= 1e-12);
  // Double cover: q and -q are the same rotation.
  const Quaternion neg{-z90.w, -z90.x, -z90.y, -z90.z};
  CHECK(std::abs(rotation_geodesic(z90, neg)) <= 1e-7);
}

TEST_CASE("rotation_geodesic is a metric on random triples") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const Quaternion a = random_quat(rng), b = random_quat(rng), c = random_quat(rng);
    const double ab = rotation_geodesic(a, b);
    CHECK(ab == rotation_geodesic(b, a));
    CHECK(ab >= 0.0);
    CHECK(ab <= kPi);
    CHECK(ab <= rotation_geodesic(a, c) + rotation_geodesic(c, b) + 1e-9);
  }
}

TEST_CASE("translation_error") {
  CHECK(translation_error(Vec3::Zero(), Vec3::Zero()) == 0.0);
  CHECK(std::abs(translation_error(Vec3::Zero(), Vec3(3, 4, 0)) - 5.0) <= 1e-12);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Vec3 a = av::testing::random_vec(rng, 10), b = av::testing::random_vec(rng, 10);
    const double dx = a.x() - b.x(), dy = a.y() - b.y(), dz = a.z() - b.z();
    CHECK(translation_error(a, b) == doctest::Approx(std::sqrt(dx * dx + dy * dy + dz * dz)).epsilon(1e-14));
    CHECK(translation_error(a, b) == translation_error(b, a));
  }
}

TEST_CASE("relative_to_start") {
  std::mt19937_64 rng(5);
  const CameraPose g = random_pose(rng);

  SUBCASE("duplicate start gives identities") {
    const std::vector<CameraPose> poses{g, g};
    const auto rel = relative_to_start(poses);
    for (const auto& r : rel) {
      CHECK(same_quat(r.q, Quaternion{}, 1e-12));
      CHECK(r.t.norm() <= 1e-12);
    }
  }
  SUBCASE("identity start leaves poses unchanged") {
    const std::vector<CameraPose> poses{CameraPose::identity(g.fov), g};
    const auto rel = relative_to_start(poses);
    CHECK(same_quat(rel[1].q, g.q, 1e-12));
    CHECK((rel[1].t - g.t).norm() <= 1e-12);
    CHECK(rel[1].fov == g.fov);
  }
  SUBCASE("re-composition recovers world poses") {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<CameraPose> world;
      for (int i = 0; i < 6; ++i) world.push_back(random_pose(rng));
      const auto rel = relative_to_start(world);
      CHECK(rel[0].q == Quaternion{});
      CHECK(rel[0].t == Vec3::Zero());
      for (size_t i = 0; i < world.size(); ++i) {
        const CameraPose back = compose(world[0], rel[i]);
        CHECK(rotation_geodesic(back.q, world[i].q) <= 1e-7);
        CHECK(same_quat(back.q, world[i].q, 1e-9));
        CHECK((back.t - world[i].t).norm() <= 1e-9);
        CHECK(back.fov == world[i].fov);
      }
    }
  }
  CHECK_THROWS_AS(relative_to_start({}), GeometryError);
}

TEST_CASE("encode/decode pose") {
  const Vec2 fov(1.2, 1.0);
  const PoseEncoding e = encode_pose(CameraPose::identity(fov));
  CHECK(e == PoseEncoding{1, 0, 0, 0, 0, 0, 0, 1.2, 1.0});

  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    const CameraPose g = random_pose(rng);
    const DecodedPose d = decode_pose(encode_pose(g));
    CHECK(d.valid);
    CHECK(same_quat(d.pose.q, g.q, 1e-9));
    CHECK((d.pose.t - g.t).norm() <= 1e-9);

    // Arbitrary encodings reach a fixed point after one decode.
    PoseEncoding raw;
    for (double& v : raw) v = av::testing::uniform(rng, -3, 3);
    raw[7] = av::testing::uniform(rng, 0.1, 3.0);
    raw[8] = av::testing::uniform(rng, 0.1, 3.0);
    const PoseEncoding once = encode_pose(decode_pose(raw).pose);
    const PoseEncoding twice = encode_pose(decode_pose(once).pose);
    for (int k = 0; k < 9; ++k) CHECK(std::abs(once[k] - twice[k]) <= 1e-12);
  }

  PoseEncoding bad{1, 0, 0, 0, 0, 0, 0, 4.0, -0.5};
  const DecodedPose d = decode_pose(bad);
  CHECK_FALSE(d.valid);
  CHECK(d.pose.fov.x() < kPi);
  CHECK(d.pose.fov.y() > 0.0);

  PoseEncoding zero{0, 0, 0, 0, 1, 2, 3, 1, 1};
  CHECK_THROWS_AS(decode_pose(zero), GeometryError);
}

TEST_CASE("project_point") {
  const Resolution res{64, 48};
  const CameraPose id = CameraPose::identity(Vec2(1.2, 1.0));

  const Projection center = project_point(Vec3(0, 0, 1), id, res);
  CHECK(center.in_image());
  CHECK(center.pixel.x() == doctest::Approx(32.0));
  CHECK(center.pixel.y() == doctest::Approx(24.0));

  CHECK(project_point(Vec3(0, 0, -1), id, res).status == ProjectionStatus::kBehindCamera);
  CHECK(project_point(Vec3(50, 0, 1), id, res).status == ProjectionStatus::kOutsideImage);

  // Ray through the top-left image corner, placed in a random world pose.
  std::mt19937_64 rng(21);
  for (int i = 0; i < 50; ++i) {
    const CameraPose g = random_pose(rng);
    const Intrinsics k = intrinsics_for(g.fov, res);
    const Vec3 cam(-k.cx / k.fx * 2.5, -k.cy / k.fy * 2.5, 2.5);
    const Vec3 world = g.rotation() * cam + g.t;
    const Projection p = project_point(world, g, res);
    CHECK(p.status != ProjectionStatus::kBehindCamera);
    CHECK(p.pixel.norm() <= 0.5);
  }
}

TEST_CASE("look_at points the optical axis at the target") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const Vec3 eye = av::testing::random_vec(rng, 3);
    const Vec3 target = av::testing::random_vec(rng, 3);
    const CameraPose g = look_at(eye, target, Vec2(1.2, 1.2));
    CHECK((g.forward() - (target - eye).normalized()).norm() <= 1e-9);
    // Zero roll: camera x axis is horizontal.
    CHECK(std::abs(g.rotation().col(0).z()) <= 1e-9);
    const Projection p = project_point(target, g, Resolution{64, 64});
    CHECK(p.pixel.x() == doctest::Approx(32.0));
    CHECK(p.pixel.y() == doctest::Approx(32.0));
  }
}
