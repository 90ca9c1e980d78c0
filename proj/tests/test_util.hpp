#pragma once

#include <cstdint>
#include <random>

#include "activeview/geometry.hpp"

namespace av::testing {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline Quaternion random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return quat_normalize({n(rng), n(rng), n(rng), n(rng)});
}

inline Vec3 random_vec(std::mt19937_64& rng, double scale) {
  return Vec3(uniform(rng, -scale, scale), uniform(rng, -scale, scale), uniform(rng, -scale, scale));
}

inline CameraPose random_pose(std::mt19937_64& rng) {
  CameraPose g;
  g.q = random_quat(rng);
  g.t = random_vec(rng, 3.0);
  g.fov = Vec2(uniform(rng, 0.6, 1.6), uniform(rng, 0.6, 1.6));
  return g;
}

}  // namespace av::testing
