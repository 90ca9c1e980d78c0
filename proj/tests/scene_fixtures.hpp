#pragma once

// Small random box scenes for geometry tests, independent of the microworld
// generator.

#include <random>

#include "activeview/scene.hpp"
#include "test_util.hpp"

namespace av::testing {

inline Scene random_box_scene(std::mt19937_64& rng, int max_objects = 6) {
  Scene s;
  s.room = {Vec3::Zero(), Vec3(uniform(rng, 3.0, 4.8), uniform(rng, 3.0, 4.8), uniform(rng, 2.4, 3.0))};
  s.light_dir = Vec3(0.3, 0.2, 1.0).normalized();
  const int n = 1 + static_cast<int>(rng() % max_objects);
  int id = 1;
  for (int attempt = 0; attempt < 500 && static_cast<int>(s.objects.size()) < n; ++attempt) {
    const Vec3 size(uniform(rng, 0.2, 1.2), uniform(rng, 0.2, 1.2), uniform(rng, 0.3, 1.8));
    Vec3 lo(uniform(rng, 0.1, s.room.max.x() - size.x() - 0.1),
            uniform(rng, 0.1, s.room.max.y() - size.y() - 0.1),
            rng() % 3 == 0 ? uniform(rng, 0.0, 0.6) : 0.0);
    Aabb box{lo, lo + size};
    if (!s.room.inflated(-1e-6).overlaps(box) || box.max.z() > s.room.max.z()) continue;
    bool clash = false;
    for (const auto& o : s.objects) clash = clash || o.box.inflated(0.05).overlaps(box);
    if (clash) continue;
    SceneObject obj;
    obj.id = id++;
    obj.category = static_cast<Category>(rng() % kNumCategories);
    obj.box = box;
    s.objects.push_back(obj);
  }
  return s;
}

inline CameraPose random_free_camera(std::mt19937_64& rng, const Scene& s, const Vec2& fov) {
  for (;;) {
    const Vec3 eye(uniform(rng, 0.2, s.room.max.x() - 0.2), uniform(rng, 0.2, s.room.max.y() - 0.2),
                   uniform(rng, 0.5, s.room.max.z() - 0.3));
    if (!s.is_free(eye, 0.1)) continue;
    const Vec3 target(uniform(rng, 0.0, s.room.max.x()), uniform(rng, 0.0, s.room.max.y()),
                      uniform(rng, 0.0, 1.5));
    if ((target - eye).norm() < 0.5) continue;
    return look_at(eye, target, fov);
  }
}

}  // namespace av::testing
