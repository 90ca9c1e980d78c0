#include "activeview/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace av {

namespace {

constexpr std::array<std::string_view, kNumCategories> kCategoryNames = {
    "cabinet", "sink", "couch", "table", "lamp", "bed",
    "chair", "shelf", "tv", "plant", "fridge", "desk"};

}  // namespace

bool Aabb::contains(const Vec3& p, double margin) const {
  for (int a = 0; a < 3; ++a) {
    if (p[a] < min[a] + margin || p[a] > max[a] - margin) return false;
  }
  return true;
}

bool Aabb::overlaps(const Aabb& o) const {
  for (int a = 0; a < 3; ++a) {
    if (!(min[a] < o.max[a] && o.min[a] < max[a])) return false;
  }
  return true;
}

Aabb Aabb::inflated(double m) const {
  return {min - Vec3::Constant(m), max + Vec3::Constant(m)};
}

std::optional<std::array<double, 2>> ray_aabb(const Vec3& origin, const Vec3& dir,
                                              const Aabb& box) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) return std::nullopt;
      continue;
    }
    const double inv = 1.0 / dir[a];
    double ta = (box.min[a] - origin[a]) * inv;
    double tb = (box.max[a] - origin[a]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return std::array<double, 2>{t0, t1};
}

std::string_view category_name(Category c) { return kCategoryNames[static_cast<int>(c)]; }

std::optional<Category> category_from_name(std::string_view name) {
  for (int i = 0; i < kNumCategories; ++i) {
    if (kCategoryNames[i] == name) return static_cast<Category>(i);
  }
  return std::nullopt;
}

const SceneObject* Scene::find(int id) const {
  for (const auto& o : objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

int Scene::count_category(Category c) const {
  return static_cast<int>(
      std::count_if(objects.begin(), objects.end(), [c](const auto& o) { return o.category == c; }));
}

bool Scene::is_free(const Vec3& p, double margin) const {
  if (!room.contains(p, margin)) return false;
  for (const auto& o : objects) {
    if (o.box.inflated(margin).contains(p)) return false;
  }
  return true;
}

namespace {

// Axis of the box face containing the ray point at parameter t.
int slab_axis(const Vec3& origin, const Vec3& dir, const Aabb& box, double t) {
  const Vec3 p = origin + t * dir;
  int best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double e = std::min(std::abs(p[a] - box.min[a]), std::abs(p[a] - box.max[a]));
    if (e < best_err) {
      best_err = e;
      best = a;
    }
  }
  return best;
}

}  // namespace

std::optional<RayHit> first_hit(const Scene& scene, const Vec3& origin, const Vec3& dir) {
  std::optional<RayHit> best;
  auto consider = [&](double t, int axis, int id, bool room_face_hit) {
    if (!(t > 0.0)) return;
    if (best && best->t <= t) return;
    RayHit h;
    h.t = t;
    h.object_id = id;
    h.normal = Vec3::Zero();
    h.normal[axis] = dir[axis] > 0.0 ? -1.0 : 1.0;
    if (room_face_hit) h.room_face = 2 * axis + (dir[axis] > 0.0 ? 1 : 0);
    best = h;
  };
  for (const auto& o : scene.objects) {
    auto span = ray_aabb(origin, dir, o.box);
    if (!span) continue;
    const double t = (*span)[0] > 0.0 ? (*span)[0] : (*span)[1];
    if (t > 0.0) consider(t, slab_axis(origin, dir, o.box, t), o.id, false);
  }
  if (auto span = ray_aabb(origin, dir, scene.room)) {
    const double t = (*span)[0] > 0.0 ? (*span)[0] : (*span)[1];
    if (t > 0.0) consider(t, slab_axis(origin, dir, scene.room, t), 0, true);
  }
  return best;
}

}  // namespace av
