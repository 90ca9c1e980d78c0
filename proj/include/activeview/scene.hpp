#pragma once

// Box-world scene description: a closed room plus solid axis-aligned objects.

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "activeview/geometry.hpp"

namespace av {

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  Vec3 center() const { return 0.5 * (min + max); }
  Vec3 size() const { return max - min; }
  bool contains(const Vec3& p, double margin = 0.0) const;
  /// Positive-volume overlap.
  bool overlaps(const Aabb& o) const;
  Aabb inflated(double m) const;
};

/// Slab test. Returns the parametric [t_near, t_far] along `dir` where the
/// line overlaps the box, or nothing when it misses.
std::optional<std::array<double, 2>> ray_aabb(const Vec3& origin, const Vec3& dir,
                                              const Aabb& box);

enum class Category : uint8_t {
  kCabinet,
  kSink,
  kCouch,
  kTable,
  kLamp,
  kBed,
  kChair,
  kShelf,
  kTv,
  kPlant,
  kFridge,
  kDesk,
};

inline constexpr int kNumCategories = 12;
std::string_view category_name(Category c);
std::optional<Category> category_from_name(std::string_view name);

struct SceneObject {
  int id = 0;  // >= 1; 0 is reserved for room surfaces
  Category category = Category::kCabinet;
  Aabb box;
  Vec3 base_color = Vec3::Constant(0.5);
};

struct Scene {
  Aabb room;
  std::vector<SceneObject> objects;
  Vec3 light_dir = Vec3::UnitZ();
  uint64_t seed = 0;

  const SceneObject* find(int id) const;
  int count_category(Category c) const;
  /// Inside the room and outside every object, with a clearance margin.
  bool is_free(const Vec3& p, double margin) const;
};

struct RayHit {
  double t = 0.0;      // distance along the (not necessarily unit) direction
  Vec3 normal;         // unit surface normal facing the ray origin
  int object_id = 0;   // 0 for room surfaces
  int room_face = -1;  // 0..5 = -x,+x,-y,+y,-z,+z when a room surface is hit
};

/// First surface hit with t > 0 against the room shell and all objects.
std::optional<RayHit> first_hit(const Scene& scene, const Vec3& origin, const Vec3& dir);

}  // namespace av
