#include "activeview/microworld.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <spdlog/spdlog.h>

#include "activeview/vocab.hpp"
#include "activeview/voxel.hpp"

namespace av {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

struct CategoryInfo {
  Vec3 size_min;
  Vec3 size_max;
  Vec3 color;
};

// Indexed by Category.
const std::array<CategoryInfo, kNumCategories>& category_table() {
  static const std::array<CategoryInfo, kNumCategories> t = {{
      {{0.5, 0.4, 0.8}, {1.0, 0.6, 1.6}, {0.60, 0.35, 0.15}},    // cabinet
      {{0.5, 0.4, 0.8}, {0.8, 0.6, 0.95}, {0.85, 0.85, 0.95}},   // sink
      {{1.6, 0.8, 0.7}, {2.2, 1.0, 0.9}, {0.20, 0.35, 0.75}},    // couch
      {{1.0, 0.7, 0.7}, {1.6, 1.0, 0.8}, {0.75, 0.55, 0.30}},    // table
      {{0.25, 0.25, 1.2}, {0.4, 0.4, 1.7}, {0.95, 0.85, 0.20}},  // lamp
      {{1.4, 1.9, 0.5}, {2.0, 2.1, 0.7}, {0.80, 0.20, 0.25}},    // bed
      {{0.45, 0.45, 0.8}, {0.6, 0.6, 1.0}, {0.95, 0.50, 0.10}},  // chair
      {{0.8, 0.3, 1.5}, {1.2, 0.4, 2.0}, {0.45, 0.25, 0.55}},    // shelf
      {{0.9, 0.15, 0.6}, {1.3, 0.25, 0.8}, {0.10, 0.10, 0.12}},  // tv
      {{0.3, 0.3, 0.6}, {0.5, 0.5, 1.4}, {0.15, 0.50, 0.15}},    // plant
      {{0.6, 0.6, 1.6}, {0.8, 0.8, 1.9}, {0.70, 0.75, 0.80}},    // fridge
      {{1.0, 0.6, 0.72}, {1.4, 0.8, 0.78}, {0.35, 0.20, 0.08}},  // desk
  }};
  return t;
}

// Room faces in RayHit::room_face order: -x, +x, -y, +y, floor, ceiling.
constexpr std::array<std::array<double, 3>, 6> kRoomColors = {{
    {0.80, 0.72, 0.62},
    {0.62, 0.72, 0.80},
    {0.72, 0.80, 0.62},
    {0.80, 0.64, 0.74},
    {0.55, 0.50, 0.42},
    {0.92, 0.92, 0.90},
}};

constexpr double kObjectGap = 0.4;
constexpr double kWallGap = 0.15;
constexpr double kCameraClearance = 0.15;

}  // namespace

int Rng::uniform_int(int lo, int hi_inclusive) {
  const uint64_t span = static_cast<uint64_t>(hi_inclusive - lo) + 1;
  return lo + static_cast<int>(next() % span);
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over the combined value
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

Vec2 MicroworldParams::fov() const {
  const double fx = fov_deg * kDeg;
  const double fy = 2.0 * std::atan(std::tan(fx / 2.0) * height / width);
  return {fx, fy};
}

void MicroworldParams::validate() const {
  auto fail = [](const std::string& m) { throw GenerationError("invalid microworld params: " + m); };
  if (width < 8 || height < 8) fail("resolution too small");
  if (!(fov_deg > 1.0 && fov_deg < 179.0)) fail("fov_deg out of range");
  if (min_objects < 1 || max_objects > 12 || min_objects > max_objects) fail("object count bounds");
  if (!(room_min_xy >= 3.0 && room_max_xy >= room_min_xy)) fail("room size bounds");
  if (!(room_min_height >= 2.2 && room_max_height >= room_min_height)) fail("room height bounds");
  if (multiplicity_prob < 0.0 || multiplicity_prob > 1.0) fail("multiplicity_prob");
  if (min_context < 2 || max_context > 6 || min_context > max_context) fail("context bounds");
  if (!(voxel_resolution > 0.0)) fail("voxel_resolution");
  if (records_per_shard < 1) fail("records_per_shard");
  if (workers < 1) fail("workers");
}

void to_json(nlohmann::json& j, const MicroworldParams& p) {
  j = nlohmann::json{{"width", p.width},
                     {"height", p.height},
                     {"fov_deg", p.fov_deg},
                     {"min_objects", p.min_objects},
                     {"max_objects", p.max_objects},
                     {"room_min_xy", p.room_min_xy},
                     {"room_max_xy", p.room_max_xy},
                     {"room_min_height", p.room_min_height},
                     {"room_max_height", p.room_max_height},
                     {"multiplicity_prob", p.multiplicity_prob},
                     {"min_context", p.min_context},
                     {"max_context", p.max_context},
                     {"voxel_resolution", p.voxel_resolution},
                     {"records_per_shard", p.records_per_shard},
                     {"workers", p.workers}};
}

void from_json(const nlohmann::json& j, MicroworldParams& p) {
  const MicroworldParams d;
  p.width = j.value("width", d.width);
  p.height = j.value("height", d.height);
  p.fov_deg = j.value("fov_deg", d.fov_deg);
  p.min_objects = j.value("min_objects", d.min_objects);
  p.max_objects = j.value("max_objects", d.max_objects);
  p.room_min_xy = j.value("room_min_xy", d.room_min_xy);
  p.room_max_xy = j.value("room_max_xy", d.room_max_xy);
  p.room_min_height = j.value("room_min_height", d.room_min_height);
  p.room_max_height = j.value("room_max_height", d.room_max_height);
  p.multiplicity_prob = j.value("multiplicity_prob", d.multiplicity_prob);
  p.min_context = j.value("min_context", d.min_context);
  p.max_context = j.value("max_context", d.max_context);
  p.voxel_resolution = j.value("voxel_resolution", d.voxel_resolution);
  p.records_per_shard = j.value("records_per_shard", d.records_per_shard);
  p.workers = j.value("workers", d.workers);
}

Scene generate_scene(uint64_t seed, const MicroworldParams& params) {
  params.validate();
  Rng rng(seed);
  Scene s;
  s.seed = seed;
  s.room = {Vec3::Zero(), Vec3(rng.uniform(params.room_min_xy, params.room_max_xy),
                               rng.uniform(params.room_min_xy, params.room_max_xy),
                               rng.uniform(params.room_min_height, params.room_max_height))};
  const double az = rng.uniform(0.0, 2.0 * kPi);
  s.light_dir = Vec3(0.6 * std::cos(az), 0.6 * std::sin(az), 1.0).normalized();

  const int count = rng.uniform_int(std::min(params.min_objects, params.max_objects), params.max_objects);
  std::vector<Category> used;
  int attempts = 0;
  while (static_cast<int>(s.objects.size()) < count) {
    if (++attempts > 10000) throw GenerationError("generate_scene: object placement failed");
    Category cat;
    if (!used.empty() && rng.bernoulli(params.multiplicity_prob)) {
      cat = used[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(used.size()) - 1))];
    } else {
      cat = static_cast<Category>(rng.uniform_int(0, kNumCategories - 1));
    }
    const CategoryInfo& info = category_table()[static_cast<int>(cat)];
    Vec3 size;
    for (int a = 0; a < 3; ++a) size[a] = rng.uniform(info.size_min[a], info.size_max[a]);
    if (rng.bernoulli(0.5)) std::swap(size.x(), size.y());
    const double x_hi = s.room.max.x() - size.x() - kWallGap;
    const double y_hi = s.room.max.y() - size.y() - kWallGap;
    if (x_hi <= kWallGap || y_hi <= kWallGap) continue;
    const Vec3 lo(rng.uniform(kWallGap, x_hi), rng.uniform(kWallGap, y_hi), 0.0);
    const Aabb box{lo, lo + size};
    if (box.max.z() >= s.room.max.z()) continue;
    bool clash = false;
    for (const auto& o : s.objects) clash = clash || o.box.inflated(kObjectGap).overlaps(box);
    if (clash) continue;

    SceneObject obj;
    obj.id = static_cast<int>(s.objects.size()) + 1;
    obj.category = cat;
    obj.box = box;
    for (int c = 0; c < 3; ++c) {
      obj.base_color[c] = std::clamp(info.color[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
    }
    s.objects.push_back(obj);
    if (std::find(used.begin(), used.end(), cat) == used.end()) used.push_back(cat);
  }
  return s;
}

double Frame::coverage(int object_id) const {
  if (mask.empty()) return 0.0;
  const auto n = std::count(mask.begin(), mask.end(), static_cast<uint16_t>(object_id));
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

Frame render(const Scene& scene, const CameraPose& g, const Resolution& res) {
  Frame f;
  f.width = res.width;
  f.height = res.height;
  f.pose = g;
  f.rgb.assign(f.pixels() * 3, 0.0f);
  f.depth.assign(f.pixels(), 0.0f);
  f.mask.assign(f.pixels(), 0);
  const Intrinsics k = intrinsics_for(g.fov, res);
  const Mat3 r = g.rotation();
  for (int v = 0; v < res.height; ++v) {
    for (int u = 0; u < res.width; ++u) {
      const size_t p = static_cast<size_t>(v) * res.width + u;
      // Camera-frame direction has unit z, so the hit parameter is the z-depth.
      const Vec3 dir = r * pixel_ray(u + 0.5, v + 0.5, k);
      const auto hit = first_hit(scene, g.t, dir);
      if (!hit) continue;
      Vec3 color;
      if (hit->object_id > 0) {
        color = scene.find(hit->object_id)->base_color;
        f.mask[p] = static_cast<uint16_t>(hit->object_id);
      } else {
        const auto& c = kRoomColors[static_cast<size_t>(std::max(0, hit->room_face))];
        color = Vec3(c[0], c[1], c[2]);
      }
      const double shade = std::max(0.2, hit->normal.dot(scene.light_dir));
      for (int c = 0; c < 3; ++c) f.rgb[3 * p + c] = static_cast<float>(color[c] * shade);
      f.depth[p] = static_cast<float>(hit->t);
    }
  }
  return f;
}

std::string qualifier_name(Qualifier q) {
  switch (q) {
    case Qualifier::kNone: return "none";
    case Qualifier::kEyeLevel: return "eye-level";
    case Qualifier::kFromAbove: return "from-above";
    case Qualifier::kCloseUp: return "close-up";
  }
  return "none";
}

Qualifier qualifier_from_name(const std::string& s) {
  for (Qualifier q : {Qualifier::kNone, Qualifier::kEyeLevel, Qualifier::kFromAbove, Qualifier::kCloseUp}) {
    if (qualifier_name(q) == s) return q;
  }
  throw GenerationError("unknown qualifier '" + s + "'");
}

CameraPose sample_target_view(const Scene& scene, const SceneObject& object, Qualifier qualifier,
                              const MicroworldParams& params, Rng& rng) {
  const Vec3 c = object.box.center();
  const Resolution res = params.resolution();
  for (int attempt = 0; attempt < 500; ++attempt) {
    const double az = rng.uniform(0.0, 2.0 * kPi);
    double dist = 0.0;
    double elev = 0.0;  // angle of the eye above the object center
    switch (qualifier) {
      case Qualifier::kCloseUp:
        dist = rng.uniform(0.8, 1.5);
        elev = rng.uniform(-10.0, 30.0) * kDeg;
        break;
      case Qualifier::kEyeLevel: {
        const double h = rng.uniform(1.4, 1.7);
        dist = rng.uniform(1.5, 3.0);
        const double dz = h - c.z();
        if (std::abs(dz) >= dist) continue;
        elev = std::asin(dz / dist);
        break;
      }
      case Qualifier::kFromAbove:
        dist = rng.uniform(1.2, 2.5);
        elev = rng.uniform(35.0, 60.0) * kDeg;
        break;
      case Qualifier::kNone:
        dist = rng.uniform(1.0, 3.0);
        elev = rng.uniform(-10.0, 40.0) * kDeg;
        break;
    }
    const Vec3 eye = c + dist * Vec3(std::cos(elev) * std::cos(az), std::cos(elev) * std::sin(az),
                                     std::sin(elev));
    if (!scene.is_free(eye, kCameraClearance)) continue;
    const CameraPose g = look_at(eye, c, params.fov());
    if (render(scene, g, res).coverage(object.id) < kMinTargetCoverage) continue;
    return g;
  }
  throw GenerationError("sample_target_view: no valid view after 500 attempts");
}

namespace {

CameraPose pose_from_heading(const Vec3& eye, double yaw, double pitch, const Vec2& fov) {
  const Vec3 fwd(std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch));
  return look_at(eye, eye + fwd, fov);
}

Vec3 random_free_point(const Scene& scene, Rng& rng, double zlo, double zhi) {
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p(rng.uniform(scene.room.min.x() + 0.3, scene.room.max.x() - 0.3),
                 rng.uniform(scene.room.min.y() + 0.3, scene.room.max.y() - 0.3), rng.uniform(zlo, zhi));
    if (scene.is_free(p, 0.2)) return p;
  }
  throw GenerationError("no free point in scene");
}

}  // namespace

std::vector<CameraPose> sample_context_trajectory(const Scene& scene, const SceneObject& target,
                                                  const CameraPose& target_pose, int n,
                                                  const MicroworldParams& params, Rng& rng) {
  if (n < 2 || n > 6) throw GenerationError("sample_context_trajectory: n must be in [2, 6]");
  const Resolution res = params.resolution();
  const Vec2 fov = params.fov();
  const VoxelGrid grid = VoxelGrid::from_scene(scene, params.voxel_resolution);

  for (int attempt = 0; attempt < 2000; ++attempt) {
    const Vec3 start_eye = random_free_point(scene, rng, 1.2, 1.8);
    const CameraPose start = pose_from_heading(start_eye, rng.uniform(0.0, 2.0 * kPi),
                                               rng.uniform(-25.0, 5.0) * kDeg, fov);
    if (render(scene, start, res).coverage(target.id) > kMaxStartCoverage) continue;

    // Half of the walks head toward the target viewpoint, the rest wander.
    const Vec3 goal = rng.bernoulli(0.5) ? target_pose.t : random_free_point(scene, rng, 1.0, 1.9);

    std::vector<CameraPose> poses{start};
    bool ok = true;
    for (int k = 1; k < n && ok; ++k) {
      ok = false;
      const Vec3 prev = poses.back().t;
      for (int tries = 0; tries < 50; ++tries) {
        Vec3 to_goal = goal - prev;
        to_goal.z() = 0.0;
        double heading = to_goal.norm() > 1e-6 ? std::atan2(to_goal.y(), to_goal.x())
                                               : rng.uniform(0.0, 2.0 * kPi);
        heading += rng.uniform(-45.0, 45.0) * kDeg;
        const double step = rng.uniform(0.3, 1.2);
        Vec3 eye = prev + step * Vec3(std::cos(heading), std::sin(heading), 0.0);
        eye.z() = std::clamp(prev.z() + rng.uniform(-0.1, 0.1), 1.0, 1.9);
        if ((eye - prev).norm() > 1.5 || !scene.is_free(eye, 0.2)) continue;
        const double yaw = heading + rng.uniform(-60.0, 60.0) * kDeg;
        poses.push_back(pose_from_heading(eye, yaw, rng.uniform(-25.0, 5.0) * kDeg, fov));
        ok = true;
        break;
      }
    }
    if (!ok) continue;

    std::vector<VisibleVoxelSet> vis;
    for (const auto& g : poses) vis.push_back(visible_voxels(grid, scene, g, res));
    bool overlap = false;
    for (size_t k = 0; k + 1 < vis.size() && !overlap; ++k) {
      overlap = view_coverage_iou(vis[k], vis[k + 1]) >= 0.10;
    }
    if (!overlap) continue;
    return poses;
  }
  throw GenerationError("sample_context_trajectory: sampling failed after 2000 attempts");
}

std::array<int, 2> disambiguation_pixel(const Scene& scene, int object_id, const Frame& start) {
  const SceneObject* obj = scene.find(object_id);
  if (obj == nullptr) throw GenerationError("unknown target id");
  const Projection p = project_point(obj->box.center(), start.pose, {start.width, start.height});
  if (!p.in_image()) {
    throw DisambiguationError("target center is not inside the start image");
  }
  return {static_cast<int>(std::floor(p.pixel.x())), static_cast<int>(std::floor(p.pixel.y()))};
}

std::string instruction_text(const InstructionSpec& spec, const Scene& scene) {
  const SceneObject* obj = scene.find(spec.target_id);
  if (obj == nullptr) throw GenerationError("instruction target id not in scene");
  std::string text = "inspect the " + std::string(category_name(obj->category));
  switch (spec.qualifier) {
    case Qualifier::kEyeLevel: text += " from an eye-level view"; break;
    case Qualifier::kFromAbove: text += " from above"; break;
    case Qualifier::kCloseUp: text += " up close"; break;
    case Qualifier::kNone: break;
  }
  if (spec.functional_suffix) {
    const auto phrases = functional_phrases();
    const int i = *spec.functional_suffix;
    if (i < 0 || i >= static_cast<int>(phrases.size())) throw GenerationError("bad functional suffix");
    text += " ";
    text += phrases[static_cast<size_t>(i)];
  }
  if (spec.disambiguation_point) {
    const auto& pt = *spec.disambiguation_point;
    text += " ( " + std::to_string(pt[0]) + " , " + std::to_string(pt[1]) + " ) in image";
  }
  return text;
}

std::vector<int32_t> compose_instruction(const InstructionSpec& spec, const Frame& start,
                                         const Scene& scene) {
  InstructionSpec resolved = spec;
  if (spec.disambiguation_point) {
    resolved.disambiguation_point = disambiguation_pixel(scene, spec.target_id, start);
  }
  return tokenize(instruction_text(resolved, scene));
}

namespace {

CameraPose round_to_f32(const CameraPose& g) {
  auto r = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  CameraPose out;
  out.q = {r(g.q.w), r(g.q.x), r(g.q.y), r(g.q.z)};
  out.t = Vec3(r(g.t.x()), r(g.t.y()), r(g.t.z()));
  out.fov = Vec2(r(g.fov.x()), r(g.fov.y()));
  return out;
}

}  // namespace

TaskRecord generate_task(uint64_t seed, int64_t index, const MicroworldParams& params) {
  params.validate();
  Rng rng(seed);
  const Scene scene = generate_scene(rng.next(), params);
  const Resolution res = params.resolution();

  for (int attempt = 0; attempt < 20; ++attempt) {
    const auto& obj = scene.objects[static_cast<size_t>(
        rng.uniform_int(0, static_cast<int>(scene.objects.size()) - 1))];
    InstructionSpec spec;
    spec.target_id = obj.id;
    spec.qualifier = static_cast<Qualifier>(rng.uniform_int(0, 3));
    if (rng.bernoulli(0.5)) {
      spec.functional_suffix = rng.uniform_int(0, static_cast<int>(functional_phrases().size()) - 1);
    }
    const int n = rng.uniform_int(params.min_context, params.max_context);
    try {
      const CameraPose target_world = sample_target_view(scene, obj, spec.qualifier, params, rng);
      const std::vector<CameraPose> context =
          sample_context_trajectory(scene, obj, target_world, n, params, rng);

      const Frame start_world_frame = render(scene, context.front(), res);
      if (scene.count_category(obj.category) >= 2) {
        spec.disambiguation_point = disambiguation_pixel(scene, obj.id, start_world_frame);
      }
      TaskRecord rec;
      rec.instruction_tokens = compose_instruction(spec, start_world_frame, scene);
      rec.spec = spec;
      rec.scene = scene;
      rec.seed = seed;
      rec.index = index;
      rec.start_world = context.front();

      std::vector<CameraPose> world = context;
      world.push_back(target_world);
      const std::vector<CameraPose> rel = relative_to_start(world);
      for (size_t i = 0; i < world.size(); ++i) {
        Frame f = i == 0 ? start_world_frame : render(scene, world[i], res);
        f.pose = round_to_f32(rel[i]);
        if (i + 1 < world.size()) {
          rec.frames.push_back(std::move(f));
        } else {
          rec.target = std::move(f);
        }
      }
      return rec;
    } catch (const GenerationError& e) {
      spdlog::debug("generate_task(seed={}): attempt {} rejected: {}", seed, attempt, e.what());
    }
  }
  throw GenerationError("generate_task: no valid task after 20 attempts");
}

std::vector<std::string> validate_record(const TaskRecord& r) {
  std::vector<std::string> errs;
  const int n = r.num_context();
  if (n < 2 || n > 6) errs.push_back("context length out of [2, 6]");
  if (n == 0) return errs;
  const auto& p0 = r.frames.front().pose;
  if (std::abs(p0.q.w - 1.0) > 1e-6 || std::abs(p0.q.x) > 1e-6 || std::abs(p0.q.y) > 1e-6 ||
      std::abs(p0.q.z) > 1e-6 || p0.t.norm() > 1e-6) {
    errs.push_back("start pose is not identity");
  }
  const SceneObject* target = r.scene.find(r.spec.target_id);
  if (target == nullptr) {
    errs.push_back("target id not in scene");
    return errs;
  }
  auto check_frame = [&](const Frame& f, const std::string& name) {
    if (f.rgb.size() != f.pixels() * 3 || f.depth.size() != f.pixels() || f.mask.size() != f.pixels()) {
      errs.push_back(name + ": array sizes do not match resolution");
      return;
    }
    for (size_t p = 0; p < f.pixels(); ++p) {
      if (f.mask[p] != 0 && !(f.depth[p] > 0.0f)) {
        errs.push_back(name + ": mask set where depth is zero");
        break;
      }
      if (f.mask[p] != 0 && r.scene.find(f.mask[p]) == nullptr) {
        errs.push_back(name + ": mask id not in scene");
        break;
      }
    }
  };
  for (int i = 0; i < n; ++i) check_frame(r.frames[static_cast<size_t>(i)], "frame " + std::to_string(i));
  check_frame(r.target, "target");
  if (r.target.coverage(target->id) < kMinTargetCoverage) errs.push_back("target coverage below 3%");
  if (r.frames.front().coverage(target->id) > kMaxStartCoverage) errs.push_back("start coverage above 20%");
  const bool ambiguous = r.scene.count_category(target->category) >= 2;
  if (ambiguous != r.spec.disambiguation_point.has_value()) {
    errs.push_back("disambiguation point presence does not match category multiplicity");
  }
  try {
    const std::string text = detokenize(r.instruction_tokens);
    if (tokenize(text) != r.instruction_tokens) errs.push_back("instruction tokens do not round-trip");
    if (text != instruction_text(r.spec, r.scene)) errs.push_back("instruction text does not match spec");
  } catch (const VocabError& e) {
    errs.push_back(std::string("instruction: ") + e.what());
  }
  return errs;
}

nlohmann::json scene_to_json(const Scene& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"id", o.id},
                    {"category", std::string(category_name(o.category))},
                    {"min", {o.box.min.x(), o.box.min.y(), o.box.min.z()}},
                    {"max", {o.box.max.x(), o.box.max.y(), o.box.max.z()}},
                    {"color", {o.base_color.x(), o.base_color.y(), o.base_color.z()}}});
  }
  return {{"room_min", {s.room.min.x(), s.room.min.y(), s.room.min.z()}},
          {"room_max", {s.room.max.x(), s.room.max.y(), s.room.max.z()}},
          {"light_dir", {s.light_dir.x(), s.light_dir.y(), s.light_dir.z()}},
          {"seed", s.seed},
          {"objects", objs}};
}

namespace {

Vec3 vec3_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

}  // namespace

Scene scene_from_json(const nlohmann::json& j) {
  Scene s;
  s.room = {vec3_from(j.at("room_min")), vec3_from(j.at("room_max"))};
  s.light_dir = vec3_from(j.at("light_dir"));
  s.seed = j.at("seed").get<uint64_t>();
  for (const auto& o : j.at("objects")) {
    SceneObject obj;
    obj.id = o.at("id").get<int>();
    const auto cat = category_from_name(o.at("category").get<std::string>());
    if (!cat) throw GenerationError("unknown category in scene json");
    obj.category = *cat;
    obj.box = {vec3_from(o.at("min")), vec3_from(o.at("max"))};
    obj.base_color = vec3_from(o.at("color"));
    s.objects.push_back(obj);
  }
  return s;
}

nlohmann::json pose_to_json(const CameraPose& g) {
  const PoseEncoding e = encode_pose(g);
  return nlohmann::json(std::vector<double>(e.begin(), e.end()));
}

CameraPose pose_from_json(const nlohmann::json& j) {
  CameraPose g;
  g.q = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
  g.t = Vec3(j.at(4).get<double>(), j.at(5).get<double>(), j.at(6).get<double>());
  g.fov = Vec2(j.at(7).get<double>(), j.at(8).get<double>());
  return g;
}

}  // namespace av
