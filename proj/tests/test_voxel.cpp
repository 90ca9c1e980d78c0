#include <doctest.h>

#include <algorithm>

#include "activeview/voxel.hpp"
#include "oracles/voxel_oracle.hpp"
#include "scene_fixtures.hpp"

using namespace av;

namespace {

VisibleVoxelSet make_set(std::vector<uint32_t> idx, uint64_t fp = 1) {
  return VisibleVoxelSet{std::move(idx), fp};
}

}  // namespace

TEST_CASE("view_coverage_iou trivial cases") {
  CHECK(view_coverage_iou(make_set({1, 2, 3}), make_set({1, 2, 3})) == 1.0);
  CHECK(view_coverage_iou(make_set({1, 2}), make_set({3, 4})) == 0.0);
  CHECK(view_coverage_iou(make_set({1, 2, 3}), make_set({2, 3, 4})) == 0.5);
  CHECK(view_coverage_iou(make_set({}), make_set({})) == 1.0);
  CHECK(view_coverage_iou(make_set({}), make_set({5})) == 0.0);
  CHECK_THROWS_AS(view_coverage_iou(make_set({1}, 1), make_set({1}, 2)), GeometryError);
}

TEST_CASE("view_coverage_iou symmetry on random sets") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    std::vector<uint32_t> a, b;
    for (uint32_t i = 0; i < 300; ++i) {
      if (rng() % 3 == 0) a.push_back(i);
      if (rng() % 4 == 0) b.push_back(i);
    }
    const double ab = view_coverage_iou(make_set(a), make_set(b));
    CHECK(ab == view_coverage_iou(make_set(b), make_set(a)));
    CHECK(ab == doctest::Approx(oracle::iou_bruteforce(a, b)).epsilon(1e-15));
    CHECK(view_coverage_iou(make_set(a), make_set(a)) == 1.0);
  }
}

TEST_CASE("voxel grid from scene") {
  Scene s;
  s.room = {Vec3::Zero(), Vec3(6, 6, 3)};
  const VoxelGrid grid = VoxelGrid::from_scene(s, 0.15);
  CHECK(grid.dims() == std::array<int, 3>{40, 40, 20});
  // Shell only: every occupied cell touches a room face.
  for (uint32_t idx : grid.occupied_indices()) {
    const auto c = grid.cell_of(idx);
    const bool boundary = c[0] == 0 || c[1] == 0 || c[2] == 0 || c[0] == 39 || c[1] == 39 || c[2] == 19;
    CHECK(boundary);
  }
  CHECK(grid.occupied_indices().size() == 40 * 40 * 20 - 38 * 38 * 18);
  CHECK_THROWS_AS(VoxelGrid(Vec3::Zero(), 0.01, {300, 300, 300}), GeometryError);
}

TEST_CASE("empty grid sees nothing") {
  Scene s;
  s.room = {Vec3::Zero(), Vec3(4, 4, 3)};
  const VoxelGrid empty(Vec3::Zero(), 0.15, {27, 27, 20});
  const CameraPose g = look_at(Vec3(2, 2, 1.5), Vec3(4, 2, 1.0), Vec2(1.2, 1.2));
  CHECK(visible_voxels(empty, s, g, Resolution{64, 64}).empty());
}

TEST_CASE("single box in view matches the oracle and faces the camera") {
  Scene s;
  s.room = {Vec3(-20, -20, -20), Vec3(20, 20, 20)};
  SceneObject box;
  box.id = 1;
  box.box = {Vec3(2.0, -0.4, -0.4), Vec3(2.9, 0.5, 0.5)};
  s.objects.push_back(box);
  // Grid covering only the object neighborhood, with only the object marked.
  VoxelGrid grid(Vec3(1.5, -1.0, -1.0), 0.15, {14, 14, 14});
  for (uint32_t i = 0; i < grid.size(); ++i) grid.set_occupied(i, grid.cell_box(i).overlaps(box.box.inflated(0)));
  const CameraPose g = look_at(Vec3(0, 0.3, 0.2), box.box.center(), Vec2(1.2, 1.2));
  const Resolution res{64, 64};
  const auto vis = visible_voxels(grid, s, g, res);
  CHECK(vis.indices == oracle::visible_voxels_bruteforce(grid, s, g, res));
  CHECK(!vis.empty());
  for (uint32_t idx : vis.indices) {
    // Surface-adjacent: the center lies within half a voxel of the box surface
    // and on the camera-facing side (x = 2.0 face or the grazing y/z sides).
    const Vec3 c = grid.center(idx);
    const Vec3 inner = c.cwiseMax(box.box.min).cwiseMin(box.box.max);
    const double outside = (c - inner).norm();
    const double inside_depth = (c - box.box.min).cwiseMin(box.box.max - c).minCoeff();
    CHECK((outside > 0.0 || inside_depth <= 0.075 + 1e-9));
    CHECK(c.x() < box.box.center().x());
  }
}

TEST_CASE("camera inside a closed box sees only its interior shell") {
  Scene s;
  s.room = {Vec3::Zero(), Vec3(3.0, 3.0, 2.4)};
  const VoxelGrid grid = VoxelGrid::from_scene(s, 0.15);
  const Resolution res{48, 48};
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    const CameraPose g = testing::random_free_camera(rng, s, Vec2(1.3, 1.3));
    const auto vis = visible_voxels(grid, s, g, res);
    CHECK(vis.indices == oracle::visible_voxels_bruteforce(grid, s, g, res));
    CHECK(!vis.empty());
    for (uint32_t idx : vis.indices) CHECK(grid.occupied(idx));
  }
}

TEST_CASE("visible_voxels matches the brute-force oracle on random scenes") {
  std::mt19937_64 rng(1234);
  const Resolution res{64, 64};
  for (int t = 0; t < 10; ++t) {
    const Scene s = testing::random_box_scene(rng);
    const VoxelGrid grid = VoxelGrid::from_scene(s, 0.15);
    REQUIRE(grid.size() <= 32 * 32 * 32);
    const CameraPose g = testing::random_free_camera(rng, s, Vec2(1.22, 1.22));
    const auto vis = visible_voxels(grid, s, g, res);
    const auto ref = oracle::visible_voxels_bruteforce(grid, s, g, res);
    CHECK(vis.indices == ref);
    CHECK(std::is_sorted(vis.indices.begin(), vis.indices.end()));
    // Worker count does not change the result.
    CHECK(visible_voxels(grid, s, g, res, 4).indices == vis.indices);
  }
}
