#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ovhr3d/renderer.hpp"
#include "rendering_checks.hpp"
#include "support.hpp"

using namespace ovhr3d;
using testing_support::add_quad;

namespace {

CameraIntrinsics small_k(int w = 64, int h = 48) { return CameraIntrinsics::from_fov(w, h, 60); }

}  // namespace

TEST_CASE("empty mesh renders all background") {
  const auto v = rasterize(TriangleMesh{}, small_k(), CameraPose{});
  for (float d : v.depth.data) CHECK(std::isinf(d));
  for (auto f : v.face_id.data) CHECK(f == kNoFace);
  CHECK(testing_support::face_depth_consistent(v));
}

TEST_CASE("fronto-parallel quad has constant depth") {
  TriangleMesh m;
  add_quad(m, -100, -100, 100, 100, 5.0);
  const auto v = rasterize(m, small_k(), CameraPose{});
  for (float d : v.depth.data) CHECK(d == doctest::Approx(5.0).epsilon(1e-6));
  for (auto f : v.face_id.data) CHECK(f < 2);
  for (const auto& c : v.rgb.data) CHECK(c == Rgb{160, 160, 160});
}

TEST_CASE("random single triangles agree with ray casting") {
  std::mt19937_64 rng(5);
  const auto k = small_k(96, 80);
  std::size_t covered = 0;
  std::size_t agree = 0;
  for (int t = 0; t < 30; ++t) {
    const auto m = testing_support::random_triangle(rng, k);
    const auto v = rasterize(m, k, CameraPose{});
    CHECK(testing_support::face_depth_consistent(v));
    const auto r = testing_support::compare_with_raycast(m, v);
    covered += r.covered;
    agree += r.agree;
  }
  REQUIRE(covered > 1000);
  CHECK(static_cast<double>(agree) / covered >= 0.999);
}

TEST_CASE("nearer faces occlude and depth never increases when geometry is added") {
  TriangleMesh far;
  add_quad(far, -100, -100, 100, 100, 8.0);
  TriangleMesh both = far;
  add_quad(both, -0.5, -0.5, 0.5, 0.5, 3.0);
  const auto k = small_k();
  const auto a = rasterize(far, k, CameraPose{});
  const auto b = rasterize(both, k, CameraPose{});
  std::size_t near_pixels = 0;
  for (std::size_t i = 0; i < a.depth.size(); ++i) {
    CHECK(b.depth.data[i] <= a.depth.data[i]);
    if (b.face_id.data[i] >= 2) {
      ++near_pixels;
      CHECK(b.depth.data[i] == doctest::Approx(3.0).epsilon(1e-6));
    }
  }
  CHECK(near_pixels > 0);
  CHECK(b.face_id.at(k.width / 2, k.height / 2) >= 2);
}

TEST_CASE("coincident faces resolve to the lower index") {
  TriangleMesh m;
  add_quad(m, -1, -1, 1, 1, 4.0);
  add_quad(m, -1, -1, 1, 1, 4.0);
  const auto v = rasterize(m, small_k(), CameraPose{});
  for (auto f : v.face_id.data) CHECK((f == kNoFace || f < 2));
}

TEST_CASE("shared edges are covered exactly once") {
  const auto k = small_k(40, 40);
  TriangleMesh one;
  TriangleMesh two;
  TriangleMesh quad;
  add_quad(quad, -0.7, -0.6, 0.5, 0.8, 2.0);
  one.vertices = two.vertices = quad.vertices;
  one.faces = {quad.faces[0]};
  two.faces = {quad.faces[1]};
  const auto a = rasterize(one, k, CameraPose{});
  const auto b = rasterize(two, k, CameraPose{});
  const auto q = rasterize(quad, k, CameraPose{});
  for (std::size_t i = 0; i < a.face_id.size(); ++i) {
    const bool ca = a.face_id.data[i] != kNoFace;
    const bool cb = b.face_id.data[i] != kNoFace;
    CHECK_FALSE((ca && cb));
    CHECK((ca || cb) == (q.face_id.data[i] != kNoFace));
  }
}

TEST_CASE("vertex colors are interpolated") {
  TriangleMesh m;
  add_quad(m, -100, -100, 100, 100, 5.0);
  m.vertex_colors.assign(4, Rgb{200, 10, 30});
  const auto v = rasterize(m, small_k(), CameraPose{});
  for (const auto& c : v.rgb.data) CHECK(c == Rgb{200, 10, 30});
}

TEST_CASE("rasterization is deterministic") {
  std::mt19937_64 rng(8);
  TriangleMesh m;
  const auto k = small_k();
  for (int i = 0; i < 20; ++i) {
    const auto t = testing_support::random_triangle(rng, k);
    const auto base = static_cast<std::uint32_t>(m.vertices.size());
    m.vertices.insert(m.vertices.end(), t.vertices.begin(), t.vertices.end());
    m.faces.push_back({base, base + 1, base + 2});
  }
  const auto a = rasterize(m, k, CameraPose{});
  const auto b = rasterize(m, k, CameraPose{});
  CHECK(a.rgb == b.rgb);
  CHECK(a.depth == b.depth);
  CHECK(a.face_id == b.face_id);
  CHECK(testing_support::face_depth_consistent(a));
}

TEST_CASE("rasterize rejects invalid cameras") {
  CameraIntrinsics bad = small_k();
  bad.fx = -1;
  CHECK_THROWS_AS(rasterize(TriangleMesh{}, bad, CameraPose{}), std::invalid_argument);
  CameraPose skew;
  skew.rotation(1, 0) = 0.5;
  CHECK_THROWS_AS(rasterize(TriangleMesh{}, small_k(), skew), std::invalid_argument);
}

TEST_CASE("single orbit view looks at the target") {
  Aabb box{Point3(-2, -3, 0.5), Point3(4, 1, 2)};
  ViewPlanParams p;
  p.count = 1;
  p.orbit_radius = 7;
  p.altitude = 3;
  const auto views = plan_views(box, p);
  REQUIRE(views.size() == 1);
  const Point3 center = box.center();
  const auto& pose = views[0].pose;
  CHECK(std::hypot(pose.translation.x() - center.x(), pose.translation.y() - center.y()) ==
        doctest::Approx(7.0).epsilon(1e-12));
  const Eigen::Vector3d to_target = (center - pose.translation).normalized();
  CHECK(std::acos(std::min(1.0, pose.forward().dot(to_target))) < 1e-9);
  CHECK(pose.translation.z() == 0.5 + 3);
  CHECK(pose.valid());
}

TEST_CASE("eight orbit views are 45 degrees apart") {
  Aabb box{Point3(-1, -1, 0), Point3(1, 1, 1)};
  ViewPlanParams p;
  p.count = 8;
  const auto views = plan_views(box, p);
  REQUIRE(views.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto& a = views[i].pose.translation;
    const auto& b = views[(i + 1) % 8].pose.translation;
    const double da = std::atan2(a.y(), a.x());
    const double db = std::atan2(b.y(), b.x());
    double diff = std::remainder(db - da, 2 * std::numbers::pi);
    CHECK(std::abs(diff) == doctest::Approx(std::numbers::pi / 4).epsilon(1e-9));
  }
}

TEST_CASE("camera heights equal ground plus altitude for random parameters") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.1, 10);
  for (int i = 0; i < 200; ++i) {
    Aabb box{Point3(-u(rng), -u(rng), -u(rng)), Point3(u(rng), u(rng), u(rng))};
    ViewPlanParams p;
    p.mode = i % 2 ? ViewPlanMode::kGrid : ViewPlanMode::kOrbit;
    p.count = 1 + static_cast<int>(u(rng));
    p.altitude = u(rng);
    p.pitch = u(rng) * 9;
    p.orbit_radius = u(rng);
    p.grid_spacing = u(rng);
    p.image = {32, 24, 50};
    const auto views = plan_views(box, p);
    REQUIRE_FALSE(views.empty());
    for (const auto& v : views) {
      CHECK(v.pose.translation.z() == box.min.z() + p.altitude);
      CHECK(v.pose.valid());
      CHECK(v.intrinsics.width == 32);
    }
  }
}

TEST_CASE("view plan validation") {
  Aabb box{Point3(0, 0, 0), Point3(1, 1, 1)};
  ViewPlanParams p;
  p.orbit_radius = 0;
  CHECK_THROWS_AS(plan_views(box, p), std::invalid_argument);
  p = {};
  p.mode = ViewPlanMode::kGrid;
  p.grid_spacing = -1;
  CHECK_THROWS_AS(plan_views(box, p), std::invalid_argument);
  p = {};
  p.count = -1;
  CHECK_THROWS_AS(plan_views(box, p), std::invalid_argument);
  p.count = 0;
  CHECK(plan_views(box, p).empty());
  p = {};
  CHECK_THROWS_AS(plan_views(Aabb{Point3(0, 0, 0), Point3(0, 1, 1)}, p), std::invalid_argument);
}
