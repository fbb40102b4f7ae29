#include <doctest.h>

#include <memory>

#include "ovhr3d/perception.hpp"
#include "support.hpp"

using namespace ovhr3d;
using testing_support::add_quad;

namespace {

// Backdrop (class 1) filling the view, a box (class 2) in front of it and a
// hidden panel (class 3) behind it.
std::shared_ptr<TriangleMesh> scene() {
  auto m = std::make_shared<TriangleMesh>();
  add_quad(*m, -100, -100, 100, 100, 5.0, 1, 1);
  add_quad(*m, -0.4, -0.3, 0.6, 0.5, 3.0, 2, 2);
  add_quad(*m, -1, -1, 1, 1, 8.0, 3, 3);
  return m;
}

RenderedView view_of(const TriangleMesh& m, int id = 0) {
  return rasterize(m, CameraIntrinsics::from_fov(80, 60, 60), CameraPose{}, id);
}

PromptSpec prompts_all() { return PromptSpec{{{"floor", 1}, {"box", 2}, {"panel", 3}}}; }

// Pixels owned by instance `inst` in `v`.
Mask visible(const RenderedView& v, const TriangleMesh& m, InstanceId inst) {
  Mask out(v.width(), v.height(), 0);
  for (int y = 0; y < v.height(); ++y)
    for (int x = 0; x < v.width(); ++x) {
      const auto f = v.face_id.at(x, y);
      if (f != kNoFace && m.face_instance[f] == inst) out.at(x, y) = 1;
    }
  return out;
}

}  // namespace

TEST_CASE("oracle boxes are tight around visible pixels") {
  const auto m = scene();
  const auto v = view_of(*m);
  OracleBackend oracle(m);
  const auto out = oracle.detect_segment(v, prompts_all());
  REQUIRE(out.size() == 2);
  const auto& box = out[1];
  CHECK(box.detection.class_id == 2);
  CHECK(box.detection.score == 1.0);
  const Mask expected = visible(v, *m, 2);
  CHECK(box.mask == expected);
  int min_x = v.width(), min_y = v.height(), max_x = -1, max_y = -1;
  for (int y = 0; y < v.height(); ++y)
    for (int x = 0; x < v.width(); ++x)
      if (expected.at(x, y)) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
  CHECK(box.detection.box == Box{double(min_x), double(min_y), double(max_x + 1), double(max_y + 1)});
  CHECK(out[0].detection.class_id == 1);
  CHECK(out[0].detection.box == Box{0, 0, 80, 60});
}

TEST_CASE("unprompted and hidden classes are not detected") {
  const auto m = scene();
  const auto v = view_of(*m);
  OracleBackend oracle(m);
  CHECK(oracle.detect(v, PromptSpec{{{"panel", 3}}}).empty());
  CHECK(oracle.detect(v, PromptSpec{{{"nothing", 9}}}).empty());
  const auto only_box = oracle.detect(v, PromptSpec{{{"box", 2}}});
  REQUIRE(only_box.size() == 1);
  CHECK(only_box[0].class_id == 2);
}

TEST_CASE("segment returns visible pixels of the boxed instance in input order") {
  const auto m = scene();
  const auto v = view_of(*m);
  OracleBackend oracle(m);
  const auto dets = oracle.detect(v, prompts_all());
  REQUIRE(dets.size() == 2);
  const std::vector<Detection> reversed{dets[1], dets[0]};
  const auto masks = oracle.segment(v, reversed);
  REQUIRE(masks.size() == 2);
  CHECK(masks[0].detection == dets[1]);
  CHECK(masks[0].mask == visible(v, *m, 2));
  CHECK(masks[1].detection == dets[0]);
  CHECK(masks[1].mask == visible(v, *m, 1));
}

TEST_CASE("a box over background yields an empty mask") {
  auto m = std::make_shared<TriangleMesh>();
  add_quad(*m, -0.2, -0.2, 0.2, 0.2, 4.0, 2, 2);
  const auto v = view_of(*m);
  OracleBackend oracle(m);
  const Detection d{2, Box{0, 0, 1, 1}, 0.9};
  const auto masks = oracle.segment(v, std::span<const Detection>(&d, 1));
  REQUIRE(masks.size() == 1);
  CHECK(masks[0].pixel_count() == 0);
  CHECK(masks[0].detection.box == Box{0, 0, 1, 1});
}

TEST_CASE("noise knobs") {
  const auto m = scene();
  const auto v = view_of(*m);
  const auto clean = oracle_with_noise(v, *m, prompts_all(), NoiseConfig{});

  SUBCASE("zero noise with any seed is the identity") {
    NoiseConfig n;
    n.seed = 1234;
    CHECK(oracle_with_noise(v, *m, prompts_all(), n) == clean);
  }
  SUBCASE("drop rate one removes everything") {
    NoiseConfig n;
    n.drop_rate = 1.0;
    CHECK(oracle_with_noise(v, *m, prompts_all(), n).empty());
  }
  SUBCASE("false positive rate one adds exactly one low-score detection") {
    NoiseConfig n;
    n.false_positive_rate = 1.0;
    const auto out = oracle_with_noise(v, *m, prompts_all(), n);
    REQUIRE(out.size() == clean.size() + 1);
    CHECK(out.back().detection.score < 1.0);
    CHECK(out.back().detection.box.within(v.width(), v.height()));
  }
  SUBCASE("noisy output is deterministic and stays in bounds") {
    NoiseConfig n{3.0, 0.2, 0.5, 2, 99};
    for (int id = 0; id < 20; ++id) {
      const auto vi = view_of(*m, id);
      const auto a = oracle_with_noise(vi, *m, prompts_all(), n);
      CHECK(a == oracle_with_noise(vi, *m, prompts_all(), n));
      for (const auto& inst : a) {
        CHECK(inst.detection.box.within(v.width(), v.height()));
        for (int y = 0; y < v.height(); ++y)
          for (int x = 0; x < v.width(); ++x)
            if (inst.mask.at(x, y)) CHECK(inst.detection.box.contains_pixel(x, y));
      }
    }
  }
  SUBCASE("invalid noise is rejected") {
    NoiseConfig n;
    n.drop_rate = 1.5;
    CHECK_THROWS_AS(oracle_with_noise(v, *m, prompts_all(), n), std::invalid_argument);
    n = {};
    n.box_jitter_px = -1;
    CHECK_THROWS_AS(OracleBackend(m, n), std::invalid_argument);
  }
}

TEST_CASE("oracle requires face ids and labels") {
  const auto m = scene();
  auto v = view_of(*m);
  v.face_id = {};
  OracleBackend oracle(m);
  CHECK_THROWS_AS(oracle.detect(v, prompts_all()), std::invalid_argument);

  auto unlabeled = std::make_shared<TriangleMesh>();
  add_quad(*unlabeled, -1, -1, 1, 1, 3.0);
  OracleBackend bare(unlabeled);
  CHECK_THROWS_AS(bare.detect(view_of(*unlabeled), prompts_all()), std::invalid_argument);
}

TEST_CASE("prompt validation") {
  CHECK_NOTHROW(prompts_all().validate());
  CHECK_THROWS_AS((PromptSpec{{{"", 1}}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((PromptSpec{{{"a", 0}}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((PromptSpec{{{"a", 1}, {"a", 2}}}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((PromptSpec{{{"a", 1}, {"b", 1}}}.validate()), std::invalid_argument);
  const auto p = prompts_all();
  CHECK(p.contains(2));
  CHECK_FALSE(p.contains(4));
  CHECK(p.index_of(3) == 2u);
  CHECK(p.phrases() == std::vector<std::string>{"floor", "box", "panel"});
}

TEST_CASE("box extents and clamping") {
  const Box b{1.2, 2.7, 5.1, 6.0};
  CHECK(b.col_begin() == 1);
  CHECK(b.col_end() == 6);
  CHECK(b.row_begin() == 2);
  CHECK(b.row_end() == 6);
  const Box c = Box{-5, -5, 200, 3}.clamped(80, 60);
  CHECK(c.within(80, 60));
  CHECK(c.col_begin() == 0);
  CHECK(c.col_end() == 80);
  const Box degenerate = Box{90, 70, 95, 75}.clamped(80, 60);
  CHECK(degenerate.within(80, 60));
  CHECK(degenerate.col_end() - degenerate.col_begin() >= 1);

  MaskInstance2D inst{Detection{1, Box{2, 2, 4, 4}, 1}, Mask(6, 6, 1)};
  CHECK(clamp_mask_to_box(inst) == 32u);
  CHECK(inst.pixel_count() == 4u);
}
