#include <doctest.h>

#include <random>

#include "generators.hpp"
#include "oracles/metrics_ref.hpp"
#include "ovhr3d/metrics.hpp"

using namespace ovhr3d;

TEST_CASE("hand-computed two-class case") {
  const auto c = testing_support::hand_metrics_case();
  const auto cm = confusion(c.pred, c.gt);
  CHECK(cm.classes == std::vector<ClassId>{0, 1, 2});
  CHECK(cm.at(*cm.index_of(1), *cm.index_of(0)) == 5u);
  CHECK(cm.at(*cm.index_of(2), *cm.index_of(1)) == 10u);
  CHECK(cm.total() == 95u);
  const auto m = metrics(cm);
  CHECK(m.class_iou.at(1) == doctest::Approx(40.0 / 60.0).epsilon(1e-12));
  CHECK(m.class_iou.at(2) == doctest::Approx(30.0 / 50.0).epsilon(1e-12));
  CHECK(std::abs(m.miou - 0.633333333333333) < 1e-9);
  CHECK(m.accuracy == doctest::Approx(70.0 / 95.0));
}

TEST_CASE("perfect prediction") {
  const std::vector<ClassId> gt{1, 2, 2, 3, 0};
  const auto m = metrics(confusion(gt, gt));
  CHECK(m.accuracy == 1.0);
  CHECK(m.miou == 1.0);
  CHECK(m.class_iou.size() == 3);
}

TEST_CASE("ignored ground truth is skipped and ignored predictions are misses") {
  const std::vector<ClassId> gt{0, 0, 1, 1};
  const std::vector<ClassId> pred{1, 2, 1, 0};
  const auto cm = confusion(pred, gt);
  CHECK(cm.total() == 2u);
  const auto m = metrics(cm);
  CHECK(m.accuracy == 0.5);
  CHECK(m.class_iou.size() == 1);
  CHECK(m.class_iou.at(1) == 0.5);
}

TEST_CASE("classes only predicted still count") {
  const std::vector<ClassId> gt{1, 1};
  const std::vector<ClassId> pred{1, 4};
  const auto m = metrics(confusion(pred, gt));
  CHECK(m.class_iou.at(4) == 0.0);
  CHECK(m.miou == doctest::Approx(0.25));
}

TEST_CASE("errors") {
  const std::vector<ClassId> a{1, 2};
  const std::vector<ClassId> b{1};
  CHECK_THROWS_AS(confusion(a, b), std::invalid_argument);
  const std::vector<ClassId> zeros{0, 0};
  CHECK_THROWS_AS(metrics(confusion(a, zeros)), std::invalid_argument);
}

TEST_CASE("random label pairs match an independent tally") {
  std::mt19937_64 rng(314);
  for (int t = 0; t < 100; ++t) {
    const auto c = testing_support::random_label_pair(rng);
    const auto m = metrics(confusion(c.pred, c.gt));
    const auto ref = oracle::metrics_reference(c.pred, c.gt);
    CHECK(m.accuracy == doctest::Approx(ref.accuracy).epsilon(1e-12));
    CHECK(m.miou == doctest::Approx(ref.miou).epsilon(1e-12));
    REQUIRE(m.class_iou.size() == ref.iou.size());
    for (const auto& [cls, iou] : ref.iou) CHECK(m.class_iou.at(cls) == doctest::Approx(iou).epsilon(1e-12));
  }
}

TEST_CASE("report formatting") {
  const auto c = testing_support::hand_metrics_case();
  const auto m = metrics(confusion(c.pred, c.gt));
  const auto j = to_json(m, {{1, "tree"}, {2, "road"}});
  CHECK(j["miou"].get<double>() == doctest::Approx(m.miou));
  const auto table = format_table("demo", m, {{1, "tree"}, {2, "road"}});
  CHECK(table.find("demo") != std::string::npos);
  CHECK(table.find("tree") != std::string::npos);
  CHECK(table.find("63.33") != std::string::npos);

  TimingReport t{1, 2, 3, 4, 10};
  CHECK(t.stage_sum() == 10);
  CHECK(to_json(t)["total_s"].get<double>() == 10);
}
