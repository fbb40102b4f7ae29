// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit when any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "cli_support.hpp"
#include "generators.hpp"
#include "io_cases.hpp"
#include "oracles/dbscan_ref.hpp"
#include "oracles/metrics_ref.hpp"
#include "oracles/nms_ref.hpp"
#include "ovhr3d/io.hpp"
#include "ovhr3d/metrics.hpp"
#include "ovhr3d/pipeline.hpp"
#include "ovhr3d/postprocess.hpp"
#include "ovhr3d/synthetic.hpp"
#include "rendering_checks.hpp"
#include "support.hpp"

using namespace ovhr3d;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s  %-34s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

struct Scene {
  std::shared_ptr<const TriangleMesh> mesh;
  std::shared_ptr<const PointCloud> cloud;
  PipelineConfig config;
  std::size_t objects = 0;
};

// Seed 7, six objects plus ground, 450 points per square meter, 20 orbit
// views at 512x512.
const Scene& acceptance_scene() {
  static const Scene s = [] {
    SyntheticSceneParams p;
    p.seed = 7;
    p.object_count = 6;
    auto syn = generate_synthetic_scene(p);
    Scene out;
    out.config = syn.config;
    out.config.views.mode = ViewPlanMode::kOrbit;
    out.config.views.count = 20;
    out.config.views.image.width = 512;
    out.config.views.image.height = 512;
    out.objects = static_cast<std::size_t>(p.object_count);
    out.mesh = std::make_shared<const TriangleMesh>(std::move(syn.mesh));
    out.cloud = std::make_shared<const PointCloud>(std::move(syn.cloud));
    return out;
  }();
  return s;
}

Outcome end_to_end_clean() {
  const auto& s = acceptance_scene();
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = run(s.config, s.mesh, s.cloud);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.throw_if_failed();
  const auto m = evaluate(r);
  if (!m) return {false, "no metrics"};
  const bool ok = s.objects >= 5 && s.cloud->size() >= 50000 && r.views.size() == 20 && m->accuracy >= 0.97 &&
                  m->miou >= 0.90 && secs < 120.0;
  return {ok, fmt("accuracy %.4f (>= 0.97), mIoU %.4f (>= 0.90), %.1f s (< 120), ", m->accuracy, m->miou, secs) +
                  std::to_string(s.cloud->size()) + " points, " + std::to_string(s.objects) + " objects"};
}

Outcome end_to_end_noisy() {
  const auto& s = acceptance_scene();
  auto on = s.config;
  on.backend.noise = NoiseConfig{3.0, 0.05, 1.0, 2, 20240607};
  auto off = on;
  off.postprocess = false;
  const auto r_on = run(on, s.mesh, s.cloud);
  const auto r_off = run(off, s.mesh, s.cloud);
  r_on.throw_if_failed();
  r_off.throw_if_failed();
  const double m_on = evaluate(r_on)->miou;
  const double m_off = evaluate(r_off)->miou;
  const bool ok = m_on >= 0.75 && m_on - m_off > 0;
  return {ok, fmt("mIoU on %.6f (>= 0.75), off %.6f, delta %+.6f (> 0)", m_on, m_off, m_on - m_off)};
}

Outcome projection_round_trip() {
  std::mt19937_64 rng(1001);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> z(0.05, 200.0);
  std::uniform_int_distribution<int> size(16, 4096);
  std::uniform_real_distribution<double> fov(20.0, 120.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const auto pose = testing_support::random_pose(rng, 100.0);
    const auto k = CameraIntrinsics::from_fov(size(rng), size(rng), fov(rng));
    const double d = z(rng);
    const Point3 p = pose.to_world(Eigen::Vector3d(u(rng) * d, u(rng) * d, d));
    const auto proj = project_point(p, k, pose);
    if (!proj) return {false, "point in front of the camera reported behind"};
    const Point3 back = unproject_pixel(proj->pixel, proj->depth, k, pose);
    worst = std::max(worst, (back - p).norm());
  }
  return {worst < 1e-6, fmt("max error %.3g m over 10^4 points (< 1e-6)", worst)};
}

Outcome rasterizer_vs_raycast() {
  std::mt19937_64 rng(2002);
  std::size_t covered = 0;
  std::size_t agree = 0;
  bool invariant = true;
  for (int t = 0; t < 100; ++t) {
    const auto k = CameraIntrinsics::from_fov(96 + static_cast<int>(rng() % 64), 64 + static_cast<int>(rng() % 64), 60);
    const auto pose = testing_support::random_pose(rng, 5.0);
    auto tri = testing_support::random_triangle(rng, k);
    for (auto& v : tri.vertices) v = pose.to_world(v);
    const auto view = rasterize(tri, k, pose);
    invariant = invariant && testing_support::face_depth_consistent(view);
    const auto r = testing_support::compare_with_raycast(tri, view);
    covered += r.covered;
    agree += r.agree;
  }
  const double frac = covered ? static_cast<double>(agree) / covered : 0.0;
  return {frac >= 0.999 && invariant && covered > 0,
          fmt("%.5f of %.0f covered pixels agree within 1e-4 (>= 0.999), ", frac, double(covered)) +
              (invariant ? "face_id/depth invariant holds" : "face_id/depth invariant VIOLATED")};
}

Outcome dbscan_equivalence() {
  std::mt19937_64 rng(3003);
  int mismatches = 0;
  std::size_t largest = 0;
  for (int t = 0; t < 200; ++t) {
    auto c = testing_support::random_dbscan_case(rng);
    // Extra clutter pushes some instances toward the 500-point bound.
    std::uniform_real_distribution<double> u(0.0, 8.0);
    const std::size_t extra = rng() % 160;
    for (std::size_t i = 0; i < extra && c.points.size() < 500; ++i) c.points.emplace_back(u(rng), u(rng), u(rng) / 3);
    largest = std::max(largest, c.points.size());
    const auto got = dbscan(c.points, {c.eps, c.min_pts}).labels;
    const auto ref = oracle::dbscan_reference(c.points, c.eps, c.min_pts);
    if (oracle::canonical_partition(got) != oracle::canonical_partition(ref)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " of 200 partitions differ (n <= " + std::to_string(largest) + ")"};
}

Outcome nms_equivalence() {
  std::mt19937_64 rng(4004);
  int mismatches = 0;
  int violations = 0;
  for (int t = 0; t < 200; ++t) {
    const auto cands = testing_support::random_nms_case(rng);
    const double thr = std::uniform_real_distribution<double>(0.05, 0.8)(rng);
    const auto out = nms3d(cands, {thr});
    if (out != oracle::nms_reference(cands, thr)) ++mismatches;
    for (std::size_t i = 0; i < out.size(); ++i)
      for (std::size_t j = i + 1; j < out.size(); ++j)
        if (out[i].class_id == out[j].class_id && point_iou(out[i].point_indices, out[j].point_indices) > thr)
          ++violations;
  }
  return {mismatches == 0 && violations == 0, std::to_string(mismatches) + " of 200 outputs differ, " +
                                                  std::to_string(violations) + " same-class pairs above threshold"};
}

Outcome metrics_oracle() {
  std::mt19937_64 rng(5005);
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const auto c = testing_support::random_label_pair(rng);
    const auto cm = confusion(c.pred, c.gt);
    const auto m = metrics(cm);
    const auto ref = oracle::metrics_reference(c.pred, c.gt);
    std::uint64_t tallied = 0;
    for (auto g : c.gt) tallied += g != kUnlabeled;
    bool same = cm.total() == tallied && std::abs(m.accuracy - ref.accuracy) < 1e-12 &&
                std::abs(m.miou - ref.miou) < 1e-12 && m.class_iou.size() == ref.iou.size();
    for (const auto& [cls, iou] : ref.iou) same = same && m.class_iou.count(cls) && std::abs(m.class_iou.at(cls) - iou) < 1e-12;
    if (!same) ++mismatches;
  }
  const auto hand = testing_support::hand_metrics_case();
  const double miou = metrics(confusion(hand.pred, hand.gt)).miou;
  const double expected = (40.0 / 60.0 + 30.0 / 50.0) / 2.0;
  const bool ok = mismatches == 0 && std::abs(miou - 0.6333333333333333) <= 1e-9 && std::abs(miou - expected) <= 1e-12;
  return {ok, std::to_string(mismatches) + " of 100 random cases differ; hand case mIoU " + fmt("%.10f (0.6333 +- 1e-9)", miou)};
}

Outcome io_round_trips_and_fuzz() {
  std::mt19937_64 rng(6006);
  int bad_round_trips = 0;
  for (int t = 0; t < 50; ++t) {
    const auto m = testing_support::random_mesh(rng, t % 2 == 0, t % 3 == 0);
    const auto ply = serialize_mesh_ply(m);
    const auto back = parse_ply_mesh(ply);
    if (serialize_mesh_ply(back) != ply || back.faces != m.faces || back.face_class != m.face_class ||
        std::memcmp(back.vertices.data(), m.vertices.data(), m.vertices.size() * sizeof(Point3)) != 0)
      ++bad_round_trips;

    const auto c = testing_support::random_labeled_cloud(rng, rng() % 200, t % 2 == 0, t % 3 == 0);
    const auto bytes = serialize_labeled_cloud(c);
    const auto cb = parse_labeled_cloud(bytes);
    if (serialize_labeled_cloud(cb) != bytes || cb.class_id != c.class_id || cb.instance_id != c.instance_id ||
        cb.confidence != c.confidence || cb.cloud.colors != c.cloud.colors || cb.cloud.gt_class != c.cloud.gt_class)
      ++bad_round_trips;

    Raster<float> depth(1 + rng() % 40, 1 + rng() % 40);
    for (auto& v : depth.data) v = (rng() % 5 == 0) ? std::numeric_limits<float>::infinity() : static_cast<float>(rng() % 100000) / 7.0f;
    if (encode_depth(decode_depth(encode_depth(depth))) != encode_depth(depth)) ++bad_round_trips;
    Raster<std::uint32_t> ids(depth.width, depth.height);
    for (auto& v : ids.data) v = static_cast<std::uint32_t>(rng());
    if (decode_face_ids(encode_face_ids(ids)) != ids) ++bad_round_trips;
  }
  // The OBJ reader has no writer counterpart; check the fixture parses to its three faces.
  const auto obj = parse_obj(testing_support::sample_obj());
  if (obj.faces.size() != 3) ++bad_round_trips;

  const auto targets = testing_support::fuzz_targets();
  int unstructured = 0;
  int structured = 0;
  std::string first;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    std::string what;
    const auto o = testing_support::fuzz_once(seed, targets, &what);
    if (o == testing_support::FuzzOutcome::kUnstructured) {
      if (unstructured++ == 0) first = what;
    }
    structured += o == testing_support::FuzzOutcome::kStructuredError;
  }
  return {bad_round_trips == 0 && unstructured == 0,
          std::to_string(bad_round_trips) + " round-trip mismatches; fuzz 10^4 seeds: " + std::to_string(structured) +
              " structured errors, " + std::to_string(unstructured) + " unstructured" +
              (first.empty() ? "" : " (first: " + first + ")")};
}

Outcome cli_determinism() {
  const fs::path dir = fs::temp_directory_path() / ("ovhr3d-accept-" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  const std::string cli = testing_support::cli();
  const auto synth = testing_support::run_command(cli + " synth --seed 7 --out " + (dir / "scene").string());
  if (synth.exit_code != 0) return {false, "synth failed"};
  const std::string args = " pipeline --backend oracle --seed 7 --mesh " + (dir / "scene/mesh.ply").string() + " --cloud " +
                           (dir / "scene/cloud.ply").string() + " --config " + (dir / "scene/config.json").string();
  const auto a = testing_support::run_command(cli + args + " --out " + (dir / "a").string());
  const auto b = testing_support::run_command(cli + args + " --out " + (dir / "b").string());
  Outcome o;
  if (a.exit_code != 0 || b.exit_code != 0) {
    o = {false, "pipeline exited with " + std::to_string(a.exit_code) + "/" + std::to_string(b.exit_code)};
  } else {
    const bool ply = read_file(dir / "a/labeled.ply") == read_file(dir / "b/labeled.ply");
    const bool mj = read_file(dir / "a/metrics.json") == read_file(dir / "b/metrics.json");
    o = {ply && mj, std::string("labeled PLY ") + (ply ? "identical" : "DIFFERS") + ", metrics JSON " +
                        (mj ? "identical" : "DIFFERS")};
  }
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main() {
  criterion("end-to-end synthetic, noise-free", end_to_end_clean);
  criterion("end-to-end synthetic, noisy oracle", end_to_end_noisy);
  criterion("projection round trip", projection_round_trip);
  criterion("rasterizer vs ray-cast oracle", rasterizer_vs_raycast);
  criterion("DBSCAN equivalence", dbscan_equivalence);
  criterion("nms3d equivalence", nms_equivalence);
  criterion("metrics oracle", metrics_oracle);
  criterion("I/O round trips and fuzzing", io_round_trips_and_fuzz);
  criterion("CLI determinism", cli_determinism);
  std::printf("%s: %d criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
