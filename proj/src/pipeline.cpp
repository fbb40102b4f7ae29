#include "ovhr3d/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <thread>

#include "ovhr3d/error.hpp"
#include "ovhr3d/remote_backend.hpp"
#include "ovhr3d/wire.hpp"

namespace ovhr3d {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void mark(PipelineRun& run, Stage s) {
  if (!run.has_stage(s)) run.completed.push_back(s);
}

void unmark(PipelineRun& run, Stage s) { std::erase(run.completed, s); }

PipelineFailure failure_from(Stage stage, std::exception_ptr ep) {
  PipelineFailure f;
  f.stage = stage;
  try {
    std::rethrow_exception(ep);
  } catch (const BackendUnavailable& e) {
    f.code = "backend_unavailable";
    f.message = e.what();
  } catch (const std::invalid_argument& e) {
    f.code = "invalid_argument";
    f.message = e.what();
  } catch (const std::exception& e) {
    f.code = "error";
    f.message = e.what();
  }
  return f;
}

}  // namespace

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::kRender: return "render";
    case Stage::kDetectSegment: return "detect_segment";
    case Stage::kBackproject: return "backproject";
    case Stage::kPostprocess: return "postprocess";
  }
  return "unknown";
}

bool PipelineRun::has_stage(Stage s) const { return std::find(completed.begin(), completed.end(), s) != completed.end(); }

const RenderedView* PipelineRun::find_view(int view_id) const {
  for (const auto& v : views) {
    if (v.view_id == view_id) return &v;
  }
  return nullptr;
}

void PipelineRun::throw_if_failed() const {
  if (!failure) return;
  const std::string msg = std::string(stage_name(failure->stage)) + ": " + failure->message;
  if (failure->code == "backend_unavailable") throw BackendUnavailable(msg);
  if (failure->code == "invalid_argument") throw std::invalid_argument(msg);
  throw Error(msg);
}

// ---------------------------------------------------------------------------
// Response logs

nlohmann::json to_json(const ResponseLog& log) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : log.entries) {
    nlohmann::json insts = nlohmann::json::array();
    for (const auto& m : e.instances) {
      insts.push_back({{"class_id", m.detection.class_id},
                       {"box", {m.detection.box.x0, m.detection.box.y0, m.detection.box.x1, m.detection.box.y1}},
                       {"score", m.detection.score},
                       {"mask_rle", wire::encode_rle(m.mask)}});
    }
    entries.push_back({{"view_id", e.view_id}, {"width", e.width}, {"height", e.height}, {"instances", insts}});
  }
  return {{"format", "ovhr3d-response-log"}, {"version", 1}, {"entries", entries}};
}

ResponseLog response_log_from_json(const nlohmann::json& j) {
  auto fail = [](std::size_t index, const std::string& msg) { return ParseError("response-log", 0, index, msg); };
  try {
    if (!j.is_object() || j.value("format", "") != "ovhr3d-response-log") throw fail(0, "not a response log");
    if (j.value("version", 0) != 1) throw fail(0, "unsupported response log version");
    ResponseLog log;
    const auto& entries = j.at("entries");
    if (!entries.is_array()) throw fail(0, "entries must be an array");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      ResponseEntry out;
      out.view_id = e.at("view_id").get<int>();
      out.width = e.at("width").get<int>();
      out.height = e.at("height").get<int>();
      if (out.width <= 0 || out.height <= 0) throw fail(i, "bad image size");
      for (const auto& m : e.at("instances")) {
        MaskInstance2D inst;
        inst.detection.class_id = m.at("class_id").get<ClassId>();
        const auto& b = m.at("box");
        if (!b.is_array() || b.size() != 4) throw fail(i, "box must have 4 numbers");
        inst.detection.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        inst.detection.score = m.at("score").get<double>();
        try {
          inst.mask = wire::decode_rle(m.at("mask_rle").get<std::vector<std::uint32_t>>(), out.width, out.height);
        } catch (const std::invalid_argument& ex) {
          throw fail(i, ex.what());
        }
        out.instances.push_back(std::move(inst));
      }
      log.entries.push_back(std::move(out));
    }
    return log;
  } catch (const nlohmann::json::exception& e) {
    throw fail(0, e.what());
  }
}

std::vector<Detection> RecordingBackend::detect(const RenderedView& view, const PromptSpec& prompts) {
  return inner_->detect(view, prompts);
}

std::vector<MaskInstance2D> RecordingBackend::segment(const RenderedView& view, std::span<const Detection> boxes) {
  return inner_->segment(view, boxes);
}

std::vector<MaskInstance2D> RecordingBackend::detect_segment(const RenderedView& view, const PromptSpec& prompts) {
  auto out = inner_->detect_segment(view, prompts);
  std::lock_guard lock(mu_);
  entries_.push_back(ResponseEntry{view.view_id, view.width(), view.height(), out});
  return out;
}

ResponseLog RecordingBackend::log() const {
  std::lock_guard lock(mu_);
  ResponseLog log{entries_};
  std::stable_sort(log.entries.begin(), log.entries.end(),
                   [](const ResponseEntry& a, const ResponseEntry& b) { return a.view_id < b.view_id; });
  return log;
}

ReplayBackend::ReplayBackend(const ResponseLog& log) {
  for (const auto& e : log.entries) by_view_[e.view_id].push_back(e);
}

const ResponseEntry& ReplayBackend::next(const RenderedView& view, bool consume) {
  std::lock_guard lock(mu_);
  auto it = by_view_.find(view.view_id);
  std::size_t& cur = cursor_[view.view_id];
  if (it == by_view_.end() || cur >= it->second.size()) {
    throw BackendUnavailable("replay: no recorded response left for view " + std::to_string(view.view_id));
  }
  const ResponseEntry& e = it->second[cur];
  if (e.width != view.width() || e.height != view.height()) {
    throw BackendUnavailable("replay: recorded size for view " + std::to_string(view.view_id) +
                             " does not match the rendered view");
  }
  if (consume) ++cur;
  return e;
}

std::vector<Detection> ReplayBackend::detect(const RenderedView& view, const PromptSpec&) {
  std::vector<Detection> out;
  for (const auto& m : next(view, false).instances) out.push_back(m.detection);
  return out;
}

std::vector<MaskInstance2D> ReplayBackend::segment(const RenderedView& view, std::span<const Detection> boxes) {
  const ResponseEntry& e = next(view, true);
  std::vector<MaskInstance2D> out;
  for (const auto& d : boxes) {
    auto it = std::find_if(e.instances.begin(), e.instances.end(),
                           [&](const MaskInstance2D& m) { return m.detection == d; });
    if (it == e.instances.end()) throw BackendUnavailable("replay: box was not recorded");
    out.push_back(*it);
  }
  return out;
}

std::vector<MaskInstance2D> ReplayBackend::detect_segment(const RenderedView& view, const PromptSpec&) {
  return next(view, true).instances;
}

std::shared_ptr<PerceptionBackend> make_backend(const PipelineConfig& config,
                                                std::shared_ptr<const TriangleMesh> mesh) {
  if (config.backend.kind == BackendKind::kRemote) return std::make_shared<RemoteBackend>(config.backend.remote);
  NoiseConfig noise = config.backend.noise;
  if (noise.seed == 0) noise.seed = config.seed;
  return std::make_shared<OracleBackend>(std::move(mesh), noise);
}

// ---------------------------------------------------------------------------
// Execution

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads)
                                    : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::vector<std::exception_ptr> errors(n);
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void fuse(PipelineRun& run) {
  const auto t0 = Clock::now();
  const PointCloud& cloud = *run.cloud;
  const PipelineConfig& cfg = run.config;

  std::vector<MaskHits> all;
  for (const auto& [vid, ev] : run.evidence) {
    all.insert(all.end(), ev.hits.begin(), ev.hits.end());
  }
  run.raw_candidates = build_candidates(all);
  run.filtered_candidates.clear();

  VoteTable votes(cloud.size());
  std::vector<InstanceCandidate3D> survivors;
  if (cfg.postprocess) {
    run.filtered_candidates.resize(run.raw_candidates.size());
    parallel_for(run.raw_candidates.size(), cfg.threads, [&](std::size_t i) {
      run.filtered_candidates[i] = filter_candidate(run.raw_candidates[i], cloud, cfg.dbscan);
    });
    // build_candidates skips empty hit lists, so walk both in step.
    std::size_t c = 0;
    for (const auto& h : all) {
      if (h.hits.empty()) continue;
      const auto& f = run.filtered_candidates[c++];
      if (!f.empty()) votes.accumulate(h.key, h.class_id, h.score, f.point_indices);
    }
    for (const auto& f : run.filtered_candidates) {
      if (!f.empty()) survivors.push_back(f);
    }
    run.candidates = nms3d(std::move(survivors), cfg.nms);
  } else {
    for (const auto& h : all) {
      if (!h.hits.empty()) votes.accumulate(h.key, h.class_id, h.score, h.hits);
    }
    run.candidates = run.raw_candidates;
  }

  const auto assignment = assign_instances(run.candidates, cloud.size());
  run.candidate_instance = assignment.candidate_instance;
  LabeledPointCloud out;
  out.cloud = cloud;
  out.class_id = semantic_labels(votes, cfg.fusion);
  out.confidence = label_confidence(votes, out.class_id);
  out.instance_id = assignment.instance_id;
  run.votes = std::move(votes);
  run.labeled = std::move(out);
  run.timing.postprocess_s = seconds_since(t0);
  mark(run, Stage::kPostprocess);
}

void run_detection_pass(PipelineRun& run, PerceptionBackend& backend, const PromptSpec& prompts,
                        const std::vector<int>& view_ids) {
  if (!run.has_stage(Stage::kRender)) throw std::invalid_argument("detection pass: views are not rendered");
  std::vector<const RenderedView*> targets;
  for (int id : view_ids) {
    const RenderedView* v = run.find_view(id);
    if (!v) throw std::invalid_argument("detection pass: unknown view id " + std::to_string(id));
    if (std::find(targets.begin(), targets.end(), v) == targets.end()) targets.push_back(v);
  }
  if (targets.empty()) return;
  prompts.validate();
  if (prompts.empty()) throw std::invalid_argument("detection pass: empty prompt list");

  const auto t_start = Clock::now();
  const double render_s = run.timing.render_s;
  std::vector<ViewEvidence> fresh(targets.size());

  auto t0 = Clock::now();
  try {
    parallel_for(targets.size(), run.config.threads, [&](std::size_t i) {
      fresh[i].prompts = prompts;
      fresh[i].masks = backend.detect_segment(*targets[i], prompts);
    });
  } catch (...) {
    run.failure = failure_from(Stage::kDetectSegment, std::current_exception());
    return;
  }
  const double detect_s = seconds_since(t0);

  t0 = Clock::now();
  try {
    parallel_for(targets.size(), run.config.threads, [&](std::size_t i) {
      const RenderedView& view = *targets[i];
      const CloudProjection proj = project_cloud(*run.cloud, view);
      auto& ev = fresh[i];
      ev.hits.reserve(ev.masks.size());
      for (std::size_t m = 0; m < ev.masks.size(); ++m) {
        MaskHits h;
        h.key = VoteKey{view.view_id, static_cast<std::uint32_t>(m)};
        h.class_id = ev.masks[m].detection.class_id;
        h.score = ev.masks[m].detection.score;
        h.hits = backproject_mask(ev.masks[m], view, proj, run.config.fusion);
        ev.hits.push_back(std::move(h));
      }
    });
  } catch (...) {
    run.failure = failure_from(Stage::kBackproject, std::current_exception());
    return;
  }
  const double backproject_s = seconds_since(t0);

  for (std::size_t i = 0; i < targets.size(); ++i) run.evidence[targets[i]->view_id] = std::move(fresh[i]);
  run.failure.reset();
  run.timing.detect_segment_s = detect_s;
  run.timing.backproject_s = backproject_s;
  mark(run, Stage::kDetectSegment);
  mark(run, Stage::kBackproject);
  try {
    fuse(run);
  } catch (...) {
    unmark(run, Stage::kPostprocess);
    run.failure = failure_from(Stage::kPostprocess, std::current_exception());
  }
  run.timing.total_s = render_s + seconds_since(t_start);
}

PipelineRun render_stage(const PipelineConfig& config, std::shared_ptr<const TriangleMesh> mesh,
                         std::shared_ptr<const PointCloud> cloud) {
  config.validate();
  if (!mesh || !cloud) throw std::invalid_argument("pipeline: mesh and cloud are required");
  if (cloud->empty()) throw std::invalid_argument("pipeline: point cloud is empty");
  mesh->validate();
  cloud->validate();

  const auto t0 = Clock::now();
  PipelineRun r;
  r.config = config;
  r.mesh = std::move(mesh);
  r.cloud = std::move(cloud);
  try {
    const auto planned = plan_views(r.mesh->bounds(), config.views);
    r.views.resize(planned.size());
    parallel_for(planned.size(), config.threads, [&](std::size_t i) {
      r.views[i] = rasterize(*r.mesh, planned[i].intrinsics, planned[i].pose, static_cast<int>(i));
    });
  } catch (...) {
    r.views.clear();
    r.failure = failure_from(Stage::kRender, std::current_exception());
    r.timing.total_s = seconds_since(t0);
    return r;
  }
  r.timing.render_s = seconds_since(t0);
  r.timing.total_s = r.timing.render_s;
  mark(r, Stage::kRender);
  return r;
}

PipelineRun run(const PipelineConfig& config, std::shared_ptr<const TriangleMesh> mesh,
                std::shared_ptr<const PointCloud> cloud, PerceptionBackend& backend) {
  const auto t_start = Clock::now();
  PipelineRun r = render_stage(config, std::move(mesh), std::move(cloud));
  if (!r.ok()) return r;

  if (r.views.empty()) {
    mark(r, Stage::kDetectSegment);
    mark(r, Stage::kBackproject);
    fuse(r);
    r.timing.total_s = seconds_since(t_start);
    return r;
  }

  std::vector<int> ids;
  for (const auto& v : r.views) ids.push_back(v.view_id);
  run_detection_pass(r, backend, config.prompts, ids);
  r.timing.total_s = seconds_since(t_start);
  return r;
}

PipelineRun run(const PipelineConfig& config, std::shared_ptr<const TriangleMesh> mesh,
                std::shared_ptr<const PointCloud> cloud) {
  auto backend = make_backend(config, mesh);
  return run(config, std::move(mesh), std::move(cloud), *backend);
}

LabeledPointCloud labeled_snapshot(const PipelineRun& run, const std::vector<bool>& keep) {
  if (!run.labeled) throw std::invalid_argument("snapshot: run has no labels");
  if (keep.size() != run.candidates.size()) throw std::invalid_argument("snapshot: keep mask size mismatch");
  LabeledPointCloud out = *run.labeled;
  std::vector<bool> drop_id(run.candidates.size() + 1, false);
  for (std::size_t c = 0; c < keep.size(); ++c) {
    if (!keep[c]) drop_id[run.candidate_instance[c]] = true;
  }
  for (auto& id : out.instance_id) {
    if (id != 0 && drop_id[id]) id = 0;
  }
  return out;
}

std::optional<SegmentationMetrics> evaluate(const LabeledPointCloud& labeled) {
  if (!labeled.cloud.has_ground_truth()) return std::nullopt;
  const auto cm = confusion(labeled.class_id, labeled.cloud.gt_class);
  if (cm.total() == 0) return std::nullopt;
  return metrics(cm);
}

std::optional<SegmentationMetrics> evaluate(const PipelineRun& run) {
  if (!run.labeled) return std::nullopt;
  return evaluate(*run.labeled);
}

}  // namespace ovhr3d
