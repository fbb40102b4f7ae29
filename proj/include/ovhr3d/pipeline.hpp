#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovhr3d/config.hpp"
#include "ovhr3d/fusion.hpp"
#include "ovhr3d/metrics.hpp"
#include "ovhr3d/perception.hpp"
#include "ovhr3d/postprocess.hpp"
#include "ovhr3d/renderer.hpp"
#include "ovhr3d/scene.hpp"

namespace ovhr3d {

enum class Stage { kRender, kDetectSegment, kBackproject, kPostprocess };
const char* stage_name(Stage s);

/// What one detection pass produced for one view.
struct ViewEvidence {
  PromptSpec prompts;
  std::vector<MaskInstance2D> masks;
  /// Aligned with `masks`; hit lists may be empty.
  std::vector<MaskHits> hits;
};

struct PipelineFailure {
  Stage stage = Stage::kRender;
  /// "backend_unavailable", "invalid_argument" or "error".
  std::string code;
  std::string message;
};

struct PipelineRun {
  PipelineConfig config;
  std::shared_ptr<const TriangleMesh> mesh;
  std::shared_ptr<const PointCloud> cloud;

  std::vector<RenderedView> views;
  std::map<int, ViewEvidence> evidence;
  std::optional<VoteTable> votes;
  std::vector<InstanceCandidate3D> raw_candidates;
  /// Aligned with `raw_candidates`; empty entries were all noise. Absent when
  /// post-processing is off.
  std::vector<InstanceCandidate3D> filtered_candidates;
  std::vector<InstanceCandidate3D> candidates;
  std::vector<InstanceId> candidate_instance;
  std::optional<LabeledPointCloud> labeled;
  TimingReport timing;
  std::vector<Stage> completed;
  std::optional<PipelineFailure> failure;

  bool ok() const { return !failure.has_value(); }
  bool has_stage(Stage s) const;
  const RenderedView* find_view(int view_id) const;
  /// Rethrows the recorded failure as an Error subclass.
  void throw_if_failed() const;
};

/// Mask outputs served by a backend, recorded for offline replay.
struct ResponseEntry {
  int view_id = 0;
  int width = 0;
  int height = 0;
  std::vector<MaskInstance2D> instances;
  friend bool operator==(const ResponseEntry&, const ResponseEntry&) = default;
};

struct ResponseLog {
  std::vector<ResponseEntry> entries;
  friend bool operator==(const ResponseLog&, const ResponseLog&) = default;
};

nlohmann::json to_json(const ResponseLog& log);
/// Throws ParseError on a malformed log.
ResponseLog response_log_from_json(const nlohmann::json& j);

/// Wraps a backend and records every detect_segment response.
class RecordingBackend final : public PerceptionBackend {
 public:
  explicit RecordingBackend(std::shared_ptr<PerceptionBackend> inner) : inner_(std::move(inner)) {}

  std::vector<Detection> detect(const RenderedView& view, const PromptSpec& prompts) override;
  std::vector<MaskInstance2D> segment(const RenderedView& view, std::span<const Detection> boxes) override;
  std::vector<MaskInstance2D> detect_segment(const RenderedView& view, const PromptSpec& prompts) override;

  /// Entries sorted by view id; calls for one view keep their order.
  ResponseLog log() const;

 private:
  std::shared_ptr<PerceptionBackend> inner_;
  mutable std::mutex mu_;
  std::vector<ResponseEntry> entries_;
};

/// Serves recorded responses. Each view's entries are handed out in order;
/// asking for a view with nothing left throws BackendUnavailable.
class ReplayBackend final : public PerceptionBackend {
 public:
  explicit ReplayBackend(const ResponseLog& log);

  std::vector<Detection> detect(const RenderedView& view, const PromptSpec& prompts) override;
  std::vector<MaskInstance2D> segment(const RenderedView& view, std::span<const Detection> boxes) override;
  std::vector<MaskInstance2D> detect_segment(const RenderedView& view, const PromptSpec& prompts) override;

 private:
  const ResponseEntry& next(const RenderedView& view, bool consume);

  std::mutex mu_;
  std::map<int, std::vector<ResponseEntry>> by_view_;
  std::map<int, std::size_t> cursor_;
};

std::shared_ptr<PerceptionBackend> make_backend(const PipelineConfig& config,
                                                std::shared_ptr<const TriangleMesh> mesh);

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// concurrency). The exception of the smallest failing index is rethrown.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Validates inputs, plans and renders views. Rendering failures are recorded in `failure`.
PipelineRun render_stage(const PipelineConfig& config, std::shared_ptr<const TriangleMesh> mesh,
                         std::shared_ptr<const PointCloud> cloud);

/// Plans and renders views, runs one detection pass over all of them with
/// the configured prompts and fuses. Backend failures do not throw; the run
/// carries the completed stages and `failure`.
PipelineRun run(const PipelineConfig& config, std::shared_ptr<const TriangleMesh> mesh,
                std::shared_ptr<const PointCloud> cloud, PerceptionBackend& backend);
/// Same, with the backend built from the config.
PipelineRun run(const PipelineConfig& config, std::shared_ptr<const TriangleMesh> mesh,
                std::shared_ptr<const PointCloud> cloud);

/// Re-detects `view_ids` with `prompts`, replaces their evidence and refuses
/// every view. Throws std::invalid_argument for unknown view ids or when the
/// run has no rendered views. A backend failure leaves the previous evidence
/// and labels in place and sets `failure`.
void run_detection_pass(PipelineRun& run, PerceptionBackend& backend, const PromptSpec& prompts,
                        const std::vector<int>& view_ids);

/// Rebuilds votes, candidates and labels from the evidence currently held.
void fuse(PipelineRun& run);

/// Labeled cloud where points of candidates not in `keep` lose their
/// instance id. Semantic labels are unaffected.
LabeledPointCloud labeled_snapshot(const PipelineRun& run, const std::vector<bool>& keep);

/// Present when the cloud carries ground truth and labels exist.
std::optional<SegmentationMetrics> evaluate(const PipelineRun& run);
std::optional<SegmentationMetrics> evaluate(const LabeledPointCloud& labeled);

}  // namespace ovhr3d
