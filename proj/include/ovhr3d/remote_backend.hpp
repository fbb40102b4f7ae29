#pragma once

#include <memory>
#include <semaphore>
#include <string>

#include "ovhr3d/perception.hpp"

namespace ovhr3d {

struct RemoteBackendConfig {
  /// e.g. "http://127.0.0.1:8500"; an optional path prefix is kept.
  std::string url;
  double box_threshold = 0.35;
  double text_threshold = 0.25;
  /// Attempts after the first one for transport errors and 5xx/429 replies.
  int retries = 3;
  int backoff_ms = 100;
  double timeout_s = 60.0;
  int max_in_flight = 4;
};

/// Client for a model server speaking POST /v1/detect_segment.
///
/// Out-of-frame boxes and mask pixels outside their box are clamped and
/// logged. Transport failures, non-200 replies and malformed bodies surface
/// as BackendUnavailable.
class RemoteBackend final : public PerceptionBackend {
 public:
  explicit RemoteBackend(RemoteBackendConfig config);

  std::vector<Detection> detect(const RenderedView& view, const PromptSpec& prompts) override;
  std::vector<MaskInstance2D> segment(const RenderedView& view, std::span<const Detection> boxes) override;
  std::vector<MaskInstance2D> detect_segment(const RenderedView& view, const PromptSpec& prompts) override;

  const RemoteBackendConfig& config() const { return config_; }

 private:
  std::string post(const std::string& body);

  RemoteBackendConfig config_;
  std::string host_;
  std::string path_prefix_;
  std::counting_semaphore<1024> in_flight_;
};

}  // namespace ovhr3d
