#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "ovhr3d/config.hpp"
#include "ovhr3d/perception.hpp"
#include "ovhr3d/scene.hpp"

namespace ovhr3d {

using BackendFactory =
    std::function<std::shared_ptr<PerceptionBackend>(const PipelineConfig&, std::shared_ptr<const TriangleMesh>)>;

struct ServiceConfig {
  std::string host = "127.0.0.1";
  /// 0 picks a free port.
  int port = 8080;
  std::filesystem::path data_root = "ovhr3d-data";
  /// When set, every scene uses the remote backend at this URL.
  std::string backend_url;
  std::size_t max_upload_bytes = 256u << 20;
  /// Points per square meter sampled from meshes uploaded without a cloud.
  double sample_density = 400.0;
  /// Overrides backend construction; used to inject failures in tests.
  BackendFactory backend_factory;
};

/// Applies OVHR3D_ADDR (host:port), OVHR3D_DATA and OVHR3D_BACKEND on top of `base`.
ServiceConfig service_config_from_env(ServiceConfig base);

/// HTTP annotation service. Sessions live under `data_root` and are restored
/// by replaying their journals when the service starts.
class AnnotationService {
 public:
  explicit AnnotationService(ServiceConfig config);
  ~AnnotationService();
  AnnotationService(const AnnotationService&) = delete;
  AnnotationService& operator=(const AnnotationService&) = delete;

  /// Binds the listening socket and returns the bound port.
  int bind();
  /// Serves on the bound socket until stop(); binds first if needed.
  void serve();
  /// serve() on a background thread; returns once the socket is bound.
  int start();
  void stop();
  int port() const;

  /// Digest of all session state; reads must leave it unchanged.
  std::uint64_t state_hash() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ovhr3d
