#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ovhr3d/fusion.hpp"
#include "ovhr3d/perception.hpp"
#include "ovhr3d/postprocess.hpp"
#include "ovhr3d/remote_backend.hpp"
#include "ovhr3d/renderer.hpp"

namespace ovhr3d {

enum class BackendKind { kOracle, kRemote };

struct BackendConfig {
  BackendKind kind = BackendKind::kOracle;
  NoiseConfig noise;
  RemoteBackendConfig remote;
};

/// Everything a pipeline run needs besides its inputs.
///
/// The JSON form mirrors this struct; every key is optional and falls back
/// to the defaults below:
///
///     {
///       "prompts": [{"phrase": "crate", "class_id": 2}, ...],
///       "views": {"mode": "orbit", "count": 20, "altitude": 6.0, "pitch": 35.0,
///                 "orbit_radius": 11.0, "grid_spacing": 4.0, "start_azimuth_deg": 0.0,
///                 "look_at": [x, y, z], "width": 512, "height": 512, "hfov_deg": 60.0},
///       "fusion": {"depth_tolerance_abs": 0.01, "depth_tolerance_rel": 0.005, "min_votes": 0.0},
///       "dbscan": {"eps": 0.3, "min_pts": 8},
///       "nms": {"overlap_threshold": 0.25},
///       "postprocess": true,
///       "backend": {"kind": "oracle" | "remote", "url": "...", "box_threshold": 0.35,
///                   "text_threshold": 0.25, "retries": 3, "backoff_ms": 100,
///                   "timeout_s": 60, "max_in_flight": 4,
///                   "noise": {"box_jitter_px": 0, "drop_rate": 0, "false_positive_rate": 0,
///                             "mask_erode_dilate_px": 0, "seed": 0}},
///       "output": {"dir": "out"},
///       "seed": 7,
///       "threads": 0
///     }
struct PipelineConfig {
  PromptSpec prompts;
  ViewPlanParams views;
  FusionParams fusion;
  DbscanParams dbscan;
  NmsParams nms;
  /// DBSCAN filtering and merge-NMS; off means raw per-view candidates.
  bool postprocess = true;
  BackendConfig backend;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 7;
  /// 0 = hardware concurrency.
  int threads = 0;

  /// Throws std::invalid_argument when any component is out of range.
  void validate() const;
};

/// Unknown keys are rejected so that typos do not silently fall back to defaults.
PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const PipelineConfig& c);
PipelineConfig load_config(const std::filesystem::path& path);

nlohmann::json prompts_to_json(const PromptSpec& p);
PromptSpec prompts_from_json(const nlohmann::json& j);

}  // namespace ovhr3d
