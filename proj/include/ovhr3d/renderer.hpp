#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "ovhr3d/geometry.hpp"
#include "ovhr3d/raster.hpp"
#include "ovhr3d/scene.hpp"

namespace ovhr3d {

inline constexpr std::uint32_t kNoFace = 0xFFFFFFFFu;
inline constexpr float kBackgroundDepth = std::numeric_limits<float>::infinity();

struct RenderedView {
  int view_id = 0;
  Raster<Rgb> rgb;
  /// z-depth in meters, +inf where nothing was hit.
  Raster<float> depth;
  /// Index of the visible face, kNoFace exactly where depth is +inf.
  Raster<std::uint32_t> face_id;
  CameraIntrinsics intrinsics;
  CameraPose pose;

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
  bool has_face_ids() const { return !face_id.empty(); }
};

/// Z-buffered perspective rasterization. No back-face culling; equal depths
/// keep the lower face index; pixel centers on shared edges follow the
/// top-left rule. Vertex colors are interpolated perspective-correctly,
/// flat gray without colors.
RenderedView rasterize(const TriangleMesh& mesh, const CameraIntrinsics& k, const CameraPose& pose, int view_id = 0);

enum class ViewPlanMode { kOrbit, kGrid };

struct ImageParams {
  int width = 512;
  int height = 512;
  double hfov_deg = 60.0;
};

struct ViewPlanParams {
  ViewPlanMode mode = ViewPlanMode::kOrbit;
  /// Orbit: total number of cameras. Grid: headings per lattice node. Zero
  /// plans no views.
  int count = 20;
  /// Meters above the scene's ground elevation (the minimum z of its bounds).
  double altitude = 6.0;
  /// Degrees below horizontal. Used by grid mode; orbit cameras aim at look_at.
  double pitch = 35.0;
  double orbit_radius = 11.0;
  double grid_spacing = 4.0;
  /// Azimuth of the first orbit camera, degrees from world +x.
  double start_azimuth_deg = 0.0;
  std::optional<Point3> look_at;
  ImageParams image;

  void validate() const;
};

struct PlannedView {
  CameraIntrinsics intrinsics;
  CameraPose pose;
};

std::vector<PlannedView> plan_views(const Aabb& scene_bounds, const ViewPlanParams& params);

}  // namespace ovhr3d
