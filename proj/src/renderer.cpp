#include "ovhr3d/renderer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ovhr3d {

namespace {

constexpr double kNearPlane = 1e-4;
constexpr Rgb kFlatGray{160, 160, 160};

struct ClipVertex {
  Eigen::Vector3d cam;
  Eigen::Vector3d color;
};

struct ScreenVertex {
  double x, y;
  double inv_z;
  Eigen::Vector3d color_over_z;
};

double edge(double ax, double ay, double bx, double by, double px, double py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

// Pixel centers exactly on an edge belong to the triangle only for top and
// left edges. With positive signed area (y down), a top edge is horizontal
// with dx > 0 and a left edge has dy < 0.
bool owns_edge(const ScreenVertex& a, const ScreenVertex& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  return (dy == 0.0 && dx > 0.0) || dy < 0.0;
}

bool covers(double w, bool owned) { return w > 0.0 || (w == 0.0 && owned); }

// Sutherland-Hodgman against z >= near. A triangle yields at most a quad.
int clip_near(const std::array<ClipVertex, 3>& in, std::array<ClipVertex, 4>& out) {
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const ClipVertex& a = in[i];
    const ClipVertex& b = in[(i + 1) % 3];
    const bool a_in = a.cam.z() >= kNearPlane;
    const bool b_in = b.cam.z() >= kNearPlane;
    if (a_in) out[n++] = a;
    if (a_in != b_in) {
      const double t = (kNearPlane - a.cam.z()) / (b.cam.z() - a.cam.z());
      ClipVertex c;
      c.cam = a.cam + t * (b.cam - a.cam);
      c.cam.z() = kNearPlane;
      c.color = a.color + t * (b.color - a.color);
      out[n++] = c;
    }
  }
  return n;
}

class Rasterizer {
 public:
  Rasterizer(const CameraIntrinsics& k, RenderedView& view)
      : k_(k), view_(view), zbuf_(static_cast<std::size_t>(k.width) * k.height, std::numeric_limits<double>::infinity()) {}

  void draw(std::uint32_t face, const std::array<ClipVertex, 3>& tri) {
    std::array<ClipVertex, 4> poly;
    const int n = clip_near(tri, poly);
    for (int i = 1; i + 1 < n; ++i) draw_clipped(face, poly[0], poly[i], poly[i + 1]);
  }

  void finish() {
    for (std::size_t i = 0; i < zbuf_.size(); ++i) {
      view_.depth.data[i] = std::isfinite(zbuf_[i]) ? static_cast<float>(zbuf_[i]) : kBackgroundDepth;
    }
  }

 private:
  ScreenVertex to_screen(const ClipVertex& v) const {
    const double inv_z = 1.0 / v.cam.z();
    return {k_.cx + k_.fx * v.cam.x() * inv_z, k_.cy + k_.fy * v.cam.y() * inv_z, inv_z, v.color * inv_z};
  }

  void draw_clipped(std::uint32_t face, const ClipVertex& c0, const ClipVertex& c1, const ClipVertex& c2) {
    ScreenVertex s0 = to_screen(c0);
    ScreenVertex s1 = to_screen(c1);
    ScreenVertex s2 = to_screen(c2);
    double area = edge(s0.x, s0.y, s1.x, s1.y, s2.x, s2.y);
    if (!std::isfinite(area) || area == 0.0) return;
    if (area < 0.0) {
      std::swap(s1, s2);
      area = -area;
    }
    const double min_x = std::min({s0.x, s1.x, s2.x});
    const double max_x = std::max({s0.x, s1.x, s2.x});
    const double min_y = std::min({s0.y, s1.y, s2.y});
    const double max_y = std::max({s0.y, s1.y, s2.y});
    const int x_begin = static_cast<int>(std::max(0.0, std::ceil(min_x)));
    const int x_end = static_cast<int>(std::min<double>(k_.width - 1, std::floor(max_x)));
    const int y_begin = static_cast<int>(std::max(0.0, std::ceil(min_y)));
    const int y_end = static_cast<int>(std::min<double>(k_.height - 1, std::floor(max_y)));
    if (x_begin > x_end || y_begin > y_end) return;

    const bool own0 = owns_edge(s1, s2);
    const bool own1 = owns_edge(s2, s0);
    const bool own2 = owns_edge(s0, s1);
    const double inv_area = 1.0 / area;

    for (int y = y_begin; y <= y_end; ++y) {
      for (int x = x_begin; x <= x_end; ++x) {
        const double px = x;
        const double py = y;
        const double w0 = edge(s1.x, s1.y, s2.x, s2.y, px, py);
        const double w1 = edge(s2.x, s2.y, s0.x, s0.y, px, py);
        const double w2 = edge(s0.x, s0.y, s1.x, s1.y, px, py);
        if (!covers(w0, own0) || !covers(w1, own1) || !covers(w2, own2)) continue;
        const double l0 = w0 * inv_area;
        const double l1 = w1 * inv_area;
        const double l2 = w2 * inv_area;
        const double inv_z = l0 * s0.inv_z + l1 * s1.inv_z + l2 * s2.inv_z;
        if (!(inv_z > 0.0)) continue;
        const double z = 1.0 / inv_z;
        const std::size_t idx = static_cast<std::size_t>(y) * k_.width + x;
        if (!(z < zbuf_[idx])) continue;
        zbuf_[idx] = z;
        view_.face_id.data[idx] = face;
        const Eigen::Vector3d c = (l0 * s0.color_over_z + l1 * s1.color_over_z + l2 * s2.color_over_z) * z;
        view_.rgb.data[idx] = Rgb{to_u8(c.x()), to_u8(c.y()), to_u8(c.z())};
      }
    }
  }

  static std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

  const CameraIntrinsics& k_;
  RenderedView& view_;
  std::vector<double> zbuf_;
};

}  // namespace

RenderedView rasterize(const TriangleMesh& mesh, const CameraIntrinsics& k, const CameraPose& pose, int view_id) {
  if (!k.valid()) throw std::invalid_argument("rasterize: invalid intrinsics");
  if (!pose.valid()) throw std::invalid_argument("rasterize: invalid pose");
  mesh.validate();

  RenderedView view;
  view.view_id = view_id;
  view.intrinsics = k;
  view.pose = pose;
  view.rgb = Raster<Rgb>(k.width, k.height, Rgb{0, 0, 0});
  view.depth = Raster<float>(k.width, k.height, kBackgroundDepth);
  view.face_id = Raster<std::uint32_t>(k.width, k.height, kNoFace);

  std::vector<Eigen::Vector3d> cam(mesh.vertices.size());
  for (std::size_t i = 0; i < cam.size(); ++i) cam[i] = pose.to_camera(mesh.vertices[i]);

  auto color_of = [&](std::uint32_t v) {
    const Rgb c = mesh.has_colors() ? mesh.vertex_colors[v] : kFlatGray;
    return Eigen::Vector3d(c.r, c.g, c.b);
  };

  Rasterizer raster(k, view);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Face& face = mesh.faces[f];
    const std::array<ClipVertex, 3> tri{ClipVertex{cam[face[0]], color_of(face[0])},
                                        ClipVertex{cam[face[1]], color_of(face[1])},
                                        ClipVertex{cam[face[2]], color_of(face[2])}};
    if (tri[0].cam.z() < kNearPlane && tri[1].cam.z() < kNearPlane && tri[2].cam.z() < kNearPlane) continue;
    raster.draw(static_cast<std::uint32_t>(f), tri);
  }
  raster.finish();
  return view;
}

void ViewPlanParams::validate() const {
  if (count < 0) throw std::invalid_argument("view plan: count must be >= 0");
  if (!(altitude > 0)) throw std::invalid_argument("view plan: altitude must be > 0");
  if (!(pitch >= 0 && pitch <= 90)) throw std::invalid_argument("view plan: pitch must be within [0, 90]");
  if (mode == ViewPlanMode::kOrbit && !(orbit_radius > 0)) {
    throw std::invalid_argument("view plan: orbit_radius must be > 0 in orbit mode");
  }
  if (mode == ViewPlanMode::kGrid && !(grid_spacing > 0)) {
    throw std::invalid_argument("view plan: grid_spacing must be > 0 in grid mode");
  }
}

std::vector<PlannedView> plan_views(const Aabb& scene_bounds, const ViewPlanParams& params) {
  params.validate();
  if (!scene_bounds.non_degenerate()) throw std::invalid_argument("plan_views: degenerate scene bounds");

  const CameraIntrinsics k = CameraIntrinsics::from_fov(params.image.width, params.image.height, params.image.hfov_deg);
  const Point3 center = scene_bounds.center();
  const double height = scene_bounds.min.z() + params.altitude;
  std::vector<PlannedView> out;

  if (params.mode == ViewPlanMode::kOrbit) {
    const Point3 target = params.look_at.value_or(center);
    const double start = params.start_azimuth_deg * std::numbers::pi / 180.0;
    out.reserve(static_cast<std::size_t>(params.count));
    for (int i = 0; i < params.count; ++i) {
      const double azimuth = start + 2.0 * std::numbers::pi * i / params.count;
      const Point3 eye(center.x() + params.orbit_radius * std::cos(azimuth),
                       center.y() + params.orbit_radius * std::sin(azimuth), height);
      // Facing inward when the target sits directly below the camera.
      out.push_back({k, CameraPose::look_at(eye, target, azimuth + std::numbers::pi)});
    }
    return out;
  }

  const Eigen::Vector3d extent = scene_bounds.extent();
  const int nx = std::max(1, static_cast<int>(std::ceil(extent.x() / params.grid_spacing)));
  const int ny = std::max(1, static_cast<int>(std::ceil(extent.y() / params.grid_spacing)));
  const double start = params.start_azimuth_deg * std::numbers::pi / 180.0;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const Point3 eye(center.x() + (i - 0.5 * (nx - 1)) * params.grid_spacing,
                       center.y() + (j - 0.5 * (ny - 1)) * params.grid_spacing, height);
      for (int h = 0; h < params.count; ++h) {
        const double azimuth = start + 2.0 * std::numbers::pi * h / params.count;
        out.push_back({k, CameraPose::from_heading(eye, azimuth, params.pitch)});
      }
    }
  }
  return out;
}

}  // namespace ovhr3d
