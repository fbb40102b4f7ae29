#pragma once

// Shared by the renderer tests and the acceptance binary.

#include <cmath>
#include <random>

#include "oracles/raycast.hpp"
#include "ovhr3d/renderer.hpp"

namespace testing_support {

inline bool face_depth_consistent(const ovhr3d::RenderedView& v) {
  for (std::size_t i = 0; i < v.depth.size(); ++i) {
    const float d = v.depth.data[i];
    const bool bg = std::isinf(d);
    if (bg != (v.face_id.data[i] == ovhr3d::kNoFace)) return false;
    if (!bg && !(d > 0)) return false;
  }
  return true;
}

struct RaycastAgreement {
  std::size_t covered = 0;
  std::size_t agree = 0;
};

// Compares every pixel of a rasterized view against per-pixel ray casting.
// A pixel counts as covered when either side sees geometry; it agrees when
// both do and their depths differ by at most `tol`.
inline RaycastAgreement compare_with_raycast(const ovhr3d::TriangleMesh& mesh, const ovhr3d::RenderedView& v,
                                             double tol = 1e-4) {
  RaycastAgreement r;
  for (int y = 0; y < v.height(); ++y) {
    for (int x = 0; x < v.width(); ++x) {
      const auto hit = oracle::raycast_pixel(mesh, v.intrinsics, v.pose, x, y);
      const float d = v.depth.at(x, y);
      const bool raster = !std::isinf(d);
      if (!hit && !raster) continue;
      ++r.covered;
      if (hit && raster && std::abs(hit->depth - d) <= tol) ++r.agree;
    }
  }
  return r;
}

// One triangle in front of an identity camera, mostly inside a w x h image.
inline ovhr3d::TriangleMesh random_triangle(std::mt19937_64& rng, const ovhr3d::CameraIntrinsics& k) {
  std::uniform_real_distribution<double> z(1.0, 20.0);
  std::uniform_real_distribution<double> px(-0.2, 1.2);
  ovhr3d::TriangleMesh m;
  for (int i = 0; i < 3; ++i) {
    const double d = z(rng);
    const double u = px(rng) * k.width;
    const double v = px(rng) * k.height;
    m.vertices.push_back({(u - k.cx) * d / k.fx, (v - k.cy) * d / k.fy, d});
  }
  m.faces.push_back({0, 1, 2});
  return m;
}

}  // namespace testing_support
