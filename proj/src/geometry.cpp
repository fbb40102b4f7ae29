#include "ovhr3d/geometry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Geometry>

namespace ovhr3d {

bool CameraIntrinsics::valid() const {
  return std::isfinite(fx) && std::isfinite(fy) && fx > 0 && fy > 0 && width >= 1 && height >= 1 && cx >= 0 &&
         cx < width && cy >= 0 && cy < height;
}

CameraIntrinsics CameraIntrinsics::from_fov(int width, int height, double hfov_deg) {
  if (width < 1 || height < 1) throw std::invalid_argument("image size must be at least 1x1");
  if (!(hfov_deg > 0 && hfov_deg < 180)) throw std::invalid_argument("field of view must be in (0, 180) degrees");
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.fx = 0.5 * width / std::tan(0.5 * hfov_deg * std::numbers::pi / 180.0);
  k.fy = k.fx;
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  return k;
}

bool CameraPose::valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
  if (err.cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

CameraPose CameraPose::from_forward(const Point3& eye, const Eigen::Vector3d& forward, double fallback_azimuth) {
  const double norm = forward.norm();
  if (!(norm > 0) || !std::isfinite(norm)) throw std::invalid_argument("camera forward direction is degenerate");
  const Eigen::Vector3d f = forward / norm;
  const double horizontal = std::hypot(f.x(), f.y());
  const double azimuth = horizontal > 1e-12 ? std::atan2(f.y(), f.x()) : fallback_azimuth;
  // Horizontal and perpendicular to the heading, so orthogonal to f for any pitch.
  const Eigen::Vector3d right(std::sin(azimuth), -std::cos(azimuth), 0.0);
  Eigen::Vector3d down = f.cross(right);
  down.normalize();
  CameraPose pose;
  pose.rotation.col(0) = down.cross(f);
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = f;
  pose.translation = eye;
  return pose;
}

CameraPose CameraPose::look_at(const Point3& eye, const Point3& target, double fallback_azimuth) {
  return from_forward(eye, target - eye, fallback_azimuth);
}

CameraPose CameraPose::from_heading(const Point3& eye, double azimuth_rad, double pitch_deg) {
  const double pitch = pitch_deg * std::numbers::pi / 180.0;
  const Eigen::Vector3d f(std::cos(pitch) * std::cos(azimuth_rad), std::cos(pitch) * std::sin(azimuth_rad),
                          -std::sin(pitch));
  return from_forward(eye, f, azimuth_rad);
}

std::optional<Projection> project_point(const Point3& p, const CameraIntrinsics& k, const CameraPose& pose) {
  const Eigen::Vector3d q = pose.to_camera(p);
  if (!(q.z() > 0)) return std::nullopt;
  Projection out;
  out.depth = q.z();
  out.pixel.u = k.cx + k.fx * q.x() / q.z();
  out.pixel.v = k.cy + k.fy * q.y() / q.z();
  return out;
}

Point3 unproject_pixel(Pixel px, double depth, const CameraIntrinsics& k, const CameraPose& pose) {
  if (!std::isfinite(depth) || !(depth > 0)) {
    throw std::invalid_argument("unproject_pixel: depth must be positive and finite (got background or invalid)");
  }
  const Eigen::Vector3d q((px.u - k.cx) * depth / k.fx, (px.v - k.cy) * depth / k.fy, depth);
  return pose.to_world(q);
}

std::optional<std::pair<int, int>> pixel_cell(Pixel px, const CameraIntrinsics& k) {
  if (!std::isfinite(px.u) || !std::isfinite(px.v)) return std::nullopt;
  const double fx = std::floor(px.u + 0.5);
  const double fy = std::floor(px.v + 0.5);
  if (fx < 0 || fy < 0 || fx >= k.width || fy >= k.height) return std::nullopt;
  return std::pair<int, int>{static_cast<int>(fx), static_cast<int>(fy)};
}

}  // namespace ovhr3d
