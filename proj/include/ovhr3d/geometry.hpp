#pragma once

#include <optional>
#include <utility>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ovhr3d {

/// World-frame position in meters, z up.
using Point3 = Eigen::Vector3d;

/// Continuous pixel coordinates. Integer values are pixel centers; u grows
/// to the right and v grows downward from the top-left pixel.
struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  bool valid() const;
  /// Square pixels, principal point at the image center, horizontal field of
  /// view in degrees.
  static CameraIntrinsics from_fov(int width, int height, double hfov_deg);
};

/// Camera-to-world rigid transform. The camera looks down its own +z axis
/// with +x right and +y down in the image.
struct CameraPose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  bool valid(double tol = 1e-9) const;

  Eigen::Vector3d to_camera(const Point3& world) const { return rotation.transpose() * (world - translation); }
  Point3 to_world(const Eigen::Vector3d& cam) const { return rotation * cam + translation; }
  Eigen::Vector3d forward() const { return rotation.col(2); }

  /// Camera at `eye` whose optical axis points along `forward`. The image x
  /// axis stays horizontal; when `forward` is vertical the heading is taken
  /// from `fallback_azimuth` (radians, measured from world +x).
  static CameraPose from_forward(const Point3& eye, const Eigen::Vector3d& forward, double fallback_azimuth = 0.0);
  static CameraPose look_at(const Point3& eye, const Point3& target, double fallback_azimuth = 0.0);
  /// `pitch_deg` is measured downward from the horizontal.
  static CameraPose from_heading(const Point3& eye, double azimuth_rad, double pitch_deg);
};

struct Projection {
  Pixel pixel;
  /// Distance along the optical axis, not ray length.
  double depth = 0.0;
};

/// Returns nullopt ("behind") when the camera-frame z is not positive.
std::optional<Projection> project_point(const Point3& p, const CameraIntrinsics& k, const CameraPose& pose);

/// Throws std::invalid_argument for depth <= 0, NaN, or +inf (background).
Point3 unproject_pixel(Pixel px, double depth, const CameraIntrinsics& k, const CameraPose& pose);

/// Integer pixel whose area contains `px`, or nullopt outside the image.
std::optional<std::pair<int, int>> pixel_cell(Pixel px, const CameraIntrinsics& k);

}  // namespace ovhr3d
