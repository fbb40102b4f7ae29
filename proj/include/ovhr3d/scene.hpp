#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ovhr3d/geometry.hpp"
#include "ovhr3d/raster.hpp"

namespace ovhr3d {

struct Aabb {
  Point3 min = Point3::Zero();
  Point3 max = Point3::Zero();

  Point3 center() const { return 0.5 * (min + max); }
  Eigen::Vector3d extent() const { return max - min; }
  /// Every axis has positive extent except possibly z (flat scenes are fine).
  bool non_degenerate() const;
};

using Face = std::array<std::uint32_t, 3>;

struct TriangleMesh {
  std::vector<Point3> vertices;
  /// Empty, or one color per vertex.
  std::vector<Rgb> vertex_colors;
  std::vector<Face> faces;
  /// Empty, or one ground-truth class per face.
  std::vector<ClassId> face_class;
  /// Empty, or one ground-truth instance per face.
  std::vector<InstanceId> face_instance;

  bool has_colors() const { return !vertex_colors.empty(); }
  bool has_labels() const { return !face_class.empty() && !face_instance.empty(); }

  /// Throws std::invalid_argument describing the first violated invariant.
  void validate() const;
  Aabb bounds() const;
  double face_area(std::size_t f) const;
};

struct PointCloud {
  std::vector<Point3> positions;
  std::vector<Rgb> colors;
  std::vector<ClassId> gt_class;
  std::vector<InstanceId> gt_instance;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  bool has_colors() const { return !colors.empty(); }
  bool has_ground_truth() const { return !gt_class.empty(); }

  void validate() const;
  Aabb bounds() const;
};

/// Final per-point labels alongside the source cloud.
struct LabeledPointCloud {
  PointCloud cloud;
  std::vector<ClassId> class_id;
  std::vector<InstanceId> instance_id;
  std::vector<float> confidence;

  std::size_t size() const { return cloud.size(); }
  void validate() const;
  /// Unlabeled cloud of the right shape.
  static LabeledPointCloud unlabeled(PointCloud cloud);
};

}  // namespace ovhr3d
