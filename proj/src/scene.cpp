#include "ovhr3d/scene.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ovhr3d {

namespace {

Aabb bounds_of(const std::vector<Point3>& pts) {
  Aabb box;
  if (pts.empty()) return box;
  box.min = box.max = pts.front();
  for (const auto& p : pts) {
    box.min = box.min.cwiseMin(p);
    box.max = box.max.cwiseMax(p);
  }
  return box;
}

}  // namespace

bool Aabb::non_degenerate() const {
  const Eigen::Vector3d e = extent();
  return e.allFinite() && e.x() > 0 && e.y() > 0 && e.z() >= 0;
}

void TriangleMesh::validate() const {
  const auto n = vertices.size();
  if (!vertex_colors.empty() && vertex_colors.size() != n) {
    throw std::invalid_argument("mesh: vertex_colors has " + std::to_string(vertex_colors.size()) +
                                " entries for " + std::to_string(n) + " vertices");
  }
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (auto idx : faces[f]) {
      if (idx >= n) {
        throw std::invalid_argument("mesh: face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                                    " of " + std::to_string(n));
      }
    }
  }
  if (!face_class.empty() && face_class.size() != faces.size()) {
    throw std::invalid_argument("mesh: face_class length differs from face count");
  }
  if (!face_instance.empty() && face_instance.size() != faces.size()) {
    throw std::invalid_argument("mesh: face_instance length differs from face count");
  }
  for (const auto& v : vertices) {
    if (!v.allFinite()) throw std::invalid_argument("mesh: non-finite vertex");
  }
}

Aabb TriangleMesh::bounds() const { return bounds_of(vertices); }

double TriangleMesh::face_area(std::size_t f) const {
  const auto& t = faces[f];
  return 0.5 * (vertices[t[1]] - vertices[t[0]]).cross(vertices[t[2]] - vertices[t[0]]).norm();
}

void PointCloud::validate() const {
  const auto n = positions.size();
  if (!colors.empty() && colors.size() != n) throw std::invalid_argument("cloud: colors length mismatch");
  if (!gt_class.empty() && gt_class.size() != n) throw std::invalid_argument("cloud: gt_class length mismatch");
  if (!gt_instance.empty() && gt_instance.size() != n) throw std::invalid_argument("cloud: gt_instance length mismatch");
}

Aabb PointCloud::bounds() const { return bounds_of(positions); }

void LabeledPointCloud::validate() const {
  cloud.validate();
  const auto n = cloud.size();
  if (class_id.size() != n || instance_id.size() != n || confidence.size() != n) {
    throw std::invalid_argument("labeled cloud: label arrays are not parallel to positions");
  }
  for (float c : confidence) {
    if (!(c >= 0.0f && c <= 1.0f)) throw std::invalid_argument("labeled cloud: confidence outside [0,1]");
  }
}

LabeledPointCloud LabeledPointCloud::unlabeled(PointCloud cloud) {
  LabeledPointCloud out;
  const auto n = cloud.size();
  out.cloud = std::move(cloud);
  out.class_id.assign(n, kUnlabeled);
  out.instance_id.assign(n, 0);
  out.confidence.assign(n, 0.0f);
  return out;
}

}  // namespace ovhr3d
