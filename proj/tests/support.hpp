#pragma once

#include <random>

#include "ovhr3d/geometry.hpp"
#include "ovhr3d/scene.hpp"

namespace testing_support {

inline ovhr3d::CameraPose random_pose(std::mt19937_64& rng, double max_translation = 10.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Quaterniond q(u(rng), u(rng), u(rng), u(rng));
  while (q.norm() < 1e-3) q = Eigen::Quaterniond(u(rng), u(rng), u(rng), u(rng));
  q.normalize();
  ovhr3d::CameraPose p;
  p.rotation = q.toRotationMatrix();
  p.translation = Eigen::Vector3d(u(rng), u(rng), u(rng)) * max_translation;
  return p;
}

// Two triangles spanning [x0,x1]x[y0,y1] at height z, facing up.
inline void add_quad(ovhr3d::TriangleMesh& m, double x0, double y0, double x1, double y1, double z,
                     ovhr3d::ClassId cls = 0, ovhr3d::InstanceId inst = 0) {
  const auto base = static_cast<std::uint32_t>(m.vertices.size());
  m.vertices.push_back({x0, y0, z});
  m.vertices.push_back({x1, y0, z});
  m.vertices.push_back({x1, y1, z});
  m.vertices.push_back({x0, y1, z});
  m.faces.push_back({base, base + 1, base + 2});
  m.faces.push_back({base, base + 2, base + 3});
  if (cls != 0 || !m.face_class.empty()) {
    m.face_class.resize(m.faces.size() - 2, 0);
    m.face_instance.resize(m.faces.size() - 2, 0);
    m.face_class.push_back(cls);
    m.face_class.push_back(cls);
    m.face_instance.push_back(inst);
    m.face_instance.push_back(inst);
  }
}

}  // namespace testing_support
