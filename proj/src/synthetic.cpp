#include "ovhr3d/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>

namespace ovhr3d {

std::vector<CatalogEntry> default_catalog() {
  return {
      {"crate", 2, PrimitiveShape::kBox, 0.9, 1.8, 0.6, 1.4, Rgb{196, 132, 64}},
      {"barrel", 3, PrimitiveShape::kCylinder, 0.7, 1.3, 0.9, 1.6, Rgb{60, 90, 200}},
      {"tent", 4, PrimitiveShape::kPyramid, 1.2, 2.0, 1.0, 1.8, Rgb{210, 60, 60}},
      {"cabinet", 5, PrimitiveShape::kBox, 0.8, 1.2, 1.5, 2.2, Rgb{120, 200, 90}},
      {"pillar", 6, PrimitiveShape::kCylinder, 0.5, 0.8, 1.8, 2.6, Rgb{200, 200, 70}},
  };
}

namespace {

using Polygon2 = std::vector<Eigen::Vector2d>;

bool inside_polygon(const Polygon2& poly, const Eigen::Vector2d& p) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y()) && p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x()) {
      in = !in;
    }
  }
  return in;
}

double polygon_area(const Polygon2& poly) {
  double a = 0;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    a += poly[j].x() * poly[i].y() - poly[i].x() * poly[j].y();
  }
  return 0.5 * std::abs(a);
}

Rgb shade(Rgb base, const Eigen::Vector3d& normal) {
  const Eigen::Vector3d light = Eigen::Vector3d(0.4, 0.3, 0.87).normalized();
  const double k = 0.55 + 0.45 * std::abs(normal.normalized().dot(light));
  auto ch = [&](std::uint8_t c) { return static_cast<std::uint8_t>(std::clamp(std::lround(c * k), 0L, 255L)); };
  return Rgb{ch(base.r), ch(base.g), ch(base.b)};
}

class MeshBuilder {
 public:
  explicit MeshBuilder(TriangleMesh& mesh) : mesh_(mesh) {}

  // Flat-shaded triangle with its own vertices.
  void triangle(const Point3& a, const Point3& b, const Point3& c, Rgb color, ClassId cls, InstanceId inst) {
    const Eigen::Vector3d n = (b - a).cross(c - a);
    if (n.norm() <= 0) return;
    const Rgb shaded = shade(color, n);
    const auto base = static_cast<std::uint32_t>(mesh_.vertices.size());
    for (const Point3* p : {&a, &b, &c}) {
      mesh_.vertices.push_back(*p);
      mesh_.vertex_colors.push_back(shaded);
    }
    mesh_.faces.push_back(Face{base, base + 1, base + 2});
    mesh_.face_class.push_back(cls);
    mesh_.face_instance.push_back(inst);
  }

  void quad(const Point3& a, const Point3& b, const Point3& c, const Point3& d, Rgb color, ClassId cls,
            InstanceId inst) {
    triangle(a, b, c, color, cls, inst);
    triangle(a, c, d, color, cls, inst);
  }

 private:
  TriangleMesh& mesh_;
};

struct Placement {
  Eigen::Vector2d center;
  double radius;
};

}  // namespace

DbscanParams dbscan_for_density(double density) {
  if (!(density > 0)) throw std::invalid_argument("dbscan_for_density: density must be > 0");
  DbscanParams p;
  p.eps = 0.15;
  const double flat = density * std::numbers::pi * p.eps * p.eps;
  p.min_pts = std::max<std::size_t>(4, static_cast<std::size_t>(std::lround(0.5 * flat)));
  return p;
}

PointCloud sample_surface(const TriangleMesh& mesh, double density, std::uint64_t seed) {
  mesh.validate();
  if (!(density > 0)) throw std::invalid_argument("sample_surface: density must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  PointCloud cloud;
  const bool labeled = mesh.has_labels();
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    const double expected = density * mesh.face_area(f);
    const auto n = static_cast<std::size_t>(std::floor(expected + unit(rng)));
    for (std::size_t i = 0; i < n; ++i) {
      const double r1 = std::sqrt(unit(rng));
      const double r2 = unit(rng);
      const double a = 1.0 - r1;
      const double b = r1 * (1.0 - r2);
      const double c = r1 * r2;
      cloud.positions.push_back(a * mesh.vertices[t[0]] + b * mesh.vertices[t[1]] + c * mesh.vertices[t[2]]);
      if (mesh.has_colors()) cloud.colors.push_back(mesh.vertex_colors[t[0]]);
      if (labeled) {
        cloud.gt_class.push_back(mesh.face_class[f]);
        cloud.gt_instance.push_back(mesh.face_instance[f]);
      }
    }
  }
  return cloud;
}

SyntheticScene generate_synthetic_scene(const SyntheticSceneParams& params) {
  if (params.object_count < 0) throw std::invalid_argument("synthetic scene: object_count must be >= 0");
  if (params.object_count > 0 && params.catalog.empty()) throw std::invalid_argument("synthetic scene: empty catalog");
  if (!(params.ground_size > 0) || params.ground_tiles < 1) throw std::invalid_argument("synthetic scene: bad ground");
  if (!(params.point_density > 0)) throw std::invalid_argument("synthetic scene: density must be > 0");

  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  SyntheticScene scene;
  MeshBuilder build(scene.mesh);
  scene.class_names[params.ground_class] = params.ground_name;
  scene.prompts.entries.push_back({params.ground_name, params.ground_class});
  for (const auto& e : params.catalog) {
    if (scene.class_names.count(e.class_id)) continue;
    scene.class_names[e.class_id] = e.name;
    scene.prompts.entries.push_back({e.name, e.class_id});
  }
  scene.prompts.validate();

  // Ground tiles first so their faces keep the lowest indices.
  const double half = 0.5 * params.ground_size;
  const double tile = params.ground_size / params.ground_tiles;
  const Rgb ground_color{130, 140, 120};
  for (int j = 0; j < params.ground_tiles; ++j) {
    for (int i = 0; i < params.ground_tiles; ++i) {
      const double x0 = -half + i * tile;
      const double y0 = -half + j * tile;
      const Rgb c = ((i + j) % 2 == 0) ? ground_color : Rgb{120, 132, 112};
      build.quad(Point3(x0, y0, 0), Point3(x0 + tile, y0, 0), Point3(x0 + tile, y0 + tile, 0), Point3(x0, y0 + tile, 0),
                 c, params.ground_class, 1);
    }
  }
  const std::size_t ground_faces = scene.mesh.faces.size();

  std::vector<Placement> placed;
  std::vector<Polygon2> footprints;
  constexpr int kSegments = 24;
  for (int k = 0; k < params.object_count; ++k) {
    const CatalogEntry& entry = params.catalog[static_cast<std::size_t>(k) % params.catalog.size()];
    const InstanceId inst = static_cast<InstanceId>(k + 2);
    const double size = uniform(entry.min_size, entry.max_size);
    const double size2 = entry.shape == PrimitiveShape::kBox ? uniform(entry.min_size, entry.max_size) : size;
    const double height = uniform(entry.min_height, entry.max_height);
    const double yaw = uniform(0.0, std::numbers::pi);
    const double radius = 0.5 * std::hypot(size, size2);

    // Rejection placement with a clear gap between objects and from the edge.
    Eigen::Vector2d center;
    const double margin = radius + 0.5;
    bool ok = false;
    for (int attempt = 0; attempt < 2000 && !ok; ++attempt) {
      center = Eigen::Vector2d(uniform(-half + margin, half - margin), uniform(-half + margin, half - margin));
      ok = std::all_of(placed.begin(), placed.end(), [&](const Placement& p) {
        return (p.center - center).norm() > p.radius + radius + 1.2;
      });
    }
    if (!ok) throw std::runtime_error("synthetic scene: could not place object " + std::to_string(k));
    placed.push_back({center, radius});

    const Eigen::Vector2d ax(std::cos(yaw), std::sin(yaw));
    const Eigen::Vector2d ay(-std::sin(yaw), std::cos(yaw));
    auto at = [&](const Eigen::Vector2d& p, double z) { return Point3(p.x(), p.y(), z); };
    const Rgb color = entry.color;
    Polygon2 foot;

    switch (entry.shape) {
      case PrimitiveShape::kBox: {
        const Eigen::Vector2d c[4] = {center - 0.5 * size * ax - 0.5 * size2 * ay, center + 0.5 * size * ax - 0.5 * size2 * ay,
                                      center + 0.5 * size * ax + 0.5 * size2 * ay, center - 0.5 * size * ax + 0.5 * size2 * ay};
        for (int s = 0; s < 4; ++s) {
          const auto& a = c[s];
          const auto& b = c[(s + 1) % 4];
          build.quad(at(a, 0), at(b, 0), at(b, height), at(a, height), color, entry.class_id, inst);
        }
        build.quad(at(c[0], height), at(c[1], height), at(c[2], height), at(c[3], height), color, entry.class_id, inst);
        foot.assign(std::begin(c), std::end(c));
        break;
      }
      case PrimitiveShape::kCylinder: {
        const double r = 0.5 * size;
        for (int s = 0; s < kSegments; ++s) {
          const double t0 = 2 * std::numbers::pi * s / kSegments;
          const double t1 = 2 * std::numbers::pi * (s + 1) / kSegments;
          const Eigen::Vector2d a = center + r * Eigen::Vector2d(std::cos(t0), std::sin(t0));
          const Eigen::Vector2d b = center + r * Eigen::Vector2d(std::cos(t1), std::sin(t1));
          build.quad(at(a, 0), at(b, 0), at(b, height), at(a, height), color, entry.class_id, inst);
          build.triangle(at(center, height), at(a, height), at(b, height), color, entry.class_id, inst);
          foot.push_back(a);
        }
        break;
      }
      case PrimitiveShape::kPyramid: {
        const Eigen::Vector2d c[4] = {center - 0.5 * size * ax - 0.5 * size * ay, center + 0.5 * size * ax - 0.5 * size * ay,
                                      center + 0.5 * size * ax + 0.5 * size * ay, center - 0.5 * size * ax + 0.5 * size * ay};
        for (int s = 0; s < 4; ++s) {
          build.triangle(at(c[s], 0), at(c[(s + 1) % 4], 0), at(center, height), color, entry.class_id, inst);
        }
        foot.assign(std::begin(c), std::end(c));
        break;
      }
    }
    footprints.push_back(std::move(foot));
    if (!scene.class_names.count(entry.class_id)) scene.class_names[entry.class_id] = entry.name;
  }

  // Sample: ground faces skip points under object footprints.
  std::mt19937_64 sample_rng(params.seed ^ 0x5DEECE66Dull);
  std::uniform_real_distribution<double> su(0.0, 1.0);
  const auto& mesh = scene.mesh;
  auto& cloud = scene.cloud;
  double area = params.ground_size * params.ground_size;
  for (const auto& fp : footprints) area -= polygon_area(fp);
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    const double face_area = mesh.face_area(f);
    if (f >= ground_faces) area += face_area;
    const auto n = static_cast<std::size_t>(std::floor(params.point_density * face_area + su(sample_rng)));
    for (std::size_t i = 0; i < n; ++i) {
      const double r1 = std::sqrt(su(sample_rng));
      const double r2 = su(sample_rng);
      const Point3 p = (1.0 - r1) * mesh.vertices[t[0]] + r1 * (1.0 - r2) * mesh.vertices[t[1]] + r1 * r2 * mesh.vertices[t[2]];
      if (f < ground_faces) {
        const Eigen::Vector2d q(p.x(), p.y());
        if (std::any_of(footprints.begin(), footprints.end(), [&](const Polygon2& fp) { return inside_polygon(fp, q); })) {
          continue;
        }
      }
      cloud.positions.push_back(p);
      cloud.colors.push_back(mesh.vertex_colors[t[0]]);
      cloud.gt_class.push_back(mesh.face_class[f]);
      cloud.gt_instance.push_back(mesh.face_instance[f]);
    }
  }
  scene.exposed_area = area;
  scene.config.prompts = scene.prompts;
  scene.config.seed = params.seed;
  scene.config.dbscan = dbscan_for_density(params.point_density);
  return scene;
}

}  // namespace ovhr3d
