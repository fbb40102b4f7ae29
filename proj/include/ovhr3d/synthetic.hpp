#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ovhr3d/config.hpp"
#include "ovhr3d/perception.hpp"
#include "ovhr3d/scene.hpp"

namespace ovhr3d {

enum class PrimitiveShape { kBox, kCylinder, kPyramid };

struct CatalogEntry {
  std::string name;
  ClassId class_id = kUnlabeled;
  PrimitiveShape shape = PrimitiveShape::kBox;
  /// Footprint size (box width/depth, cylinder diameter, pyramid base) range in meters.
  double min_size = 0.8;
  double max_size = 1.8;
  double min_height = 0.6;
  double max_height = 1.6;
  Rgb color{200, 120, 60};
};

std::vector<CatalogEntry> default_catalog();

struct SyntheticSceneParams {
  std::uint64_t seed = 7;
  /// Objects placed on the ground; they cycle through the catalog.
  int object_count = 6;
  /// Side of the square ground plane, centered at the origin, meters.
  double ground_size = 12.0;
  int ground_tiles = 12;
  /// Sampled points per square meter of exposed surface.
  double point_density = 450.0;
  std::string ground_name = "ground";
  ClassId ground_class = 1;
  std::vector<CatalogEntry> catalog = default_catalog();
};

struct SyntheticScene {
  TriangleMesh mesh;
  PointCloud cloud;
  /// Every class in the scene, ground included.
  PromptSpec prompts;
  std::map<ClassId, std::string> class_names;
  /// Area of all surfaces that were sampled (ground minus object footprints,
  /// plus object sides and tops).
  double exposed_area = 0.0;
  /// Pipeline settings matched to the scene: every class prompted and DBSCAN
  /// tuned to the sampling density.
  PipelineConfig config;
};

/// DBSCAN settings for surfaces sampled at `density` points per square meter:
/// eps 0.15 m, and a core point needs about half the neighbors a flat,
/// unbroken surface would give it.
DbscanParams dbscan_for_density(double density);

/// Ground plane plus `object_count` boxes, cylinders and pyramids with
/// distinct instance ids (ground = 1, objects 2..k+1). Objects have no bottom
/// faces and the ground under them is not sampled. Deterministic in the seed.
SyntheticScene generate_synthetic_scene(const SyntheticSceneParams& params);

/// Area-weighted uniform surface sampling carrying the mesh's face labels as
/// ground truth. Each face receives floor(density*area + u) points.
PointCloud sample_surface(const TriangleMesh& mesh, double density, std::uint64_t seed);

}  // namespace ovhr3d
