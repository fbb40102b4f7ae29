#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ovhr3d/renderer.hpp"
#include "ovhr3d/scene.hpp"

namespace ovhr3d {

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames it into place.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// ASCII OBJ: `v x y z [r g b]` (colors in [0,1]) and `f` records with
/// 1-based or negative indices; polygons are fan-triangulated.
TriangleMesh parse_obj(std::string_view text, const std::string& source = "obj");

/// ASCII or binary little-endian PLY. Optional vertex red/green/blue and
/// face class_id / instance_id properties.
TriangleMesh parse_ply_mesh(std::string_view bytes, const std::string& source = "ply");

/// Dispatches on the PLY magic, otherwise parses OBJ.
TriangleMesh parse_mesh(std::string_view bytes, const std::string& source);
TriangleMesh load_mesh(const std::filesystem::path& path);

/// Binary little-endian PLY with double vertices, so a reload is bit-identical.
std::string serialize_mesh_ply(const TriangleMesh& mesh);
void save_mesh_ply(const TriangleMesh& mesh, const std::filesystem::path& path);

/// Labeled-cloud PLY (binary little-endian): x,y,z f32; optional
/// red,green,blue u8; class_id u16; instance_id u32; confidence f32;
/// optional gt_class u16, gt_instance u32.
std::string serialize_labeled_cloud(const LabeledPointCloud& cloud);
LabeledPointCloud parse_labeled_cloud(std::string_view bytes, const std::string& source = "cloud");
void save_labeled_cloud(const LabeledPointCloud& cloud, const std::filesystem::path& path);
LabeledPointCloud load_labeled_cloud(const std::filesystem::path& path);

/// Any PLY with x,y,z vertices. Ground truth comes from gt_class/gt_instance,
/// or from class_id/instance_id when those are absent.
PointCloud parse_point_cloud(std::string_view bytes, const std::string& source = "cloud");
PointCloud load_point_cloud(const std::filesystem::path& path);

/// "OVDP" raster: u32-LE width, height, then f32-LE z-depths row-major.
std::string encode_depth(const Raster<float>& depth);
Raster<float> decode_depth(std::string_view bytes, const std::string& source = "depth");
/// "OVID" raster: same header, u32-LE face index per pixel, 0xFFFFFFFF = none.
std::string encode_face_ids(const Raster<std::uint32_t>& ids);
Raster<std::uint32_t> decode_face_ids(std::string_view bytes, const std::string& source = "faceid");

std::string camera_sidecar(const RenderedView& view);

/// Writes view_NNNN.{png,depth,faceid,json} under `dir`.
void save_view(const RenderedView& view, const std::filesystem::path& dir);
RenderedView load_view(const std::filesystem::path& dir, int view_id);

}  // namespace ovhr3d
