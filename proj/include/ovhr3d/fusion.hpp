#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "ovhr3d/perception.hpp"
#include "ovhr3d/renderer.hpp"
#include "ovhr3d/scene.hpp"

namespace ovhr3d {

using PointIndex = std::uint32_t;

struct FusionParams {
  double depth_tolerance_abs = 0.01;
  double depth_tolerance_rel = 0.005;
  /// A point is labeled when its winning weight is > 0 and >= min_votes.
  double min_votes = 0.0;

  void validate() const;
  double tolerance(double depth) const { return std::max(depth_tolerance_abs, depth_tolerance_rel * depth); }
};

/// Every cloud point projected into one view: its pixel (row-major index, or
/// -1 when outside the image or behind the camera) and its z-depth.
struct CloudProjection {
  std::vector<std::int64_t> pixel;
  std::vector<double> depth;
};

CloudProjection project_cloud(const PointCloud& cloud, const RenderedView& view);

/// Points whose pixel carries a mask bit and whose depth agrees with the
/// view's depth raster. Sorted ascending.
std::vector<PointIndex> backproject_mask(const MaskInstance2D& inst, const RenderedView& view, const PointCloud& cloud,
                                         const FusionParams& params);
std::vector<PointIndex> backproject_mask(const MaskInstance2D& inst, const RenderedView& view,
                                         const CloudProjection& projection, const FusionParams& params);

/// Identifies one mask of one view; a vote table accepts each key once.
struct VoteKey {
  int view_id = 0;
  std::uint32_t mask_index = 0;
  auto operator<=>(const VoteKey&) const = default;
};

/// Per-point class weights. Weights are held in fixed point (2^-32 units) so
/// that accumulation and merging are exactly commutative and associative.
class VoteTable {
 public:
  struct Entry {
    ClassId class_id;
    std::uint64_t units;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  static constexpr double kUnitsPerVote = 4294967296.0;

  VoteTable() = default;
  explicit VoteTable(std::size_t point_count) : points_(point_count) {}

  std::size_t size() const { return points_.size(); }
  /// Throws DuplicateVote when `key` was already applied, std::out_of_range for bad indices.
  void accumulate(VoteKey key, ClassId class_id, double score, std::span<const PointIndex> hits);
  /// Adds another table's votes. Throws DuplicateVote when key sets intersect.
  void merge(const VoteTable& other);

  double weight(std::size_t point, ClassId class_id) const;
  std::span<const Entry> entries(std::size_t point) const { return points_[point]; }
  const std::set<VoteKey>& applied() const { return applied_; }

  friend bool operator==(const VoteTable&, const VoteTable&) = default;

 private:
  static void add(std::vector<Entry>& cell, ClassId class_id, std::uint64_t units);

  std::vector<std::vector<Entry>> points_;
  std::set<VoteKey> applied_;
};

void accumulate_votes(VoteTable& table, const MaskInstance2D& inst, VoteKey key, std::span<const PointIndex> hits);

/// Argmax class per point (ties to the smaller class id); 0 when no class
/// reaches the vote threshold.
std::vector<ClassId> semantic_labels(const VoteTable& table, const FusionParams& params);
/// Winning weight over total weight, 0 for unlabeled points.
std::vector<float> label_confidence(const VoteTable& table, const std::vector<ClassId>& labels);

struct InstanceCandidate3D {
  ClassId class_id = kUnlabeled;
  std::vector<PointIndex> point_indices;
  double confidence = 0.0;
  std::vector<int> source_views;

  bool empty() const { return point_indices.empty(); }
  friend bool operator==(const InstanceCandidate3D&, const InstanceCandidate3D&) = default;
};

/// Back-projection result of one mask.
struct MaskHits {
  VoteKey key;
  ClassId class_id = kUnlabeled;
  double score = 0.0;
  std::vector<PointIndex> hits;
};

/// One candidate per nonempty hit set, in input order.
std::vector<InstanceCandidate3D> build_candidates(std::span<const MaskHits> hits);

}  // namespace ovhr3d
