#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ovhr3d/fusion.hpp"
#include "ovhr3d/geometry.hpp"
#include "ovhr3d/scene.hpp"

namespace ovhr3d {

struct DbscanParams {
  double eps = 0.3;
  /// Neighbors within eps, the point itself included, needed for a core point.
  std::size_t min_pts = 8;

  void validate() const;
};

struct DbscanResult {
  static constexpr std::int32_t kNoise = -1;
  /// Cluster per input point, kNoise for noise. Ids are 0..cluster_count-1
  /// in order of the lowest-index core point of each cluster.
  std::vector<std::int32_t> labels;
  std::int32_t cluster_count = 0;
};

/// Classic DBSCAN with inclusive eps. A border point reachable from several
/// clusters joins the one with the smallest id. Uses a uniform grid for
/// neighbor queries.
DbscanResult dbscan(std::span<const Point3> points, const DbscanParams& params);

/// Keeps the largest DBSCAN cluster of the candidate's points (ties: the
/// cluster holding the smallest point index). The result is empty when every
/// point is noise; callers discard it. Throws std::invalid_argument for an
/// empty candidate.
InstanceCandidate3D filter_candidate(const InstanceCandidate3D& cand, const PointCloud& cloud,
                                     const DbscanParams& params);

struct NmsParams {
  double overlap_threshold = 0.25;
  void validate() const;
};

/// |A n B| / |A u B| over sorted unique index sets.
double point_iou(std::span<const PointIndex> a, std::span<const PointIndex> b);

/// Confidence-ordered greedy merge of same-class candidates whose point IoU
/// exceeds the threshold; each kept candidate absorbs overlaps until none
/// remain, and passes repeat until the output is pairwise non-mergeable.
std::vector<InstanceCandidate3D> nms3d(std::vector<InstanceCandidate3D> cands, const NmsParams& params);

/// Candidate precedence used by NMS and instance assignment: higher
/// confidence, then more points, then smaller first point index.
bool candidate_precedes(const InstanceCandidate3D& a, const InstanceCandidate3D& b);

struct InstanceAssignment {
  /// 1-based instance id per point, 0 when unclaimed.
  std::vector<InstanceId> instance_id;
  /// Instance id of each input candidate.
  std::vector<InstanceId> candidate_instance;
};

/// Ids 1..n in precedence order; contested points go to the candidate with
/// the higher precedence.
InstanceAssignment assign_instances(std::span<const InstanceCandidate3D> cands, std::size_t cloud_size);

}  // namespace ovhr3d
