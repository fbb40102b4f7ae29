#include "ovhr3d/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <unordered_map>

namespace ovhr3d {

void DbscanParams::validate() const {
  if (!(eps > 0) || !std::isfinite(eps)) throw std::invalid_argument("dbscan: eps must be > 0");
  if (min_pts < 1) throw std::invalid_argument("dbscan: min_pts must be >= 1");
}

void NmsParams::validate() const {
  if (!(overlap_threshold >= 0 && overlap_threshold <= 1)) {
    throw std::invalid_argument("nms: overlap_threshold must lie in [0,1]");
  }
}

namespace {

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

class NeighborGrid {
 public:
  NeighborGrid(std::span<const Point3> points, double eps) : points_(points), eps_(eps), eps2_(eps * eps) {
    for (std::size_t i = 0; i < points.size(); ++i) cells_[key(points[i])].push_back(static_cast<std::uint32_t>(i));
  }

  template <typename F>
  void for_each_neighbor(std::size_t i, F&& f) const {
    const Point3& p = points_[i];
    const CellKey c = key(p);
    for (std::int64_t dz = -1; dz <= 1; ++dz) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
          const auto it = cells_.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (auto j : it->second) {
            if ((points_[j] - p).squaredNorm() <= eps2_) f(j);
          }
        }
      }
    }
  }

 private:
  CellKey key(const Point3& p) const {
    auto cell = [&](double v) {
      const double c = std::floor(v / eps_);
      constexpr double lim = 4.0e18;
      return static_cast<std::int64_t>(std::clamp(c, -lim, lim));
    };
    return CellKey{cell(p.x()), cell(p.y()), cell(p.z())};
  }

  std::span<const Point3> points_;
  double eps_;
  double eps2_;
  std::unordered_map<CellKey, std::vector<std::uint32_t>, CellHash> cells_;
};

}  // namespace

DbscanResult dbscan(std::span<const Point3> points, const DbscanParams& params) {
  params.validate();
  DbscanResult result;
  const std::size_t n = points.size();
  result.labels.assign(n, DbscanResult::kNoise);
  if (n == 0) return result;

  const NeighborGrid grid(points, params.eps);
  std::vector<char> core(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    grid.for_each_neighbor(i, [&](std::uint32_t) { ++count; });
    core[i] = count >= params.min_pts ? 1 : 0;
  }

  std::deque<std::uint32_t> frontier;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (!core[seed] || result.labels[seed] != DbscanResult::kNoise) continue;
    const std::int32_t id = result.cluster_count++;
    result.labels[seed] = id;
    frontier.push_back(static_cast<std::uint32_t>(seed));
    while (!frontier.empty()) {
      const auto cur = frontier.front();
      frontier.pop_front();
      grid.for_each_neighbor(cur, [&](std::uint32_t j) {
        if (result.labels[j] != DbscanResult::kNoise) return;
        result.labels[j] = id;
        if (core[j]) frontier.push_back(j);
      });
    }
  }
  return result;
}

InstanceCandidate3D filter_candidate(const InstanceCandidate3D& cand, const PointCloud& cloud,
                                     const DbscanParams& params) {
  if (cand.point_indices.empty()) throw std::invalid_argument("filter_candidate: candidate has no points");
  std::vector<Point3> pts;
  pts.reserve(cand.point_indices.size());
  for (auto idx : cand.point_indices) {
    if (idx >= cloud.size()) throw std::out_of_range("filter_candidate: point index outside the cloud");
    pts.push_back(cloud.positions[idx]);
  }
  const auto clusters = dbscan(pts, params);

  InstanceCandidate3D out = cand;
  out.point_indices.clear();
  if (clusters.cluster_count == 0) return out;

  std::vector<std::size_t> sizes(static_cast<std::size_t>(clusters.cluster_count), 0);
  std::vector<PointIndex> first(static_cast<std::size_t>(clusters.cluster_count), std::numeric_limits<PointIndex>::max());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto c = clusters.labels[i];
    if (c == DbscanResult::kNoise) continue;
    ++sizes[c];
    first[c] = std::min(first[c], cand.point_indices[i]);
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < sizes.size(); ++c) {
    if (sizes[c] > sizes[best] || (sizes[c] == sizes[best] && first[c] < first[best])) best = c;
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (clusters.labels[i] == static_cast<std::int32_t>(best)) out.point_indices.push_back(cand.point_indices[i]);
  }
  std::sort(out.point_indices.begin(), out.point_indices.end());
  return out;
}

double point_iou(std::span<const PointIndex> a, std::span<const PointIndex> b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++inter;
      ++i;
      ++j;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

bool candidate_precedes(const InstanceCandidate3D& a, const InstanceCandidate3D& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.point_indices.size() != b.point_indices.size()) return a.point_indices.size() > b.point_indices.size();
  const auto fa = a.point_indices.empty() ? std::numeric_limits<PointIndex>::max() : a.point_indices.front();
  const auto fb = b.point_indices.empty() ? std::numeric_limits<PointIndex>::max() : b.point_indices.front();
  return fa < fb;
}

namespace {

void absorb(InstanceCandidate3D& into, const InstanceCandidate3D& other) {
  std::vector<PointIndex> merged;
  merged.reserve(into.point_indices.size() + other.point_indices.size());
  std::set_union(into.point_indices.begin(), into.point_indices.end(), other.point_indices.begin(),
                 other.point_indices.end(), std::back_inserter(merged));
  into.point_indices = std::move(merged);
  into.confidence = std::max(into.confidence, other.confidence);
  into.source_views.insert(into.source_views.end(), other.source_views.begin(), other.source_views.end());
}

// One greedy sweep. Returns true if anything merged.
bool nms_pass(std::vector<InstanceCandidate3D>& cands, double threshold) {
  std::stable_sort(cands.begin(), cands.end(), candidate_precedes);
  std::vector<char> taken(cands.size(), 0);
  std::vector<InstanceCandidate3D> out;
  bool merged_any = false;
  for (std::size_t top = 0; top < cands.size(); ++top) {
    if (taken[top]) continue;
    taken[top] = 1;
    InstanceCandidate3D current = cands[top];
    for (;;) {
      // All overlaps are judged against the merged result as it stood at the
      // start of the round, then absorbed together.
      std::vector<std::size_t> round;
      for (std::size_t j = top + 1; j < cands.size(); ++j) {
        if (taken[j] || cands[j].class_id != current.class_id) continue;
        if (point_iou(current.point_indices, cands[j].point_indices) > threshold) round.push_back(j);
      }
      if (round.empty()) break;
      for (auto j : round) {
        absorb(current, cands[j]);
        taken[j] = 1;
      }
      merged_any = true;
    }
    out.push_back(std::move(current));
  }
  cands = std::move(out);
  return merged_any;
}

}  // namespace

std::vector<InstanceCandidate3D> nms3d(std::vector<InstanceCandidate3D> cands, const NmsParams& params) {
  params.validate();
  for (auto& c : cands) {
    if (!std::is_sorted(c.point_indices.begin(), c.point_indices.end())) {
      std::sort(c.point_indices.begin(), c.point_indices.end());
    }
    c.point_indices.erase(std::unique(c.point_indices.begin(), c.point_indices.end()), c.point_indices.end());
  }
  while (nms_pass(cands, params.overlap_threshold)) {
  }
  return cands;
}

InstanceAssignment assign_instances(std::span<const InstanceCandidate3D> cands, std::size_t cloud_size) {
  std::vector<std::size_t> order(cands.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return candidate_precedes(cands[a], cands[b]); });
  InstanceAssignment out;
  out.instance_id.assign(cloud_size, 0);
  out.candidate_instance.assign(cands.size(), 0);
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto id = static_cast<InstanceId>(rank + 1);
    out.candidate_instance[order[rank]] = id;
    for (auto p : cands[order[rank]].point_indices) {
      if (p >= cloud_size) throw std::out_of_range("assign_instances: point index outside the cloud");
      if (out.instance_id[p] == 0) out.instance_id[p] = id;
    }
  }
  return out;
}

}  // namespace ovhr3d
