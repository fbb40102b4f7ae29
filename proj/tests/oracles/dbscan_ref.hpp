#pragma once

// O(n^2) DBSCAN reference: explicit neighborhood graph, union-find over
// core-core edges, border points to the adjacent cluster with the smallest id.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ovhr3d/geometry.hpp"

namespace oracle {

inline std::vector<std::int32_t> dbscan_reference(const std::vector<ovhr3d::Point3>& pts, double eps,
                                                  std::size_t min_pts) {
  const std::size_t n = pts.size();
  std::vector<std::vector<std::size_t>> nbr(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if ((pts[i] - pts[j]).squaredNorm() <= eps * eps) nbr[i].push_back(j);
    }
  }
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) core[i] = nbr[i].size() >= min_pts;

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    for (auto j : nbr[i]) {
      if (core[j]) parent[find(i)] = find(j);
    }
  }
  // Cluster ids in order of each component's lowest-index core point.
  std::vector<std::int32_t> root_id(n, -1);
  std::vector<std::int32_t> labels(n, -1);
  std::int32_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    const auto r = find(i);
    if (root_id[r] < 0) root_id[r] = next++;
    labels[i] = root_id[r];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) continue;
    std::int32_t best = -1;
    for (auto j : nbr[i]) {
      if (core[j] && (best < 0 || labels[j] < best)) best = labels[j];
    }
    labels[i] = best;
  }
  return labels;
}

// Canonical relabeling: clusters renumbered by first appearance, noise kept at -1.
inline std::vector<std::int32_t> canonical_partition(const std::vector<std::int32_t>& labels) {
  std::vector<std::int32_t> map;
  std::vector<std::int32_t> out(labels.size(), -1);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const auto l = static_cast<std::size_t>(labels[i]);
    if (l >= map.size()) map.resize(l + 1, -1);
    if (map[l] < 0) map[l] = static_cast<std::int32_t>(std::count_if(map.begin(), map.end(), [](auto v) { return v >= 0; }));
    out[i] = map[l];
  }
  return out;
}

}  // namespace oracle
