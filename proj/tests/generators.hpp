#pragma once

// Random instances shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <random>
#include <vector>

#include "ovhr3d/fusion.hpp"
#include "ovhr3d/geometry.hpp"

namespace testing_support {

struct DbscanCase {
  std::vector<ovhr3d::Point3> points;
  double eps = 0.3;
  std::size_t min_pts = 4;
};

// A few Gaussian blobs plus uniform clutter; some points land on a lattice
// with spacing eps so inclusive-boundary handling is exercised.
inline DbscanCase random_dbscan_case(std::mt19937_64& rng) {
  DbscanCase c;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  c.eps = 0.1 + 0.5 * unit(rng);
  c.min_pts = 1 + rng() % 8;
  const int blobs = 1 + static_cast<int>(rng() % 4);
  for (int b = 0; b < blobs; ++b) {
    const ovhr3d::Point3 center(unit(rng) * 6, unit(rng) * 6, unit(rng) * 2);
    std::normal_distribution<double> spread(0.0, 0.1 + 0.3 * unit(rng));
    const int n = 5 + static_cast<int>(rng() % 60);
    for (int i = 0; i < n; ++i) c.points.push_back(center + ovhr3d::Point3(spread(rng), spread(rng), spread(rng)));
  }
  const int clutter = static_cast<int>(rng() % 40);
  for (int i = 0; i < clutter; ++i) c.points.emplace_back(unit(rng) * 8, unit(rng) * 8, unit(rng) * 3);
  if (rng() % 2) {
    const ovhr3d::Point3 origin(unit(rng) * 4, unit(rng) * 4, 0.0);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 3; ++j) c.points.push_back(origin + ovhr3d::Point3(i * c.eps, j * c.eps, 0.0));
  }
  std::shuffle(c.points.begin(), c.points.end(), rng);
  return c;
}

// Up to 20 candidates over at most 200 point indices, drawn so that
// overlaps are common: each candidate is a jittered copy of one of a few
// prototypes.
inline std::vector<ovhr3d::InstanceCandidate3D> random_nms_case(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::uint32_t universe = 20 + static_cast<std::uint32_t>(rng() % 181);
  const int prototypes = 1 + static_cast<int>(rng() % 5);
  std::vector<std::vector<ovhr3d::PointIndex>> protos(prototypes);
  for (auto& p : protos) {
    const auto lo = static_cast<std::uint32_t>(rng() % universe);
    const auto len = 1 + static_cast<std::uint32_t>(rng() % (universe / 2 + 1));
    for (std::uint32_t i = lo; i < std::min(universe, lo + len); ++i) p.push_back(i);
  }
  const int n = 1 + static_cast<int>(rng() % 20);
  std::vector<ovhr3d::InstanceCandidate3D> out;
  for (int i = 0; i < n; ++i) {
    const auto& base = protos[rng() % protos.size()];
    ovhr3d::InstanceCandidate3D c;
    c.class_id = static_cast<ovhr3d::ClassId>(1 + rng() % 2);
    const double keep = 0.4 + 0.6 * unit(rng);
    for (auto p : base)
      if (unit(rng) < keep) c.point_indices.push_back(p);
    for (std::uint32_t p = 0; p < universe; ++p)
      if (unit(rng) < 0.02) c.point_indices.push_back(p);
    std::sort(c.point_indices.begin(), c.point_indices.end());
    c.point_indices.erase(std::unique(c.point_indices.begin(), c.point_indices.end()), c.point_indices.end());
    if (c.point_indices.empty()) c.point_indices.push_back(static_cast<ovhr3d::PointIndex>(rng() % universe));
    // Coarse scores so that confidence ties actually occur.
    c.confidence = static_cast<double>(rng() % 10) / 10.0;
    c.source_views = {i};
    out.push_back(std::move(c));
  }
  return out;
}

struct LabelPair {
  std::vector<ovhr3d::ClassId> pred;
  std::vector<ovhr3d::ClassId> gt;
};

// Class 1 with (TP, FP, FN) = (40, 10, 10) and class 2 with (30, 5, 15);
// misses beyond the cross-confusions are predicted as unlabeled.
inline LabelPair hand_metrics_case() {
  LabelPair c;
  auto add = [&](ovhr3d::ClassId g, ovhr3d::ClassId p, int n) {
    c.gt.insert(c.gt.end(), n, g);
    c.pred.insert(c.pred.end(), n, p);
  };
  add(1, 1, 40);
  add(2, 2, 30);
  add(2, 1, 10);
  add(1, 2, 5);
  add(1, 0, 5);
  add(2, 0, 5);
  return c;
}

inline LabelPair random_label_pair(std::mt19937_64& rng) {
  LabelPair c;
  const std::size_t n = 1 + rng() % 500;
  const auto classes = static_cast<ovhr3d::ClassId>(1 + rng() % 6);
  const double agree = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    // Ground truth is never all ignored: the first point is always a class.
    const auto g = static_cast<ovhr3d::ClassId>(i == 0 ? 1 + rng() % classes : rng() % (classes + 1));
    c.gt.push_back(g);
    c.pred.push_back(unit(rng) < agree ? g : static_cast<ovhr3d::ClassId>(rng() % (classes + 2)));
  }
  return c;
}

}  // namespace testing_support
