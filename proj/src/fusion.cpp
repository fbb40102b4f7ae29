#include "ovhr3d/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "ovhr3d/error.hpp"

namespace ovhr3d {

void FusionParams::validate() const {
  if (!(depth_tolerance_abs >= 0) || !(depth_tolerance_rel >= 0)) {
    throw std::invalid_argument("fusion: depth tolerances must be >= 0");
  }
  if (!(min_votes >= 0)) throw std::invalid_argument("fusion: min_votes must be >= 0");
}

CloudProjection project_cloud(const PointCloud& cloud, const RenderedView& view) {
  CloudProjection out;
  out.pixel.assign(cloud.size(), -1);
  out.depth.assign(cloud.size(), 0.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto proj = project_point(cloud.positions[i], view.intrinsics, view.pose);
    if (!proj) continue;
    const auto cell = pixel_cell(proj->pixel, view.intrinsics);
    if (!cell) continue;
    out.pixel[i] = static_cast<std::int64_t>(cell->second) * view.width() + cell->first;
    out.depth[i] = proj->depth;
  }
  return out;
}

std::vector<PointIndex> backproject_mask(const MaskInstance2D& inst, const RenderedView& view,
                                         const CloudProjection& projection, const FusionParams& params) {
  if (inst.mask.width != view.width() || inst.mask.height != view.height()) {
    throw std::invalid_argument("backproject_mask: mask and view dimensions differ");
  }
  std::vector<PointIndex> out;
  for (std::size_t i = 0; i < projection.pixel.size(); ++i) {
    const auto px = projection.pixel[i];
    if (px < 0 || !inst.mask.data[static_cast<std::size_t>(px)]) continue;
    const double surface = view.depth.data[static_cast<std::size_t>(px)];
    if (!std::isfinite(surface)) continue;
    if (std::abs(projection.depth[i] - surface) <= params.tolerance(surface)) out.push_back(static_cast<PointIndex>(i));
  }
  return out;
}

std::vector<PointIndex> backproject_mask(const MaskInstance2D& inst, const RenderedView& view, const PointCloud& cloud,
                                         const FusionParams& params) {
  return backproject_mask(inst, view, project_cloud(cloud, view), params);
}

void VoteTable::add(std::vector<Entry>& cell, ClassId class_id, std::uint64_t units) {
  auto it = std::lower_bound(cell.begin(), cell.end(), class_id,
                             [](const Entry& e, ClassId c) { return e.class_id < c; });
  if (it != cell.end() && it->class_id == class_id) {
    it->units += units;
  } else {
    cell.insert(it, Entry{class_id, units});
  }
}

void VoteTable::accumulate(VoteKey key, ClassId class_id, double score, std::span<const PointIndex> hits) {
  if (applied_.count(key)) {
    throw DuplicateVote("vote for view " + std::to_string(key.view_id) + " mask " + std::to_string(key.mask_index) +
                        " was already applied");
  }
  if (!(score >= 0.0 && score <= 1.0)) throw std::invalid_argument("vote score must lie in [0,1]");
  for (auto h : hits) {
    if (h >= points_.size()) throw std::out_of_range("vote hit index " + std::to_string(h) + " out of range");
  }
  const auto units = static_cast<std::uint64_t>(std::llround(score * kUnitsPerVote));
  applied_.insert(key);
  if (units == 0) return;
  // One mask contributes at most one vote per point.
  std::vector<PointIndex> unique(hits.begin(), hits.end());
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  for (auto h : unique) add(points_[h], class_id, units);
}

void VoteTable::merge(const VoteTable& other) {
  if (other.size() != size()) throw std::invalid_argument("vote tables cover different clouds");
  for (const auto& k : other.applied_) {
    if (applied_.count(k)) {
      throw DuplicateVote("merging vote tables that both contain view " + std::to_string(k.view_id) + " mask " +
                          std::to_string(k.mask_index));
    }
  }
  applied_.insert(other.applied_.begin(), other.applied_.end());
  for (std::size_t i = 0; i < points_.size(); ++i) {
    for (const auto& e : other.points_[i]) add(points_[i], e.class_id, e.units);
  }
}

double VoteTable::weight(std::size_t point, ClassId class_id) const {
  for (const auto& e : points_.at(point)) {
    if (e.class_id == class_id) return static_cast<double>(e.units) / kUnitsPerVote;
  }
  return 0.0;
}

void accumulate_votes(VoteTable& table, const MaskInstance2D& inst, VoteKey key, std::span<const PointIndex> hits) {
  table.accumulate(key, inst.detection.class_id, inst.detection.score, hits);
}

std::vector<ClassId> semantic_labels(const VoteTable& table, const FusionParams& params) {
  std::vector<ClassId> labels(table.size(), kUnlabeled);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const VoteTable::Entry* best = nullptr;
    // Entries are sorted by class id, so strict '>' keeps the smaller id on ties.
    for (const auto& e : table.entries(i)) {
      if (!best || e.units > best->units) best = &e;
    }
    if (!best || best->units == 0) continue;
    if (static_cast<double>(best->units) / VoteTable::kUnitsPerVote >= params.min_votes) labels[i] = best->class_id;
  }
  return labels;
}

std::vector<float> label_confidence(const VoteTable& table, const std::vector<ClassId>& labels) {
  std::vector<float> out(table.size(), 0.0f);
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (labels[i] == kUnlabeled) continue;
    std::uint64_t total = 0;
    std::uint64_t win = 0;
    for (const auto& e : table.entries(i)) {
      total += e.units;
      if (e.class_id == labels[i]) win = e.units;
    }
    if (total > 0) out[i] = std::clamp(static_cast<float>(static_cast<double>(win) / static_cast<double>(total)), 0.0f, 1.0f);
  }
  return out;
}

std::vector<InstanceCandidate3D> build_candidates(std::span<const MaskHits> hits) {
  std::vector<InstanceCandidate3D> out;
  for (const auto& h : hits) {
    if (h.hits.empty()) continue;
    InstanceCandidate3D c;
    c.class_id = h.class_id;
    c.point_indices = h.hits;
    std::sort(c.point_indices.begin(), c.point_indices.end());
    c.point_indices.erase(std::unique(c.point_indices.begin(), c.point_indices.end()), c.point_indices.end());
    c.confidence = std::clamp(h.score, 0.0, 1.0);
    c.source_views = {h.key.view_id};
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace ovhr3d
