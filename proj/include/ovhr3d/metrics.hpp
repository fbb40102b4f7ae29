#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovhr3d/raster.hpp"

namespace ovhr3d {

/// Rows are ground truth, columns are predictions, both indexed through
/// `classes` (sorted ids present in either).
struct ConfusionMatrix {
  std::vector<ClassId> classes;
  std::vector<std::uint64_t> counts;
  /// Ignored ids; predictions of these count as misses but never form a class of their own.
  std::set<ClassId> ignored;

  std::size_t dim() const { return classes.size(); }
  std::uint64_t at(std::size_t gt_row, std::size_t pred_col) const { return counts[gt_row * dim() + pred_col]; }
  std::uint64_t total() const;
  std::optional<std::size_t> index_of(ClassId id) const;
};

/// Tallies points whose ground truth is not in `ignore`. Throws
/// std::invalid_argument on length mismatch.
ConfusionMatrix confusion(std::span<const ClassId> pred, std::span<const ClassId> gt,
                          const std::set<ClassId>& ignore = {kUnlabeled});

struct SegmentationMetrics {
  double accuracy = 0.0;
  /// IoU for every class present in ground truth or prediction.
  std::map<ClassId, double> class_iou;
  double miou = 0.0;
};

/// Throws std::invalid_argument when the matrix holds no points.
SegmentationMetrics metrics(const ConfusionMatrix& cm);

struct TimingReport {
  double render_s = 0.0;
  double detect_segment_s = 0.0;
  double backproject_s = 0.0;
  double postprocess_s = 0.0;
  double total_s = 0.0;

  double stage_sum() const { return render_s + detect_segment_s + backproject_s + postprocess_s; }
};

nlohmann::json to_json(const SegmentationMetrics& m, const std::map<ClassId, std::string>& names = {});
nlohmann::json to_json(const TimingReport& t);
/// Accuracy, mIoU and per-class IoU in percent, one row per dataset.
std::string format_table(const std::string& dataset, const SegmentationMetrics& m,
                         const std::map<ClassId, std::string>& names = {});

}  // namespace ovhr3d
