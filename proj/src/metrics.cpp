#include "ovhr3d/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace ovhr3d {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::optional<std::size_t> ConfusionMatrix::index_of(ClassId id) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), id);
  if (it == classes.end() || *it != id) return std::nullopt;
  return static_cast<std::size_t>(it - classes.begin());
}

ConfusionMatrix confusion(std::span<const ClassId> pred, std::span<const ClassId> gt, const std::set<ClassId>& ignore) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("confusion: prediction has " + std::to_string(pred.size()) + " labels, ground truth " +
                                std::to_string(gt.size()));
  }
  ConfusionMatrix cm;
  cm.ignored = ignore;
  std::set<ClassId> present;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (ignore.count(gt[i])) continue;
    present.insert(gt[i]);
    present.insert(pred[i]);
  }
  cm.classes.assign(present.begin(), present.end());
  cm.counts.assign(cm.dim() * cm.dim(), 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (ignore.count(gt[i])) continue;
    ++cm.counts[*cm.index_of(gt[i]) * cm.dim() + *cm.index_of(pred[i])];
  }
  return cm;
}

SegmentationMetrics metrics(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw std::invalid_argument("metrics: confusion matrix is empty");
  const std::size_t k = cm.dim();
  std::vector<std::uint64_t> row(k, 0), col(k, 0);
  std::uint64_t trace = 0;
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      row[r] += cm.at(r, c);
      col[c] += cm.at(r, c);
    }
    trace += cm.at(r, r);
  }
  SegmentationMetrics m;
  m.accuracy = static_cast<double>(trace) / static_cast<double>(total);
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    if (cm.ignored.count(cm.classes[c])) continue;
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = row[c] + col[c] - tp;
    if (denom == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(denom);
    m.class_iou[cm.classes[c]] = iou;
    sum += iou;
  }
  m.miou = m.class_iou.empty() ? 0.0 : sum / static_cast<double>(m.class_iou.size());
  return m;
}

nlohmann::json to_json(const SegmentationMetrics& m, const std::map<ClassId, std::string>& names) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& [id, iou] : m.class_iou) {
    nlohmann::json entry{{"class_id", id}, {"iou", iou}};
    if (const auto it = names.find(id); it != names.end()) entry["name"] = it->second;
    per_class.push_back(std::move(entry));
  }
  return nlohmann::json{{"accuracy", m.accuracy}, {"miou", m.miou}, {"per_class", per_class}};
}

nlohmann::json to_json(const TimingReport& t) {
  return nlohmann::json{{"render_s", t.render_s},
                        {"detect_segment_s", t.detect_segment_s},
                        {"backproject_s", t.backproject_s},
                        {"postprocess_s", t.postprocess_s},
                        {"total_s", t.total_s}};
}

std::string format_table(const std::string& dataset, const SegmentationMetrics& m,
                         const std::map<ClassId, std::string>& names) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2);
  out << std::left << std::setw(14) << "Dataset" << std::right << std::setw(14) << "Accuracy (%)" << std::setw(10)
      << "mIoU (%)";
  for (const auto& [id, iou] : m.class_iou) {
    const auto it = names.find(id);
    out << std::setw(14) << (it != names.end() ? it->second : std::to_string(id));
  }
  out << '\n' << std::left << std::setw(14) << dataset << std::right << std::setw(14) << 100.0 * m.accuracy
      << std::setw(10) << 100.0 * m.miou;
  for (const auto& [id, iou] : m.class_iou) out << std::setw(14) << 100.0 * iou;
  out << '\n';
  return out.str();
}

}  // namespace ovhr3d
