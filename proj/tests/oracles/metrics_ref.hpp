#pragma once

// Per-class tallies straight from the label arrays, no confusion matrix.

#include <map>
#include <set>
#include <vector>

#include "ovhr3d/raster.hpp"

namespace oracle {

struct RefMetrics {
  double accuracy = 0;
  double miou = 0;
  std::map<ovhr3d::ClassId, double> iou;
};

inline RefMetrics metrics_reference(const std::vector<ovhr3d::ClassId>& pred, const std::vector<ovhr3d::ClassId>& gt,
                                    const std::set<ovhr3d::ClassId>& ignore = {0}) {
  std::set<ovhr3d::ClassId> classes;
  std::size_t total = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (ignore.count(gt[i])) continue;
    ++total;
    correct += pred[i] == gt[i];
    classes.insert(gt[i]);
    if (!ignore.count(pred[i])) classes.insert(pred[i]);
  }
  RefMetrics m;
  m.accuracy = total ? static_cast<double>(correct) / total : 0.0;
  double sum = 0;
  for (auto c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (ignore.count(gt[i])) continue;
      if (gt[i] == c && pred[i] == c) ++tp;
      else if (pred[i] == c) ++fp;
      else if (gt[i] == c) ++fn;
    }
    const double iou = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    m.iou[c] = iou;
    sum += iou;
  }
  m.miou = classes.empty() ? 0.0 : sum / classes.size();
  return m;
}

}  // namespace oracle
