#pragma once

#include <cmath>
#include <cstdint>
#include <limits>

#include "peakit/error.hpp"

namespace peakit::nn {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }

  void add(bool predicted, bool actual) {
    if (predicted)
      (actual ? tp : fp) += 1;
    else
      (actual ? fn : tn) += 1;
  }

  bool operator==(const ConfusionCounts&) const = default;
};

/// [TP/(TP+FP) + TN/(FN+TN)] / 2, the accuracy reported throughout the
/// toolkit. Note the first term is precision, the second negative
/// predictive value.
inline double accuracy(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0) fail(ErrorCode::UndefinedDenominator, "TP + FP is zero (no positive predictions)");
  if (c.fn + c.tn == 0) fail(ErrorCode::UndefinedDenominator, "FN + TN is zero (no negative predictions)");
  return (static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) +
          static_cast<double>(c.tn) / static_cast<double>(c.fn + c.tn)) /
         2.0;
}

/// Same formula, NaN where a denominator vanishes.
inline double accuracy_or_nan(const ConfusionCounts& c) {
  if (c.tp + c.fp == 0 || c.fn + c.tn == 0) return std::numeric_limits<double>::quiet_NaN();
  return accuracy(c);
}

/// Recall-based balanced accuracy [TP/(TP+FN) + TN/(TN+FP)] / 2.
inline double balanced_accuracy(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) return std::numeric_limits<double>::quiet_NaN();
  return (static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) +
          static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp)) /
         2.0;
}

}  // namespace peakit::nn
