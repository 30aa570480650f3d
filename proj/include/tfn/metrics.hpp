#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"

namespace tfn {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  /// Absent when the labels contain a single class.
  std::optional<double> auc;
  ConfusionCounts counts;
  std::int64_t n_samples = 0;

  bool auc_defined() const { return auc.has_value(); }
  nlohmann::json to_json() const;
};

/// Threshold 0.5 for the confusion-matrix metrics. Precision, recall and F1
/// are 0 when their denominators vanish.
MetricsReport compute_metrics(const std::vector<double>& probs, const std::vector<int>& labels);
MetricsReport metrics_from_counts(const ConfusionCounts& c);

/// Fraction of (positive, negative) pairs ranked correctly, ties worth one
/// half. Computed from sorted ranks in O(n log n); the pair count is summed in
/// halves so the result is exact. Nullopt when either class is missing.
std::optional<double> pairwise_auc(const std::vector<double>& probs, const std::vector<int>& labels);

}  // namespace tfn
