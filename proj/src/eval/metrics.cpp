#include "tfn/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace tfn {

namespace {

void check_inputs(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) {
    throw std::invalid_argument("metrics: " + std::to_string(probs.size()) + " scores but " +
                                std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw std::invalid_argument("metrics: label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                  " is not binary");
    }
    if (!(probs[i] >= 0.0 && probs[i] <= 1.0)) {
      throw std::invalid_argument("metrics: score at index " + std::to_string(i) + " is outside [0,1]");
    }
  }
}

double ratio(std::int64_t num, std::int64_t den) {
  return den > 0 ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}

}  // namespace

MetricsReport metrics_from_counts(const ConfusionCounts& c) {
  MetricsReport r;
  r.counts = c;
  r.n_samples = c.tp + c.fp + c.tn + c.fn;
  r.accuracy = ratio(c.tp + c.tn, r.n_samples);
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  const double pr = r.precision + r.recall;
  r.f1 = pr > 0.0 ? 2.0 * r.precision * r.recall / pr : 0.0;
  return r;
}

std::optional<double> pairwise_auc(const std::vector<double>& probs, const std::vector<int>& labels) {
  check_inputs(probs, labels);
  const auto n_pos = std::count(labels.begin(), labels.end(), 1);
  const auto n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });

  // Walk groups of tied scores in ascending order. Each positive beats every
  // negative below its group and ties with the negatives inside it.
  std::int64_t half_pairs = 0;  // twice the number of won pairs
  std::int64_t neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::int64_t pos = 0;
    std::int64_t neg = 0;
    while (j < order.size() && probs[order[j]] == probs[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1;
      ++j;
    }
    half_pairs += pos * (2 * neg_below + neg);
    neg_below += neg;
    i = j;
  }
  return static_cast<double>(half_pairs) / (2.0 * static_cast<double>(n_pos * n_neg));
}

MetricsReport compute_metrics(const std::vector<double>& probs, const std::vector<int>& labels) {
  check_inputs(probs, labels);
  if (probs.empty()) throw std::invalid_argument("metrics: no samples");
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool pred = probs[i] >= 0.5;
    if (labels[i] == 1) {
      (pred ? c.tp : c.fn) += 1;
    } else {
      (pred ? c.fp : c.tn) += 1;
    }
  }
  MetricsReport r = metrics_from_counts(c);
  r.auc = pairwise_auc(probs, labels);
  return r;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {{"accuracy", accuracy},
                      {"f1", f1},
                      {"precision", precision},
                      {"recall", recall},
                      {"auc", auc ? nlohmann::json(*auc) : nlohmann::json(nullptr)},
                      {"auc_defined", auc.has_value()},
                      {"tp", counts.tp},
                      {"fp", counts.fp},
                      {"tn", counts.tn},
                      {"fn", counts.fn},
                      {"n_samples", n_samples}};
  return j;
}

}  // namespace tfn
