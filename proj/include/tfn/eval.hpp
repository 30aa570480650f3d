#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "tfn/dataset.hpp"
#include "tfn/metrics.hpp"
#include "tfn/model.hpp"

namespace tfn {

struct Evaluation {
  MetricsReport metrics;
  std::vector<double> probs;
  std::vector<int> labels;
};

/// End-to-end inference on every sample of a split, one sample at a time.
Evaluation evaluate_split(const TrajFusionNet& net, const Dataset& data, Split split, const NormStats& stats,
                          const Palette& palette);

/// Pixel errors of predicted boxes against the ground truth of trajectory
/// windows, next to the persistence baseline that repeats the last observed box.
struct TrajectoryErrors {
  double model_mae_px = 0.0;        // mean |error| over the 4 box coordinates
  double persistence_mae_px = 0.0;
  double model_ade_px = 0.0;        // mean distance between box centres
  double persistence_ade_px = 0.0;
  std::int64_t n_windows = 0;

  /// persistence error divided by model error (higher is better).
  double improvement() const { return model_mae_px > 0.0 ? persistence_mae_px / model_mae_px : 0.0; }
  nlohmann::json to_json() const;
};
TrajectoryErrors evaluate_trajectory(const TrajPredictor& predictor, const std::vector<TrajWindow>& windows,
                                     const NormStats& stats);

/// A sample with both scene frames decoded in memory.
struct StagedSample {
  Sample sample;
  SceneImage first;
  SceneImage last;
};
/// Loads the frames of up to `count` samples of a split. All frame I/O of a
/// benchmark happens here.
std::vector<StagedSample> stage_samples(const Dataset& data, Split split, std::size_t count);

struct LatencyStats {
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};
LatencyStats summarize(const std::vector<double>& values);

struct LatencyReport {
  std::string variant;
  std::int64_t params = 0;
  int n_warmup = 0;
  int n_runs = 0;
  LatencyStats model_ms;  // M: network forward passes only
  LatencyStats total_ms;  // M+D: normalization, overlay rendering, resize and forward
  std::vector<double> model_runs;
  std::vector<double> total_runs;
  std::string hardware;

  double preprocessing_ms() const { return total_ms.mean - model_ms.mean; }
  nlohmann::json to_json() const;
};

inline constexpr int kMinBenchmarkRuns = 10;

/// Per-sample latency at batch size 1 on a single thread. Warmup runs are
/// excluded. When `io_probe` is given, its load counter must not move during
/// the measured runs.
LatencyReport benchmark_latency(const TrajFusionNet& net, const std::vector<StagedSample>& samples,
                                const NormStats& stats, const Palette& palette, int n_warmup, int n_runs,
                                const FrameSource* io_probe = nullptr);

/// CPU model and thread count of the current machine.
std::string hardware_note();

/// Table-style latency report: model, params (M), M, M+D and D in milliseconds.
std::string latency_csv(const std::vector<LatencyReport>& reports);
/// Preprocessing costs of pose- and segmentation-based methods, cited
/// constants that are not re-measured.
std::string latency_footer();

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& name, const MetricsReport& m);

}  // namespace tfn
