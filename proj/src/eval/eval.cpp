#include "tfn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "tfn/blas.hpp"

namespace tfn {

Evaluation evaluate_split(const TrajFusionNet& net, const Dataset& data, Split split, const NormStats& stats,
                          const Palette& palette) {
  Evaluation ev;
  for (const auto& s : data.split(split)) {
    const SceneImage first = data.frames->frame(s.video, s.frame_first);
    const SceneImage last = data.frames->frame(s.video, s.frame_t);
    const auto p = predict_crossing(net, s, first, last, stats, palette);
    ev.probs.push_back(p.probability);
    ev.labels.push_back(s.label);
  }
  ev.metrics = compute_metrics(ev.probs, ev.labels);
  return ev;
}

nlohmann::json TrajectoryErrors::to_json() const {
  return {{"model_mae_px", model_mae_px},
          {"persistence_mae_px", persistence_mae_px},
          {"model_ade_px", model_ade_px},
          {"persistence_ade_px", persistence_ade_px},
          {"improvement", improvement()},
          {"n_windows", n_windows}};
}

TrajectoryErrors evaluate_trajectory(const TrajPredictor& predictor, const std::vector<TrajWindow>& windows,
                                     const NormStats& stats) {
  NoGradGuard no_grad;
  TrajectoryErrors e;
  const std::int64_t m = predictor.config().m;
  double mae = 0.0, pmae = 0.0, ade = 0.0, pade = 0.0;
  for (const auto& w : windows) {
    const Rows past(w.rows.begin(), w.rows.begin() + kPastLen);
    const Tensor x = unsqueeze(rows_to_tensor(offset_and_zscore(past, stats), m), 0);
    const auto boxes = boxes_from_prediction(predictor.forward(x), w.rows[0], stats);
    const Row& last = w.rows[kPastLen - 1];
    for (int k = 0; k < kPredLen; ++k) {
      const Row& truth = w.rows[static_cast<std::size_t>(kPastLen + k)];
      const Box& b = boxes[static_cast<std::size_t>(k)];
      for (int c = 0; c < 4; ++c) {
        mae += std::abs(b[static_cast<std::size_t>(c)] - truth[static_cast<std::size_t>(c)]);
        pmae += std::abs(last[static_cast<std::size_t>(c)] - truth[static_cast<std::size_t>(c)]);
      }
      const double tcx = 0.5 * (truth[0] + truth[2]), tcy = 0.5 * (truth[1] + truth[3]);
      ade += std::hypot(0.5 * (b[0] + b[2]) - tcx, 0.5 * (b[1] + b[3]) - tcy);
      pade += std::hypot(0.5 * (last[0] + last[2]) - tcx, 0.5 * (last[1] + last[3]) - tcy);
    }
  }
  e.n_windows = static_cast<std::int64_t>(windows.size());
  if (e.n_windows > 0) {
    const double steps = static_cast<double>(e.n_windows) * kPredLen;
    e.model_mae_px = mae / (4.0 * steps);
    e.persistence_mae_px = pmae / (4.0 * steps);
    e.model_ade_px = ade / steps;
    e.persistence_ade_px = pade / steps;
  }
  return e;
}

std::vector<StagedSample> stage_samples(const Dataset& data, Split split, std::size_t count) {
  const auto& src = data.split(split);
  if (src.empty()) throw DataError(std::string("no samples in the ") + split_name(split) + " split");
  std::vector<StagedSample> out;
  for (std::size_t i = 0; i < std::min(count, src.size()); ++i) {
    const Sample& s = src[i];
    out.push_back({s, data.frames->frame(s.video, s.frame_first), data.frames->frame(s.video, s.frame_t)});
  }
  return out;
}

LatencyStats summarize(const std::vector<double>& values) {
  LatencyStats s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  for (double v : values) s.mean += v;
  s.mean /= n;
  for (double v : values) s.std += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(s.std / n);
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  s.min = sorted.front();
  s.max = sorted.back();
  return s;
}

namespace {

nlohmann::json stats_json(const LatencyStats& s) {
  return {{"mean", s.mean}, {"std", s.std}, {"median", s.median}, {"min", s.min}, {"max", s.max}};
}

}  // namespace

nlohmann::json LatencyReport::to_json() const {
  return {{"variant", variant},
          {"params", params},
          {"n_warmup", n_warmup},
          {"n_runs", n_runs},
          {"model_ms", stats_json(model_ms)},
          {"total_ms", stats_json(total_ms)},
          {"preprocessing_ms", preprocessing_ms()},
          {"hardware", hardware}};
}

LatencyReport benchmark_latency(const TrajFusionNet& net, const std::vector<StagedSample>& samples,
                                const NormStats& stats, const Palette& palette, int n_warmup, int n_runs,
                                const FrameSource* io_probe) {
  if (n_runs < kMinBenchmarkRuns) {
    throw std::invalid_argument("benchmark needs at least " + std::to_string(kMinBenchmarkRuns) + " runs, got " +
                                std::to_string(n_runs));
  }
  if (n_warmup < 0) throw std::invalid_argument("negative warmup count");
  if (samples.empty()) throw std::invalid_argument("benchmark needs at least one staged sample");
  set_blas_threads(1);

  LatencyReport r;
  r.variant = variant_name(net.config().variant);
  r.params = count_parameters(net);
  r.n_warmup = n_warmup;
  r.n_runs = n_runs;
  r.hardware = hardware_note();
  for (int i = 0; i < n_warmup; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i) % samples.size()];
    (void)predict_crossing(net, s.sample, s.first, s.last, stats, palette);
  }
  const std::int64_t loads_before = io_probe ? io_probe->load_count() : 0;
  for (int i = 0; i < n_runs; ++i) {
    const auto& s = samples[static_cast<std::size_t>(i) % samples.size()];
    PipelineTrace trace;
    (void)predict_crossing(net, s.sample, s.first, s.last, stats, palette, &trace);
    r.model_runs.push_back(trace.model_ms);
    r.total_runs.push_back(trace.total_ms);
  }
  if (io_probe && io_probe->load_count() != loads_before) {
    throw std::logic_error("frame I/O happened inside the timed region (" +
                           std::to_string(io_probe->load_count() - loads_before) + " loads)");
  }
  r.model_ms = summarize(r.model_runs);
  r.total_ms = summarize(r.total_runs);
  return r;
}

std::string hardware_note() {
  std::string cpu = "unknown CPU";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) cpu = line.substr(colon + 2);
      break;
    }
  }
  return cpu + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads, 1 used";
}

std::string latency_csv(const std::vector<LatencyReport>& reports) {
  std::ostringstream os;
  os.precision(6);
  os << "model,params_m,m_ms,m_std_ms,m_plus_d_ms,m_plus_d_std_ms,d_ms,n_runs\n";
  for (const auto& r : reports) {
    os << "TrajFusionNet-" << r.variant << "," << static_cast<double>(r.params) / 1e6 << "," << r.model_ms.mean
       << "," << r.model_ms.std << "," << r.total_ms.mean << "," << r.total_ms.std << "," << r.preprocessing_ms()
       << "," << r.n_runs << "\n";
  }
  return os.str();
}

std::string latency_footer() {
  return "Preprocessing of competing approaches (cited, not measured): pose estimation 32.98 ms, "
         "semantic segmentation 157.30 ms per frame. Frame decoding is excluded from D.";
}

std::string metrics_csv_header() { return "name,accuracy,auc,f1,precision,recall,tp,fp,tn,fn,n"; }

std::string metrics_csv_row(const std::string& name, const MetricsReport& m) {
  std::ostringstream os;
  os.precision(6);
  os << name << "," << m.accuracy << ",";
  if (m.auc) os << *m.auc;
  os << "," << m.f1 << "," << m.precision << "," << m.recall << "," << m.counts.tp << "," << m.counts.fp << ","
     << m.counts.tn << "," << m.counts.fn << "," << m.n_samples;
  return os.str();
}

}  // namespace tfn
