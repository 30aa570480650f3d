// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails. Pass criterion numbers as arguments to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tfn/ablation.hpp"
#include "tfn/eval.hpp"
#include "tfn/gradsuite.hpp"
#include "tfn/train.hpp"

using namespace tfn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Collects the failed checks of one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok) failed_.push_back(what);
  }
  Outcome outcome(const std::string& detail) const {
    Outcome o;
    o.pass = failed_.empty();
    o.detail = detail;
    for (const auto& f : failed_) o.detail += "; failed: " + f;
    return o;
  }

 private:
  std::vector<std::string> failed_;
};

fs::path work_dir() {
  const fs::path p = fs::current_path() / "acceptance_work";
  fs::create_directories(p);
  return p;
}

// 1 ----------------------------------------------------------------------------

Outcome parameter_counts() {
  Checks c;
  auto rel = [](double v, double target) { return v / target - 1.0; };
  const double full = static_cast<double>(count_parameters(ModelConfig::make(Variant::Full)));
  const double small = static_cast<double>(count_parameters(ModelConfig::make(Variant::Small)));
  Rng rng(0);
  const double b2 = static_cast<double>(count_parameters(Van(VanConfig::b2(), rng)));
  const double b0 = static_cast<double>(count_parameters(Van(VanConfig::b0(), rng)));
  c.expect(std::abs(rel(full, 58.26e6)) <= 0.02, "full within 2%");
  c.expect(std::abs(rel(small, 5.20e6)) <= 0.05, "small within 5%");
  c.expect(std::abs(rel(b2, 26.6e6)) <= 0.02, "VAN-B2 within 2%");
  c.expect(std::abs(rel(b0, 4.1e6)) <= 0.05, "VAN-B0 within 5%");
  std::ostringstream os;
  os << "full " << static_cast<long long>(full) << " (" << fmt("%+.2f%%", 100 * rel(full, 58.26e6)) << "), small "
     << static_cast<long long>(small) << " (" << fmt("%+.2f%%", 100 * rel(small, 5.20e6)) << "), VAN-B2 "
     << static_cast<long long>(b2) << " (" << fmt("%+.2f%%", 100 * rel(b2, 26.6e6)) << "), VAN-B0 "
     << static_cast<long long>(b0) << " (" << fmt("%+.2f%%", 100 * rel(b0, 4.1e6)) << ")";
  return c.outcome(os.str());
}

// 2 ----------------------------------------------------------------------------

Outcome gradient_suite() {
  Checks c;
  const auto t0 = Clock::now();
  const auto results = run_gradient_suite({.seeds = 20});
  const double secs = seconds_since(t0);
  double worst32 = 0.0, worst64 = 0.0;
  int cases = 0;
  for (const auto& r : results) {
    ++cases;
    c.expect(r.passed, r.name + " " + dtype_name(r.dtype) + " " + r.diagnostic);
    c.expect(r.seeds == 20, r.name + " ran all seeds");
    (r.dtype == DType::F32 ? worst32 : worst64) = std::max(r.dtype == DType::F32 ? worst32 : worst64, r.max_rel_error);
  }
  c.expect(secs < 300.0, "runtime under 5 minutes");
  return c.outcome(std::to_string(cases / 2) + " ops/blocks x 20 seeds, worst rel error f32 " + fmt("%.2e", worst32) +
                   " (< 1e-4), f64 " + fmt("%.2e", worst64) + " (< 1e-6), " + fmt("%.0f s", secs));
}

// 3 ----------------------------------------------------------------------------

Outcome loss_oracles() {
  Checks c;
  const Tensor half = Tensor::from({0.5}, {1}, DType::F64);
  const Tensor one = Tensor::from({1.0}, {1}, DType::F64);
  const double wce = weighted_ce_loss(half, one, 0.7).item();
  c.expect(std::abs(wce - 0.7 * std::log(2.0)) < 1e-6, "0.7 ln 2 case");

  Rng rng(5);
  double worst_bce = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 40));
    std::vector<double> p, y;
    double bce = 0.0;
    for (int i = 0; i < n; ++i) {
      p.push_back(rng.uniform(1e-3, 1.0 - 1e-3));
      y.push_back(static_cast<double>(rng.uniform_int(0, 1)));
      bce -= y.back() * std::log(p.back()) + (1.0 - y.back()) * std::log(1.0 - p.back());
    }
    bce /= n;
    const double l = weighted_ce_loss(Tensor::from(p, {n}, DType::F64), Tensor::from(y, {n}, DType::F64), 0.5).item();
    worst_bce = std::max(worst_bce, std::abs(l - 0.5 * bce));
  }
  c.expect(worst_bce < 1e-9, "alpha 0.5 equals half BCE");

  // Dyadic values keep every intermediate exact.
  bool mse_exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> a, b;
    double acc = 0.0;
    for (int i = 0; i < kPredLen * kFeatures; ++i) {
      a.push_back(static_cast<double>(rng.uniform_int(-64, 64)) / 8.0);
      b.push_back(static_cast<double>(rng.uniform_int(-64, 64)) / 8.0);
      acc += (a.back() - b.back()) * (a.back() - b.back());
    }
    const Tensor ta = Tensor::from(a, {1, kPredLen, kFeatures}, DType::F64);
    const Tensor tb = Tensor::from(b, {1, kPredLen, kFeatures}, DType::F64);
    mse_exact = mse_exact && traj_mse_loss(ta, tb).item() == acc / (kPredLen * kFeatures);
    mse_exact = mse_exact && mse_loss(ta, tb).item() == acc / (kPredLen * kFeatures);
  }
  c.expect(mse_exact, "MSE exact");
  return c.outcome("weighted CE " + fmt("%.7f", wce) + " vs 0.7 ln2 " + fmt("%.7f", 0.7 * std::log(2.0)) +
                   ", max |L(0.5) - BCE/2| " + fmt("%.1e", worst_bce) + " over 100 sets, MSE exact on 100 sets");
}

// 4 ----------------------------------------------------------------------------

Outcome overlay_contract() {
  Checks c;
  const auto t0 = Clock::now();
  const Palette& pal = default_palette();
  Rng rng(44);
  int r_ok = 0, colour_ok = 0, order_ok = 0, idem_ok = 0;
  const int cases = 1000;
  for (int k = 0; k < cases; ++k) {
    const int h = static_cast<int>(rng.uniform_int(1, 40));
    const int w = static_cast<int>(rng.uniform_int(1, 40));
    SceneImage img(h, w);
    for (auto& v : img.bgr) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
    const int n = static_cast<int>(rng.uniform_int(0, 12));
    const int first = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(pal.rgb.size()) - n));
    std::vector<Box> boxes;
    for (int i = 0; i < n; ++i) {
      auto coord = [&](int extent) {
        const double v = rng.uniform(-8.0, extent + 8.0);
        return rng.uniform_int(0, 3) == 0 ? std::round(v) : v;
      };
      boxes.push_back({coord(w), coord(h), coord(w), coord(h)});
    }
    const SceneImage out = render_overlay(img, boxes, pal, first);

    bool r_same = true, colours = true, order = true;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        r_same = r_same && out.at(y, x, 2) == img.at(y, x, 2);
        // The last box whose extent overlaps the pixel cell decides its colour.
        int top = -1;
        for (int i = 0; i < n; ++i) {
          const auto& b = boxes[static_cast<std::size_t>(i)];
          const bool in_x = x + 1 > std::min(b[0], b[2]) && x < std::max(b[0], b[2]);
          const bool in_y = y + 1 > std::min(b[1], b[3]) && y < std::max(b[1], b[3]);
          if (in_x && in_y) top = i;
        }
        if (top < 0) {
          colours = colours && out.at(y, x, 0) == img.at(y, x, 0) && out.at(y, x, 1) == img.at(y, x, 1);
        } else {
          const auto& rgb = pal.rgb[static_cast<std::size_t>(first + top)];
          const bool match = out.at(y, x, 0) == rgb[2] && out.at(y, x, 1) == rgb[1];
          colours = colours && match;
          order = order && match;
        }
      }
    }
    r_ok += r_same;
    colour_ok += colours;
    order_ok += order;
    idem_ok += render_overlay(out, boxes, pal, first) == out;
  }
  c.expect(r_ok == cases, "R channel unchanged");
  c.expect(colour_ok == cases, "B,G equal palette entries");
  c.expect(order_ok == cases, "later boxes drawn on top");
  c.expect(idem_ok == cases, "idempotent");
  const double secs = seconds_since(t0);
  c.expect(secs < 60.0, "runtime under 1 minute");
  return c.outcome(std::to_string(cases) + " random cases: R unchanged " + std::to_string(r_ok) + ", B/G palette " +
                   std::to_string(colour_ok) + ", draw order " + std::to_string(order_ok) + ", idempotent " +
                   std::to_string(idem_ok) + ", " + fmt("%.1f s", secs));
}

// 5 ----------------------------------------------------------------------------

Outcome structural_contracts() {
  Checks c;
  Rng rng(55);
  Tensor past = Tensor::empty({kPastLen, kFeatures});
  for (std::int64_t i = 0; i < past.numel(); ++i) past.set(i, rng.normal());
  const auto dec = TrajPredictor::build_decoder_input(past);
  bool zeros = dec.shape() == Shape{kSeqLen, kFeatures};
  for (int r = kPastLen; r < kSeqLen && zeros; ++r) {
    for (int k = 0; k < kFeatures; ++k) zeros = zeros && dec.at(r * kFeatures + k) == 0.0;
  }
  c.expect(zeros, "decoder rows 15-74 zero");

  TrajPredictor tp(TrajPredictorConfig::small(), rng);
  const auto out = tp.forward(unsqueeze(past, 0));
  c.expect(out.shape() == Shape{1, kPredLen, kFeatures}, "predictor output 60x5");

  Tensor pred = Tensor::empty({kPredLen, kFeatures});
  for (std::int64_t i = 0; i < pred.numel(); ++i) pred.set(i, rng.normal());
  const auto psi = append_type_ids(past, pred);
  bool ids = psi.shape() == Shape{kSeqLen, kFeatures + 1};
  for (int r = 0; r < kSeqLen && ids; ++r) ids = psi.at(r * (kFeatures + 1) + kFeatures) == (r < kPastLen ? 0.0 : 1.0);
  c.expect(ids, "type id column [0 x 15, 1 x 60]");

  // Scenario toggles, each against the base model of the same variant.
  const auto base = ModelConfig::make(Variant::Full, {}, 64);
  const auto s1 = ModelConfig::make(Variant::Full, scenario_toggles(1), 64);
  const auto s2 = ModelConfig::make(Variant::Full, scenario_toggles(2), 64);
  const auto s3 = ModelConfig::make(Variant::Full, scenario_toggles(3), 64);
  const auto s4 = ModelConfig::make(Variant::Full, scenario_toggles(4), 64);
  const auto s5 = ModelConfig::make(Variant::Full, scenario_toggles(5), 64);
  const auto s6 = ModelConfig::make(Variant::Full, scenario_toggles(6), 64);
  Rng r1(1), r2(1);
  c.expect(FusionHead(true, r1).attention() && !FusionHead(false, r2).attention() && s1.toggles.attn_fusion,
           "scenario 1 modality attention");
  c.expect(base.van_count() == 2 && s2.van_count() == 1, "scenario 2 single VAN");
  c.expect(base.sam.input_width() == 6 && s3.sam.input_width() == 5 && s3.sam.sequence_length() == 75,
           "scenario 3 SAM width 5");
  c.expect(s4.m() == 4 && s4.trajpred.m == 4 && s4.sam.input_width() == 5, "scenario 4 m = 4");
  c.expect(s5.sam.sequence_length() == kPastLen && base.sam.sequence_length() == kSeqLen, "scenario 5 SAM 15 rows");

  const Palette& pal = default_palette();
  SceneImage first(48, 64), last(48, 64);
  for (auto& v : first.bgr) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  for (auto& v : last.bgr) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  const std::vector<Box> obs(kPastLen, Box{2, 2, 10, 10});
  const std::vector<Box> fut(kPredLen, Box{30, 20, 40, 30});
  const auto base_imgs = render_vam_inputs(base, first, last, obs, fut, pal);
  const auto s6_imgs = render_vam_inputs(s6, first, last, obs, fut, pal);
  const auto s2_imgs = render_vam_inputs(s2, first, last, obs, fut, pal);
  c.expect(base_imgs.size() == 2 && base_imgs[1] == render_overlay(last, fut, pal, kPastLen) &&
               base_imgs[0] == render_overlay(first, obs, pal),
           "base overlays");
  c.expect(s6_imgs.size() == 2 && s6_imgs[1] == render_overlay(last, obs, pal), "scenario 6 observed boxes only");
  c.expect(s2_imgs.size() == 1 && s2_imgs[0] == render_overlay(render_overlay(last, obs, pal), fut, pal, kPastLen),
           "scenario 2 combined overlay");
  return c.outcome("decoder zeros, 60x5 output, type ids, scenario 1-6 pathway changes checked");
}

// 6 ----------------------------------------------------------------------------

Dataset synthetic(int n_tracks, std::uint64_t seed, const TrainConfig& cfg) {
  SyntheticConfig sc;
  sc.n_tracks = n_tracks;
  const auto tracks = generate_synthetic_tracks(sc, seed);
  return make_dataset(tracks, std::make_shared<SyntheticFrameSource>(tracks, sc, seed), cfg.dataset_options());
}

Outcome learnability() {
  Checks c;
  const auto t0 = Clock::now();
  TrainConfig cfg = TrainConfig::desk();
  cfg.seed = 7;
  cfg.deterministic = true;
  const Dataset data = synthetic(500, 7, cfg);
  const fs::path dir = work_dir() / "learnability";
  fs::remove_all(dir);
  const auto base = train_all(cfg, data, (dir / "base").string());
  const double base_secs = seconds_since(t0);
  const auto traj = evaluate_trajectory(load_model((dir / "base" / kManifestFile).string()).net->trajpred(),
                                        data.split_windows(Split::Test), data.stats);
  const auto s5 = run_ablation(5, cfg, data, (dir / "base" / kManifestFile).string(), (dir / "scenario_5").string());
  const double secs = seconds_since(t0);

  c.expect(base.test.accuracy >= 0.90, "test accuracy >= 0.90");
  c.expect(traj.improvement() >= 2.0, "trajectory error at most half of persistence");
  c.expect(s5.test.accuracy < base.test.accuracy, "scenario 5 reduces accuracy");
  c.expect(secs < 1800.0, "runtime under 30 minutes");
  std::ostringstream os;
  os << "test accuracy " << fmt("%.4f", base.test.accuracy) << " on " << base.test.n_samples
     << " samples; trajectory MAE " << fmt("%.2f", traj.model_mae_px) << " px vs persistence "
     << fmt("%.2f", traj.persistence_mae_px) << " px (" << fmt("%.2fx", traj.improvement())
     << "); scenario 5 accuracy " << fmt("%.4f", s5.test.accuracy) << " (base " << fmt("%.4f", base.test.accuracy)
     << "), AUC " << fmt("%.4f", s5.test.auc.value_or(NAN)) << " (base " << fmt("%.4f", base.test.auc.value_or(NAN))
     << "); " << fmt("%.0f s", secs) << " (base pipeline " << fmt("%.0f s", base_secs)
     << ")";
  return c.outcome(os.str());
}

// 7 ----------------------------------------------------------------------------

Outcome metrics_oracle() {
  Checks c;
  Rng rng(77);
  int equal = 0;
  for (int set = 0; set < 50; ++set) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 200));
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = set % 2 ? rng.uniform() : static_cast<double>(rng.uniform_int(0, 10)) / 10.0;
      y[i] = static_cast<int>(rng.uniform_int(0, 1));
    }
    y[0] = 0;
    y[1] = 1;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (y[i] != 1 || y[j] != 0) continue;
        den += 1.0;
        num += p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0);
      }
    }
    const auto auc = compute_metrics(p, y).auc;
    equal += auc.has_value() && *auc == num / den;
  }
  c.expect(equal == 50, "AUC equals brute force");

  const auto m = metrics_from_counts({3, 1, 5, 1});
  c.expect(m.precision == 0.75 && m.recall == 0.75 && m.f1 == 0.75 && m.accuracy == 0.8, "TP3 FP1 FN1 TN5");
  const auto h = compute_metrics({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});
  c.expect(h.auc && *h.auc == 0.75, "hand example AUC 0.75");
  Rng r2(78);
  bool confusion = true;
  for (int set = 0; set < 50; ++set) {
    const auto n = static_cast<std::size_t>(r2.uniform_int(1, 200));
    std::vector<double> p(n);
    std::vector<int> y(n);
    ConfusionCounts k;
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = r2.uniform();
      y[i] = static_cast<int>(r2.uniform_int(0, 1));
      const bool pos = p[i] >= 0.5;
      (pos ? (y[i] ? k.tp : k.fp) : (y[i] ? k.fn : k.tn)) += 1;
    }
    const auto r = compute_metrics(p, y);
    const double prec = k.tp + k.fp ? static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fp) : 0.0;
    const double rec = k.tp + k.fn ? static_cast<double>(k.tp) / static_cast<double>(k.tp + k.fn) : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    confusion = confusion && r.counts.tp == k.tp && r.counts.fp == k.fp && r.counts.tn == k.tn && r.counts.fn == k.fn &&
                std::abs(r.precision - prec) < 1e-12 && std::abs(r.recall - rec) < 1e-12 &&
                std::abs(r.f1 - f1) < 1e-12 &&
                std::abs(r.accuracy - static_cast<double>(k.tp + k.tn) / static_cast<double>(n)) < 1e-12;
  }
  c.expect(confusion, "confusion arithmetic on 50 random sets");
  return c.outcome("AUC equal to brute force on " + std::to_string(equal) +
                   "/50 sets (n <= 200, with ties); P=R=F1=0.75, Acc=0.8 for TP3 FP1 FN1 TN5");
}

// 8 ----------------------------------------------------------------------------

Outcome latency_ordering() {
  Checks c;
  TrainConfig cfg = TrainConfig::desk();
  const Dataset data = synthetic(24, 3, cfg);
  const auto staged = stage_samples(data, Split::Test, 8);
  std::vector<LatencyReport> reports;
  for (Variant v : {Variant::Small, Variant::Full}) {
    TrajFusionNet net(ModelConfig::make(v), 1);
    net.train(false);
    net.set_requires_grad(false);
    reports.push_back(benchmark_latency(net, staged, data.stats, default_palette(), 5, 100, data.frames.get()));
  }
  const auto& s = reports[0];
  const auto& f = reports[1];
  c.expect(s.model_ms.median < f.model_ms.median, "median M(small) < M(full)");
  bool superset = true;
  for (const auto& r : reports) {
    for (std::size_t i = 0; i < r.model_runs.size(); ++i) superset = superset && r.total_runs[i] >= r.model_runs[i];
  }
  c.expect(superset, "M+D >= M on every run");
  std::ofstream(work_dir() / "latency.csv") << latency_csv(reports);
  return c.outcome("median M small " + fmt("%.2f", s.model_ms.median) + " ms < full " + fmt("%.2f", f.model_ms.median) +
                   " ms (100 runs, 224 px, 1 thread); M+D - M: small " + fmt("%.3f", s.preprocessing_ms()) +
                   " ms, full " + fmt("%.3f", f.preprocessing_ms()) + " ms");
}

// 9 ----------------------------------------------------------------------------

Outcome reproducibility() {
  Checks c;
  TrainConfig cfg = TrainConfig::desk();
  cfg.seed = 21;
  cfg.deterministic = true;
  const Dataset data = synthetic(100, 21, cfg);
  const fs::path dir = work_dir() / "reproducibility";
  fs::remove_all(dir);
  const auto a = train_all(cfg, data, (dir / "a").string());
  const auto b = train_all(cfg, data, (dir / "b").string());
  c.expect(a.test.to_json() == b.test.to_json(), "identical test metrics");
  bool same_records = a.records.size() == b.records.size();
  for (std::size_t i = 0; same_records && i < a.records.size(); ++i) {
    same_records = a.records[i].checkpoint_hash == b.records[i].checkpoint_hash;
  }
  c.expect(same_records, "identical stage checkpoints");
  c.expect(a.manifest.at("checkpoint_digest") == b.manifest.at("checkpoint_digest"), "identical model file");
  return c.outcome("two deterministic runs (seed 21, 100 tracks): accuracy " + fmt("%.4f", a.test.accuracy) + " vs " +
                   fmt("%.4f", b.test.accuracy) + ", model digest " +
                   a.manifest.at("checkpoint_digest").get<std::string>());
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"parameter counts", parameter_counts},      {"gradient suite", gradient_suite},
      {"loss oracles", loss_oracles},              {"overlay contract", overlay_contract},
      {"structural contracts", structural_contracts}, {"synthetic learnability", learnability},
      {"metrics oracle", metrics_oracle},          {"latency ordering", latency_ordering},
      {"reproducibility", reproducibility}};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("[%s] %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
