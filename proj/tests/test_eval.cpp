#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tfn/ablation.hpp"
#include "tfn/eval.hpp"

using namespace tfn;

namespace {

double brute_auc(const std::vector<double>& p, const std::vector<int>& y) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      den += 1.0;
      num += p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

}  // namespace

TEST_CASE("auc: small hand example") {
  const auto auc = pairwise_auc({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0});
  REQUIRE(auc.has_value());
  CHECK(*auc == 0.75);
  CHECK(*auc == brute_auc({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0}));
}

TEST_CASE("auc: equals brute force with ties on random sets") {
  Rng rng(17);
  for (int set = 0; set < 50; ++set) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 200));
    std::vector<double> p(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<double>(rng.uniform_int(0, 20)) / 20.0;  // coarse grid forces ties
      y[i] = static_cast<int>(rng.uniform_int(0, 1));
    }
    y[0] = 0;
    y[1] = 1;
    const auto auc = pairwise_auc(p, y);
    REQUIRE(auc.has_value());
    CHECK(*auc == brute_auc(p, y));
  }
}

TEST_CASE("auc: single class is undefined") {
  CHECK_FALSE(pairwise_auc({0.2, 0.7}, {1, 1}).has_value());
  const auto m = compute_metrics({0.2, 0.7}, {0, 0});
  CHECK_FALSE(m.auc_defined());
  CHECK(m.accuracy == 0.5);
}

TEST_CASE("metrics: confusion arithmetic") {
  const auto m = metrics_from_counts({3, 1, 5, 1});
  CHECK(m.precision == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.recall == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.f1 == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.accuracy == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.n_samples == 10);

  // Same counts through thresholding; 0.5 counts as positive.
  const std::vector<double> p{0.9, 0.5, 0.7, 0.6, 0.1, 0.2, 0.3, 0.4, 0.0, 0.49};
  const std::vector<int> y{1, 1, 1, 0, 1, 0, 0, 0, 0, 0};
  const auto r = compute_metrics(p, y);
  CHECK(r.counts.tp == 3);
  CHECK(r.counts.fp == 1);
  CHECK(r.counts.fn == 1);
  CHECK(r.counts.tn == 5);
  CHECK(r.accuracy == doctest::Approx(0.8));

  const auto empty = metrics_from_counts({0, 0, 4, 0});
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);
}

TEST_CASE("metrics: input validation") {
  CHECK_THROWS(compute_metrics({0.5}, {1, 0}));
  CHECK_THROWS(compute_metrics({1.5}, {1}));
  CHECK_THROWS(compute_metrics({0.5}, {2}));
  CHECK_THROWS(compute_metrics({}, {}));
}

TEST_CASE("latency: summary statistics") {
  const auto s = summarize({4.0, 1.0, 3.0, 2.0});
  CHECK(s.mean == 2.5);
  CHECK(s.median == 2.5);
  CHECK(s.min == 1.0);
  CHECK(s.max == 4.0);
  CHECK(s.std == doctest::Approx(std::sqrt(1.25)));
  CHECK(summarize({5.0, 1.0, 3.0}).median == 3.0);
}

TEST_CASE("latency: benchmark contract") {
  SyntheticConfig sc;
  sc.n_tracks = 12;
  const auto tracks = generate_synthetic_tracks(sc, 2);
  auto frames = std::make_shared<SyntheticFrameSource>(tracks, sc, 2);
  const Dataset data = make_dataset(tracks, frames);
  TrajFusionNet net(ModelConfig::make(Variant::Small, {}, 32), 1);
  net.train(false);
  const auto staged = stage_samples(data, Split::Train, 2);
  REQUIRE(staged.size() == 2);

  CHECK_THROWS_AS(benchmark_latency(net, staged, data.stats, default_palette(), 0, 9), std::invalid_argument);
  CHECK_THROWS_AS(benchmark_latency(net, {}, data.stats, default_palette(), 0, 10), std::invalid_argument);

  const auto loads = frames->load_count();
  const auto r = benchmark_latency(net, staged, data.stats, default_palette(), 1, 10, frames.get());
  CHECK(frames->load_count() == loads);
  CHECK(r.model_runs.size() == 10);
  CHECK(r.total_runs.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) CHECK(r.total_runs[i] >= r.model_runs[i]);
  CHECK(r.model_ms.median > 0.0);
  CHECK(r.preprocessing_ms() >= 0.0);
  CHECK(r.variant == "small");

  const std::string csv = latency_csv({r});
  CHECK(csv.rfind("model,params_m,m_ms", 0) == 0);
  CHECK(csv.find("TrajFusionNet-small") != std::string::npos);
  CHECK(latency_footer().find("32.98") != std::string::npos);
  CHECK(latency_footer().find("157.30") != std::string::npos);
}

TEST_CASE("ablation: affected stages follow the toggles") {
  auto names = [](int sc) {
    std::vector<std::string> out;
    for (Stage s : affected_stages(scenario_toggles(sc))) out.emplace_back(stage_name(s));
    return out;
  };
  using V = std::vector<std::string>;
  CHECK(names(1) == V{"fusion"});
  CHECK(names(2) == V{"van_first", "van_second", "fusion"});
  CHECK(names(3) == V{"sam_encoder", "fusion"});
  CHECK(names(4) == V{"trajpred", "sam_encoder", "van_first", "van_second", "fusion"});
  CHECK(names(5) == V{"sam_encoder", "fusion"});
  CHECK(names(6) == V{"van_first", "van_second", "fusion"});
  CHECK_THROWS(scenario_toggles(7));
}

TEST_CASE("ablation: csv lists the base row first") {
  MetricsReport base = metrics_from_counts({3, 1, 5, 1});
  AblationResult r;
  r.scenario = 5;
  r.description = "x";
  r.test = metrics_from_counts({2, 2, 4, 2});
  const std::string csv = ablation_csv(base, {r});
  CHECK(csv.find("scenario,description,accuracy") == 0);
  CHECK(csv.find("\n0,\"base model\",0.8") != std::string::npos);
  CHECK(csv.find("\n5,\"x\",0.6") != std::string::npos);
}
