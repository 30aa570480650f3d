#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tfn/gradcheck.hpp"
#include "tfn/model.hpp"

using namespace tfn;

namespace {

Tensor randn(Shape s, Rng& rng, DType dt = DType::F32) {
  Tensor t = Tensor::empty(std::move(s), dt);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal());
  return t;
}

TrajPredictorConfig tiny_traj() { return {1, 1, 2, 16, 32, kFeatures}; }
SamConfig tiny_sam() { return {1, 2, 16, 32, kFeatures, true, true}; }
VanConfig tiny_van() { return {{4, 8, 8, 8}, {1, 1, 1, 1}, {2, 2, 2, 2}, 3, 10, 1e-2}; }

Sample make_sample(double x0, double vx) {
  Sample s;
  s.ped_id = "v/p";
  s.video = "v";
  s.frame_t = 40;
  s.frame_first = 25;
  for (int k = 0; k < kPastLen; ++k) {
    const double x = x0 + vx * k;
    s.observed[static_cast<std::size_t>(k)] = {x, 30.0, x + 8.0, 54.0, 20.0 + 0.1 * k};
  }
  return s;
}

NormStats unit_stats() { return {{2, 0, 2, 0, 25}, {5, 1, 5, 1, 10}}; }

SceneImage noise_image(int h, int w, Rng& rng) {
  SceneImage img(h, w);
  for (auto& v : img.bgr) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

bool differs(const Tensor& a, const Tensor& b, double eps = 1e-7) {
  const auto x = a.to_vector();
  const auto y = b.to_vector();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i] - y[i]) > eps) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("trajpred: embedding") {
  Rng rng(1);
  TrajPredictor tp(TrajPredictorConfig::full(), rng);
  const Tensor zero = Tensor::zeros({1, kSeqLen, kFeatures});
  const auto e = tp.embed_decoder(zero);
  CHECK(e.shape() == Shape{1, 75, 128});
  CHECK(reshape(e, {75, 128}).to_vector() == sinusoidal_positions(75, 128).to_vector());

  Tensor same = Tensor::zeros({1, 2, kFeatures});
  for (int i = 0; i < 2 * kFeatures; ++i) same.set(i, 0.3 * (i % kFeatures));
  const auto es = tp.embed_encoder(same).to_vector();
  CHECK(std::vector<double>(es.begin(), es.begin() + 128) != std::vector<double>(es.begin() + 128, es.end()));
}

TEST_CASE("trajpred: decoder input") {
  Rng rng(2);
  const Tensor past = randn({kPastLen, kFeatures}, rng);
  const auto dec = TrajPredictor::build_decoder_input(past);
  REQUIRE(dec.shape() == Shape{75, 5});
  const auto v = dec.to_vector();
  for (int r = 15; r < 75; ++r) {
    for (int c = 0; c < 5; ++c) CHECK(v[static_cast<std::size_t>(r * 5 + c)] == 0.0);
  }
  for (int c = 0; c < 5; ++c) CHECK(dec.at(14 * 5 + c) == past.at(14 * 5 + c));
  for (double x : TrajPredictor::build_decoder_input(Tensor::zeros({15, 5})).to_vector()) CHECK(x == 0.0);
  CHECK_THROWS_AS(TrajPredictor::build_decoder_input(Tensor::zeros({14, 5})), DimensionError);
}

TEST_CASE("trajpred: one-shot prediction") {
  Rng rng(3);
  TrajPredictor tp(TrajPredictorConfig::small(), rng);
  const Tensor past = randn({2, kPastLen, kFeatures}, rng);
  const auto before_enc = tp.encoder_passes();
  const auto out = tp.forward(past);
  CHECK(out.shape() == Shape{2, 60, 5});
  CHECK(tp.encoder_passes() - before_enc == 1);
  CHECK(tp.decoder_passes() == 1);
  CHECK(out.to_vector() == tp.forward(past).to_vector());
  for (double v : out.to_vector()) CHECK(std::isfinite(v));
  CHECK(tp.forward(randn({kPastLen, kFeatures}, rng)).shape() == Shape{60, 5});

  Tensor bad = past.clone();
  bad.set(3, std::nan(""));
  CHECK_THROWS_AS(tp.forward(bad), std::invalid_argument);
}

TEST_CASE("traj_mse_loss") {
  Rng rng(4);
  const Tensor a = randn({2, 60, 5}, rng, DType::F64);
  CHECK(traj_mse_loss(a, a).item() == 0.0);
  CHECK(traj_mse_loss(Tensor::from({2}, {1, 1, 1}, DType::F64), Tensor::zeros({1, 1, 1}, DType::F64)).item() == 4.0);
  CHECK(traj_mse_loss(Tensor::full({1, 60, 5}, 0.5, DType::F64), Tensor::zeros({1, 60, 5}, DType::F64)).item() ==
        0.25);
  CHECK_THROWS_AS(traj_mse_loss(a, Tensor::zeros({2, 60, 4}, DType::F64)), DimensionError);
  // batch permutation
  const Tensor b = randn({2, 60, 5}, rng, DType::F64);
  const Tensor swapped_a = concat({slice(a, 0, 1, 1), slice(a, 0, 0, 1)}, 0);
  const Tensor swapped_b = concat({slice(b, 0, 1, 1), slice(b, 0, 0, 1)}, 0);
  CHECK(traj_mse_loss(a, b).item() == doctest::Approx(traj_mse_loss(swapped_a, swapped_b).item()).epsilon(1e-14));
  CHECK(traj_mse_loss(a, b).item() > 0.0);
}

TEST_CASE("sam: type ids") {
  Rng rng(5);
  const Tensor past = randn({kPastLen, kFeatures}, rng);
  const Tensor pred = randn({kPredLen, kFeatures}, rng);
  const auto psi = append_type_ids(past, pred);
  REQUIRE(psi.shape() == Shape{75, 6});
  for (int r = 0; r < 75; ++r) CHECK(psi.at(r * 6 + 5) == (r < 15 ? 0.0 : 1.0));
  for (int c = 0; c < 5; ++c) CHECK(psi.at(15 * 6 + c) == pred.at(c));
  const auto z = append_type_ids(Tensor::zeros({15, 5}), Tensor::zeros({60, 5}));
  for (int r = 0; r < 75; ++r) {
    for (int c = 0; c < 5; ++c) CHECK(z.at(r * 6 + c) == 0.0);
  }
  CHECK_THROWS_AS(append_type_ids(Tensor::zeros({15, 5}), Tensor::zeros({59, 5})), DimensionError);
}

TEST_CASE("sam: forward variants") {
  for (auto cfg : {SamConfig::full(), SamConfig::small()}) {
    Rng rng(6);
    SamEncoder sam(cfg, rng);
    const Tensor past = randn({1, kPastLen, kFeatures}, rng);
    const Tensor pred = randn({1, kPredLen, kFeatures}, rng);
    const auto e = sam.forward(past, pred);
    CHECK(e.shape() == Shape{1, 40});
    CHECK(e.to_vector() == sam.forward(past, pred).to_vector());
  }
  SamConfig no_pred = SamConfig::small();
  no_pred.use_prediction = false;
  Rng r1(7), r2(7);
  SamEncoder a(SamConfig::small(), r1);
  SamEncoder b(no_pred, r2);
  Rng rng(8);
  const Tensor past = randn({1, kPastLen, kFeatures}, rng);
  const Tensor pred = randn({1, kPredLen, kFeatures}, rng);
  const auto eb = b.forward(past, Tensor());
  CHECK(eb.shape() == Shape{1, 40});
  CHECK(eb.to_vector() == b.forward(past, Tensor()).to_vector());
  CHECK(differs(a.forward(past, pred), eb));
  CHECK(no_pred.input_width() == 5);
  CHECK(no_pred.sequence_length() == 15);

  SamConfig no_ids = SamConfig::small();
  no_ids.type_ids = false;
  CHECK(no_ids.input_width() == 5);
  CHECK(no_ids.sequence_length() == 75);
}

TEST_CASE("sam: swapping past rows changes the pooled embedding") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    SamEncoder sam(SamConfig::small(), rng);
    Tensor past = randn({1, kPastLen, kFeatures}, rng);
    const Tensor pred = randn({1, kPredLen, kFeatures}, rng);
    const auto before = sam.pooled(past, pred);
    Tensor swapped = past.clone();
    for (int c = 0; c < kFeatures; ++c) {
      swapped.set(2 * kFeatures + c, past.at(7 * kFeatures + c));
      swapped.set(7 * kFeatures + c, past.at(2 * kFeatures + c));
    }
    CHECK(differs(before, sam.pooled(swapped, pred)));
  }
}

TEST_CASE("lka examples") {
  Rng rng(9);
  LargeKernelAttention lka(3, rng);
  const Tensor zero = Tensor::zeros({1, 3, 8, 8});
  for (double v : lka.forward(zero).to_vector()) CHECK(v == 0.0);

  const Tensor x = randn({1, 3, 8, 8}, rng);
  lka.make_identity_gate();
  CHECK(lka.forward(x).to_vector() == x.to_vector());

  // single channel ramp, delta local kernel, dilated kernel with a second tap
  LargeKernelAttention one(1, rng);
  one.make_identity_gate();
  one.dilated().weight.set(4 * 7 + 3, 0.5);  // row offset +3, column offset 0
  one.pointwise().weight.set(0, 2.0);
  one.pointwise().bias.set(0, 1.0);
  std::vector<double> ramp(64);
  for (int i = 0; i < 64; ++i) ramp[static_cast<std::size_t>(i)] = i;  // x[r][c] = 8r + c
  const auto out = one.forward(Tensor::from(ramp, {1, 1, 8, 8}));
  // (2,5): gate = 2 * (21 + 0.5 * 45) + 1 = 88
  CHECK(out.at(2 * 8 + 5) == 21.0 * 88.0);
  // (6,5): tap row 9 is padding, gate = 2 * 53 + 1 = 107
  CHECK(out.at(6 * 8 + 5) == 53.0 * 107.0);
}

TEST_CASE("lka is a multiplicative gate") {
  Rng rng(10);
  LargeKernelAttention lka(4, rng);
  const Tensor x = randn({1, 4, 9, 9}, rng, DType::F64);
  lka.to(DType::F64);
  const auto out = lka.forward(x).to_vector();
  const auto gate = lka.attention_map(x).to_vector();
  const auto xv = x.to_vector();
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] != 0.0) CHECK(out[i] / xv[i] == doctest::Approx(gate[i]).epsilon(1e-12));
  }
}

TEST_CASE("van: parameter counts and input checks") {
  Rng rng(11);
  const auto b2 = Van(VanConfig::b2(), rng).parameter_count();
  const auto b0 = Van(VanConfig::b0(), rng).parameter_count();
  CHECK(std::abs(b2 / 26.6e6 - 1.0) <= 0.02);
  CHECK(std::abs(b0 / 4.1e6 - 1.0) <= 0.05);
  CHECK_THROWS_AS(VanConfig::b0().validate_input(100), std::invalid_argument);
  CHECK_NOTHROW(VanConfig::b0().validate_input(224));

  Van van(VanConfig::b0(), rng);
  van.train(false);
  const Tensor gray = Tensor::full({1, 3, 32, 32}, 0.1);
  const auto f = van.forward(gray);
  CHECK(f.shape() == Shape{1, 1000});
  CHECK(f.to_vector() == van.forward(gray).to_vector());
  CHECK_THROWS(van.forward(Tensor::full({1, 3, 40, 40}, 0.1)));
}

TEST_CASE("vam: two instances, projection and symmetry") {
  ModelConfig cfg = ModelConfig::make(Variant::Full, {}, 32);
  cfg.van = tiny_van();
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Vam vam(cfg.van, 2, rng);
    vam.train(false);
    const Tensor a = randn({1, 3, 32, 32}, rng);
    const Tensor b = randn({1, 3, 32, 32}, rng);
    const auto ab = vam.forward({a, b});
    CHECK(ab.shape() == Shape{1, 40});
    CHECK(differs(ab, vam.forward({b, a})));
  }
  Rng rng(12);
  Vam tied(cfg.van, 2, rng);
  tied.train(false);
  const auto p0 = tied.van(0).named_parameters();
  const auto p1 = tied.van(1).named_parameters();
  for (std::size_t i = 0; i < p0.size(); ++i) {
    Tensor dst = p1[i].tensor;
    for (std::int64_t k = 0; k < dst.numel(); ++k) dst.set(k, p0[i].tensor.at(k));
  }
  const Tensor img = randn({1, 3, 32, 32}, rng);
  CHECK(tied.van(0).forward(img).to_vector() == tied.van(1).forward(img).to_vector());
}

TEST_CASE("vam inputs: single VAN overlay and the no-prediction toggle") {
  Rng rng(13);
  const auto& pal = default_palette();
  const SceneImage first = noise_image(48, 64, rng);
  const SceneImage last = noise_image(48, 64, rng);
  std::vector<Box> obs(15, Box{2, 2, 10, 10});
  std::vector<Box> pred(60, Box{30, 20, 40, 30});

  auto single = ModelConfig::make(Variant::Small, {}, 32);
  const auto imgs = render_vam_inputs(single, first, last, obs, pred, pal);
  REQUIRE(imgs.size() == 1);
  for (int y = 0; y < 48; ++y) {
    for (int x = 0; x < 64; ++x) CHECK(imgs[0].at(y, x, 2) == last.at(y, x, 2));
  }
  CHECK(imgs[0].at(5, 5, 0) == pal.rgb[14][2]);
  CHECK(imgs[0].at(25, 35, 0) == pal.rgb[74][2]);
  CHECK(imgs[0].at(25, 35, 1) == pal.rgb[74][1]);

  auto two = ModelConfig::make(Variant::Full, {}, 32);
  const auto pair = render_vam_inputs(two, first, last, obs, pred, pal);
  REQUIRE(pair.size() == 2);
  CHECK(pair[0].at(5, 5, 1) == pal.rgb[14][1]);
  CHECK(pair[0].at(25, 35, 0) == first.at(25, 35, 0));
  CHECK(pair[1].at(25, 35, 0) == pal.rgb[74][2]);

  auto no_pred = ModelConfig::make(Variant::Full, scenario_toggles(6), 32);
  const auto np = render_vam_inputs(no_pred, first, last, obs, pred, pal);
  CHECK(np[1].at(25, 35, 0) == last.at(25, 35, 0));
  CHECK(np[1] == render_overlay(last, obs, pal));
}

TEST_CASE("fusion head") {
  Rng rng(14);
  FusionHead head(false, rng);
  const Tensor zero = Tensor::zeros({1, 40});
  const auto z = head.forward(zero, zero);
  CHECK(z.shape() == Shape{1, 2});
  const auto params = head.named_parameters();
  // bias path: fc3(gelu(fc2(gelu(b1))))
  Tensor h = gelu(reshape(params[1].tensor, {1, 80}));
  h = gelu(linear(h, params[2].tensor, params[3].tensor));
  h = linear(h, params[4].tensor, params[5].tensor);
  CHECK(h.to_vector() == z.to_vector());
  CHECK_THROWS_AS(head.forward(Tensor::zeros({1, 39}), zero), DimensionError);

  FusionHead attn(true, rng);
  CHECK(attn.forward(zero, zero).shape() == Shape{1, 2});
  const Tensor e = randn({1, 40}, rng);
  const auto chi = FusionHead::stack_modalities(e, e);
  CHECK(chi.shape() == Shape{1, 2, 40});
  const auto ctx = FusionHead::modality_context(chi).to_vector();
  const auto cv = chi.to_vector();
  for (std::size_t i = 0; i < cv.size(); ++i) CHECK(ctx[i] == doctest::Approx(cv[i]).epsilon(1e-6));
}

TEST_CASE("fusion: no dead branch, gradients reach both embeddings") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    for (bool attn : {false, true}) {
      FusionHead head(attn, rng);
      const Tensor s = randn({1, 40}, rng);
      const Tensor v = randn({1, 40}, rng);
      const auto base = head.forward(s, v);
      Tensor s2 = s.clone();
      s2.set(3, s.at(3) + 0.5);
      Tensor v2 = v.clone();
      v2.set(5, v.at(5) + 0.5);
      CHECK(differs(base, head.forward(s2, v)));
      CHECK(differs(base, head.forward(s, v2)));
    }
  }
  Rng rng(15);
  FusionHead head(false, rng);
  head.to(DType::F64);
  Tensor s = randn({1, 40}, rng, DType::F64).requires_grad_();
  Tensor v = randn({1, 40}, rng, DType::F64).requires_grad_();
  const auto rep = grad_check([&] { return sum(square(head.forward(s, v))); }, {{"sam", s}, {"vam", v}},
                              head.parameters(), {.tol = 1e-6});
  CHECK(rep.passed);
  for (const auto& pc : rep.params) CHECK(pc.max_abs_analytic > 0.0);
}

TEST_CASE("ablation configs change only the stated pathway") {
  const auto base = ModelConfig::make(Variant::Small, {}, 32);
  CHECK(base.sam.input_width() == 6);
  CHECK(ModelConfig::make(Variant::Small, scenario_toggles(3), 32).sam.input_width() == 5);
  const auto s4 = ModelConfig::make(Variant::Small, scenario_toggles(4), 32);
  CHECK(s4.m() == 4);
  CHECK(s4.trajpred.m == 4);
  CHECK(s4.sam.input_width() == 5);
  CHECK(ModelConfig::make(Variant::Full, scenario_toggles(2), 32).van_count() == 1);
  CHECK(ModelConfig::make(Variant::Full, {}, 32).van_count() == 2);
  CHECK(ModelConfig::make(Variant::Small, scenario_toggles(5), 32).sam.sequence_length() == 15);
  CHECK_THROWS_AS(scenario_toggles(7), std::invalid_argument);

  TrajFusionNet a(ModelConfig::make(Variant::Small, {}, 32), 3);
  TrajFusionNet b(ModelConfig::make(Variant::Small, scenario_toggles(3), 32), 3);
  const auto pa = a.named_parameters();
  const auto pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  int shape_diffs = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    if (pa[i].tensor.shape() != pb[i].tensor.shape()) {
      ++shape_diffs;
      CHECK(pa[i].name == "sam.embed.weight");
    }
  }
  CHECK(shape_diffs == 1);

  const auto j = ModelConfig::make(Variant::Full, scenario_toggles(4), 224).to_json();
  const auto back = ModelConfig::from_json(j);
  CHECK(back.to_json() == j);
}

TEST_CASE("parameter counts of the assembled model") {
  const auto full = count_parameters(ModelConfig::make(Variant::Full));
  const auto small = count_parameters(ModelConfig::make(Variant::Small));
  CHECK(std::abs(full / 58.26e6 - 1.0) <= 0.02);
  CHECK(std::abs(small / 5.20e6 - 1.0) <= 0.05);
}

TEST_CASE("predict_crossing: deterministic, normalized, shares one prediction") {
  auto cfg = ModelConfig::make(Variant::Small, {}, 32);
  cfg.trajpred = tiny_traj();
  cfg.sam = tiny_sam();
  cfg.van = tiny_van();
  TrajFusionNet net(cfg, 4);
  net.train(false);
  Rng rng(16);
  const SceneImage first = noise_image(48, 64, rng);
  const SceneImage last = noise_image(48, 64, rng);
  const auto s = make_sample(10, 0.7);
  const auto before = net.trajpred().encoder_passes();
  PipelineTrace trace;
  const auto p = predict_crossing(net, s, first, last, unit_stats(), default_palette(), &trace);
  CHECK(net.trajpred().encoder_passes() - before == 1);
  const auto q = predict_crossing(net, s, first, last, unit_stats(), default_palette());
  CHECK(p.logits == q.logits);
  CHECK(p.probability >= 0.0);
  CHECK(p.probability <= 1.0);
  const double e0 = std::exp(p.logits[0]), e1 = std::exp(p.logits[1]);
  CHECK(p.probability + e0 / (e0 + e1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(p.label == (p.probability >= 0.5 ? 1 : 0));
  CHECK(trace.total_ms >= trace.model_ms);

  net.train(true);
  CHECK_THROWS_AS(predict_crossing(net, s, first, last, unit_stats(), default_palette()), std::logic_error);
}

TEST_CASE("predict_crossing: VAM input ignores the predictor when prediction is off") {
  auto cfg = ModelConfig::make(Variant::Small, scenario_toggles(6), 32);
  cfg.trajpred = tiny_traj();
  cfg.sam = tiny_sam();
  cfg.van = tiny_van();
  TrajFusionNet net(cfg, 5);
  net.train(false);
  Rng rng(17);
  const SceneImage first = noise_image(48, 64, rng);
  const SceneImage last = noise_image(48, 64, rng);
  const auto s = make_sample(10, 0.7);
  PipelineTrace t1;
  t1.keep_images = true;
  (void)predict_crossing(net, s, first, last, unit_stats(), default_palette(), &t1);
  for (auto& p : net.trajpred().named_parameters()) {
    for (std::int64_t i = 0; i < p.tensor.numel(); ++i) p.tensor.set(i, p.tensor.at(i) + 0.3);
  }
  PipelineTrace t2;
  t2.keep_images = true;
  (void)predict_crossing(net, s, first, last, unit_stats(), default_palette(), &t2);
  REQUIRE(t1.vam_inputs.size() == 1);
  CHECK(t1.vam_inputs[0] == t2.vam_inputs[0]);
}
