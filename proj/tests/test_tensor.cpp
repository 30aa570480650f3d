#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "tfn/checkpoint.hpp"
#include "tfn/gradcheck.hpp"
#include "tfn/nn.hpp"
#include "tfn/ops.hpp"
#include "tfn/optim.hpp"
#include "tfn/random.hpp"

using namespace tfn;

namespace {

Tensor randn(Shape s, Rng& rng, DType dt = DType::F32) {
  Tensor t = Tensor::empty(std::move(s), dt);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal());
  return t;
}

}  // namespace

TEST_CASE("linear: identity and hand-multiplied cases") {
  Tensor x = Tensor::from({1, 0}, {1, 2});
  Tensor eye = Tensor::from({1, 0, 0, 1}, {2, 2});
  Tensor zero = Tensor::zeros({2});
  auto y = linear(x, eye, zero).to_vector();
  CHECK(y == std::vector<double>{1, 0});

  Tensor x2 = Tensor::from({1, 2}, {1, 2});
  Tensor w2 = Tensor::from({1, 1, 1, -1}, {2, 2});
  Tensor b2 = Tensor::from({0, 1}, {2});
  auto y2 = linear(x2, w2, b2).to_vector();
  CHECK(y2 == std::vector<double>{3, 0});
}

TEST_CASE("linear: shape mismatch names both shapes") {
  Tensor x = Tensor::zeros({3, 4});
  Tensor w = Tensor::zeros({5, 2});
  try {
    (void)linear(x, w);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3,4]") != std::string::npos);
    CHECK(msg.find("[5,2]") != std::string::npos);
  }
}

TEST_CASE("linear: grad check on random 3x4 input in 64-bit") {
  Rng rng(11);
  Tensor x = randn({3, 4}, rng, DType::F64).requires_grad_();
  Tensor w = randn({4, 2}, rng, DType::F64).requires_grad_();
  Tensor b = randn({2}, rng, DType::F64).requires_grad_();
  auto rep = grad_check([&] { return sum(square(linear(x, w, b))); }, {{"x", x}, {"w", w}, {"b", b}}, {},
                        {.tol = 1e-5});
  CHECK(rep.passed);
}

TEST_CASE("attention: single key returns V exactly") {
  Rng rng(3);
  Tensor q = randn({2, 1, 4}, rng);
  Tensor k = randn({2, 1, 4}, rng);
  Tensor v = randn({2, 1, 4}, rng);
  auto out = scaled_dot_product_attention(q, k, v);
  CHECK(out.to_vector() == v.to_vector());
}

TEST_CASE("attention: identical keys average the values") {
  Rng rng(4);
  Tensor q = randn({1, 3, 2}, rng, DType::F64);
  Tensor k = Tensor::full({1, 3, 2}, 0.7, DType::F64);
  Tensor v = randn({1, 3, 2}, rng, DType::F64);
  auto out = scaled_dot_product_attention(q, k, v).to_vector();
  auto vv = v.to_vector();
  for (int qi = 0; qi < 3; ++qi) {
    for (int c = 0; c < 2; ++c) {
      const double expect = (vv[0 * 2 + c] + vv[1 * 2 + c] + vv[2 * 2 + c]) / 3.0;
      CHECK(out[qi * 2 + c] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention: two tokens with a sharp match follow the closed-form softmax") {
  const double s = 4.0;
  Tensor q = Tensor::from({s, 0, 0, s}, {1, 2, 2}, DType::F64);
  Tensor v = Tensor::from({1, 2, 3, 4}, {1, 2, 2}, DType::F64);
  auto out = scaled_dot_product_attention(q, q, v).to_vector();
  // scores: diagonal s^2/sqrt(2), off-diagonal 0
  const double w = 1.0 / (1.0 + std::exp(-s * s / std::sqrt(2.0)));
  CHECK(out[0] == doctest::Approx(w * 1 + (1 - w) * 3).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(w * 2 + (1 - w) * 4).epsilon(1e-12));
  CHECK(out[2] == doctest::Approx(w * 3 + (1 - w) * 1).epsilon(1e-12));
  CHECK(out[3] == doctest::Approx(w * 4 + (1 - w) * 2).epsilon(1e-12));
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("attention: empty operands are rejected") {
  Tensor q = Tensor::zeros({1, 0, 4});
  CHECK_THROWS_AS(scaled_dot_product_attention(q, q, q), EmptyTensorError);
  Tensor z = Tensor::zeros({1, 3, 0});
  CHECK_THROWS_AS(scaled_dot_product_attention(z, z, z), EmptyTensorError);
}

TEST_CASE("attention: masked keys get no weight") {
  Tensor q = Tensor::from({1, 0, 0, 1}, {2, 2}, DType::F64);
  Tensor v = Tensor::from({1, 2, 3, 4}, {2, 2}, DType::F64);
  Tensor keep = Tensor::from({1, 0, 1, 1}, {2, 2}, DType::F64);
  Tensor weights;
  auto out = scaled_dot_product_attention(q, q, v, keep, &weights).to_vector();
  CHECK(weights.at(1) == doctest::Approx(0.0));
  CHECK(out[0] == doctest::Approx(1.0));
  CHECK(out[1] == doctest::Approx(2.0));
}

TEST_CASE("attention property: weights sum to one and outputs stay in the hull of V") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::int64_t n = 2 + static_cast<std::int64_t>(seed % 5);
    Tensor q = randn({2, n, 3}, rng, DType::F64);
    Tensor k = randn({2, n, 3}, rng, DType::F64);
    Tensor v = randn({2, n, 3}, rng, DType::F64);
    Tensor w;
    auto out = scaled_dot_product_attention(q, k, v, {}, &w).to_vector();
    auto wv = w.to_vector();
    for (std::int64_t row = 0; row < 2 * n; ++row) {
      double total = 0.0;
      for (std::int64_t j = 0; j < n; ++j) total += wv[static_cast<std::size_t>(row * n + j)];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    auto vv = v.to_vector();
    for (std::int64_t h = 0; h < 2; ++h) {
      for (std::int64_t c = 0; c < 3; ++c) {
        double lo = 1e300, hi = -1e300;
        for (std::int64_t j = 0; j < n; ++j) {
          lo = std::min(lo, vv[static_cast<std::size_t>((h * n + j) * 3 + c)]);
          hi = std::max(hi, vv[static_cast<std::size_t>((h * n + j) * 3 + c)]);
        }
        for (std::int64_t i = 0; i < n; ++i) {
          const double o = out[static_cast<std::size_t>((h * n + i) * 3 + c)];
          CHECK(o >= lo - 1e-12);
          CHECK(o <= hi + 1e-12);
        }
      }
    }
  }
}

TEST_CASE("layer_norm examples") {
  Tensor g = Tensor::ones({3});
  Tensor b = Tensor::zeros({3});
  auto c = layer_norm(Tensor::full({1, 3}, 2.5), g, b).to_vector();
  for (double v : c) CHECK(v == 0.0);

  Tensor g2 = Tensor::ones({2}, DType::F64);
  Tensor b2 = Tensor::zeros({2}, DType::F64);
  auto y = layer_norm(Tensor::from({1, -1}, {1, 2}, DType::F64), g2, b2, 1e-5).to_vector();
  CHECK(y[0] == doctest::Approx(1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(-1.0 / std::sqrt(1.0 + 1e-5)).epsilon(1e-12));

  Rng rng(5);
  Tensor x = randn({4, 6}, rng, DType::F64);
  auto shifted = layer_norm(x, Tensor::ones({6}, DType::F64), Tensor::full({6}, 5.0, DType::F64)).to_vector();
  for (int r = 0; r < 4; ++r) {
    double m = 0;
    for (int j = 0; j < 6; ++j) m += shifted[static_cast<std::size_t>(r * 6 + j)];
    CHECK(m / 6 == doctest::Approx(5.0).epsilon(1e-12));
  }
}

TEST_CASE("conv2d: identity 1x1 and delta depthwise kernels") {
  Rng rng(8);
  Tensor x = randn({3, 5, 5}, rng);
  Tensor eye = Tensor::zeros({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) eye.set(c * 3 + c, 1.0);
  CHECK(conv2d(x, eye, {}, {}).to_vector() == x.to_vector());

  Tensor delta = Tensor::zeros({3, 1, 3, 3});
  for (int c = 0; c < 3; ++c) delta.set(c * 9 + 4, 1.0);
  auto y = conv2d(x, delta, {}, {.padding = 1, .groups = 3});
  CHECK(y.shape() == Shape{3, 5, 5});
  CHECK(y.to_vector() == x.to_vector());
}

TEST_CASE("conv2d: dilated depthwise pixel matches hand summation") {
  std::vector<double> ramp(25);
  for (int i = 0; i < 25; ++i) ramp[static_cast<std::size_t>(i)] = i;  // x[r][c] = 5r + c
  Tensor x = Tensor::from(ramp, {1, 5, 5}, DType::F64);
  std::vector<double> k(9);
  for (int i = 0; i < 9; ++i) k[static_cast<std::size_t>(i)] = i + 1;
  Tensor w = Tensor::from(k, {1, 1, 3, 3}, DType::F64);
  auto y = conv2d(x, w, {}, {.padding = 2, .dilation = 2, .groups = 1});
  CHECK(y.shape() == Shape{1, 5, 5});
  // centre: taps at rows/cols {0,2,4}:
  // 1*0+2*2+3*4 + 4*10+5*12+6*14 + 7*20+8*22+9*24 = 16 + 184 + 532
  CHECK(y.at(2 * 5 + 2) == 732.0);
  // corner (0,0): only taps at rows/cols {0,2} are inside: 5*0 + 6*2 + 8*10 + 9*12
  CHECK(y.at(0) == 200.0);
}

TEST_CASE("conv2d: output extent formula and oversize kernel") {
  Conv2dOptions o{.stride = 2, .padding = 1, .dilation = 1, .groups = 1};
  CHECK(conv_out_extent(7, 3, o) == 4);
  Conv2dOptions d{.stride = 1, .padding = 9, .dilation = 3, .groups = 1};
  CHECK(conv_out_extent(14, 7, d) == 14);
  Tensor x = Tensor::zeros({1, 1, 3, 3});
  Tensor w = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(conv2d(x, w, {}, {}), DimensionError);
}

TEST_CASE("activations") {
  auto s = softmax(Tensor::from({0, 0}, {2})).to_vector();
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  CHECK(std::abs(gelu(Tensor::scalar(10.0, DType::F64)).item() - 10.0) < 1e-4);
  // softmax along a middle axis
  Rng rng(2);
  auto m = softmax(randn({2, 3, 4}, rng, DType::F64), 1).to_vector();
  for (int o = 0; o < 2; ++o) {
    for (int i = 0; i < 4; ++i) {
      double t = 0;
      for (int l = 0; l < 3; ++l) t += m[static_cast<std::size_t>((o * 3 + l) * 4 + i)];
      CHECK(t == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("batch_norm: inference mode uses frozen running stats") {
  Tensor x = Tensor::from({1, 2, 3, 4}, {1, 1, 2, 2}, DType::F64);
  BatchNormState st{Tensor::from({2}, {1}, DType::F64), Tensor::from({4}, {1}, DType::F64), false, 0.1, 0.0};
  auto y = batch_norm_2d(x, Tensor::ones({1}, DType::F64), Tensor::zeros({1}, DType::F64), st).to_vector();
  CHECK(y == std::vector<double>{-0.5, 0.0, 0.5, 1.0});
  CHECK(st.running_mean.item() == 2.0);

  st.training = true;
  (void)batch_norm_2d(x, Tensor::ones({1}, DType::F64), Tensor::zeros({1}, DType::F64), st);
  CHECK(st.running_mean.item() == doctest::Approx(0.9 * 2 + 0.1 * 2.5));
}

TEST_CASE("grad_check: sum of squares passes, corrupted backward fails, NaN aborts") {
  Rng rng(21);
  Tensor x = randn({3, 4}, rng, DType::F64);
  Tensor w = randn({4, 3}, rng, DType::F64).requires_grad_();
  auto ok = grad_check([&] { return sum(square(linear(x, w))); }, {{"w", w}}, {x}, {.tol = 1e-6});
  CHECK(ok.passed);
  CHECK(ok.max_rel_error < 1e-6);

  auto bad = grad_check([&] { return sum(square(scale_backward(linear(x, w), 1.01))); }, {{"w", w}}, {x},
                        {.tol = 1e-6});
  CHECK_FALSE(bad.passed);
  CHECK(bad.max_rel_error > 5e-3);

  Tensor z = Tensor::zeros({2}, DType::F64).requires_grad_();
  auto nan = grad_check([&] { return sum(log(z)); }, {{"z", z}}, {}, {});
  CHECK(nan.aborted);
  CHECK_FALSE(nan.passed);
  CHECK(nan.diagnostic.find("non-finite") != std::string::npos);
}

TEST_CASE("grad_check: attention block over 8 tokens") {
  Rng rng(9);
  MultiHeadAttention a1(8, 2, rng);
  MultiHeadAttention a2(8, 2, rng);
  Tensor x = randn({1, 8, 8}, rng);
  std::vector<Tensor> aux{x};
  auto params = a1.named_parameters("a1");
  for (auto& p : a2.named_parameters("a2")) params.push_back(p);
  auto rep = grad_check([&] { return sum(square(a2.forward(a1.forward(x, x), a1.forward(x, x)))); }, params, aux,
                        {.tol = 1e-4});
  CHECK_MESSAGE(rep.passed, rep.diagnostic);
  CHECK(a1.named_parameters()[0].tensor.dtype() == DType::F32);  // restored
}

TEST_CASE("lr schedule") {
  const auto s = make_schedule(5e-5, 100);
  CHECK(s.warmup_steps == 10);
  CHECK(lr_at_step(s, 0) == 0.0);
  CHECK(lr_at_step(s, 10) == 5e-5);
  CHECK(lr_at_step(s, 100) == 0.0);
  CHECK(lr_at_step(s, 150) == 0.0);
  CHECK(lr_at_step(s, 5) == doctest::Approx(2.5e-5));
  CHECK(lr_at_step(s, 55) == doctest::Approx(2.5e-5));
  double best = 0;
  for (std::int64_t i = 0; i <= 100; ++i) best = std::max(best, lr_at_step(s, i));
  CHECK(best == 5e-5);
}

TEST_CASE("adam: zero rate leaves parameters bitwise unchanged") {
  Rng rng(1);
  Linear lin(4, 3, rng);
  Tensor x = randn({5, 4}, rng);
  Adam opt(lin.named_parameters("lin"));
  const auto before = lin.weight.to_vector();
  sum(square(lin.forward(x))).backward();
  opt.step(0.0);
  CHECK(lin.weight.to_vector() == before);
  opt.step(1e-2);
  CHECK(lin.weight.to_vector() != before);

  opt.zero_grad();
  const auto mid = lin.weight.to_vector();
  sum(square(lin.forward(x))).backward();
  opt.set_lr_scale("lin.weight", 0.0);
  opt.step(1e-2);
  CHECK(lin.weight.to_vector() == mid);
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(17);
  EncoderLayer layer({16, 4, 32}, rng);
  Tensor x = randn({2, 7, 16}, rng);
  CHECK(layer.forward(x).to_vector() == layer.forward(x).to_vector());
}

TEST_CASE("backward: every reachable grad is finite and shapes match") {
  Rng rng(23);
  EncoderLayer layer({8, 2, 16}, rng);
  Tensor x = randn({2, 5, 8}, rng);
  sum(layer.forward(x)).backward();
  for (const auto& p : layer.named_parameters()) {
    REQUIRE(p.tensor.has_grad());
    CHECK(p.tensor.grad().shape() == p.tensor.shape());
    for (double g : p.tensor.grad().to_vector()) CHECK(std::isfinite(g));
  }
}

TEST_CASE("checkpoint round trip and digest") {
  Rng rng(31);
  Linear a(3, 2, rng);
  Linear b(3, 2, rng);
  const std::string path = "test_tensor_ckpt.bin";
  save_checkpoint(path, a.named_parameters("lin"), {{"note", "x"}});
  auto ck = load_checkpoint(path);
  CHECK(ck.meta["note"] == "x");
  CHECK(ck.tensors.at("lin.weight").shape() == Shape{3, 2});
  load_module(b, ck, "lin");
  CHECK(b.weight.to_vector() == a.weight.to_vector());
  CHECK(state_digest(a.named_parameters()) == state_digest(b.named_parameters()));
  CHECK_THROWS(load_module(b, ck, "other"));
  std::remove(path.c_str());
}
