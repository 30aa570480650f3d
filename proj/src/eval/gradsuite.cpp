#include "tfn/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "tfn/gradcheck.hpp"
#include "tfn/model.hpp"

namespace tfn {

namespace {

Tensor randn(Shape s, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::empty(std::move(s), DType::F64);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, scale * rng.normal());
  return t;
}

Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
  Tensor t = Tensor::empty(std::move(s), DType::F64);
  for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform(lo, hi));
  return t;
}

Tensor param(Tensor t) { return t.requires_grad_(); }

/// A test body builds fresh tensors for one seed and returns the loss closure
/// plus the tensors to check and carry along.
struct Case {
  std::function<Tensor()> loss;
  std::vector<NamedTensor> checked;
  std::vector<Tensor> aux;
  std::shared_ptr<Module> owner;  // keeps a module alive for the closure
};

/// Contracts the output with a fixed random tensor so every output element
/// carries a distinct weight.
Tensor project(const Tensor& out, const Tensor& r) { return sum(mul(out, r)); }

/// Runs one case over every seed in both precisions and records the worst error.
class Runner {
 public:
  Runner(const GradSuiteOptions& opts, std::string group, std::vector<GradSuiteResult>& out)
      : opts_(opts), group_(std::move(group)), out_(out) {}

  void operator()(const std::string& what, const std::function<Case(Rng&)>& make, std::int64_t max_elements = 0) {
    for (const auto& prec : kGradSuitePrecisions) {
      GradSuiteResult res;
      res.group = group_;
      res.name = what;
      res.dtype = prec.dtype;
      res.tol = prec.tol;
      res.passed = true;
      for (int seed = 0; seed < opts_.seeds; ++seed) {
        Rng rng(static_cast<std::uint64_t>(1000 + seed));
        Case c = make(rng);
        const auto rep =
            grad_check(c.loss, c.checked, c.aux,
                       {.tol = prec.tol, .step = 1e-5, .analytic_dtype = prec.dtype, .max_elements = max_elements});
        res.max_rel_error = std::max(res.max_rel_error, rep.max_rel_error);
        ++res.seeds;
        if (!rep.passed) {
          res.passed = false;
          res.diagnostic = "seed " + std::to_string(seed) + ": " + rep.diagnostic;
          break;
        }
      }
      if (opts_.progress) opts_.progress(res);
      out_.push_back(res);
    }
  }

 private:
  const GradSuiteOptions& opts_;
  std::string group_;
  std::vector<GradSuiteResult>& out_;
};

Case unary(Rng& rng, Shape shape, const std::function<Tensor(const Tensor&)>& f, double lo = -2, double hi = 2) {
  Tensor x = param(uniform(shape, rng, lo, hi));
  Tensor r = randn(f(x).shape(), rng);
  return {[=] { return project(f(x), r); }, {{"x", x}}, {r}, nullptr};
}

Case binary(Rng& rng, Shape sa, Shape sb, const std::function<Tensor(const Tensor&, const Tensor&)>& f,
            Shape out, double blo = -2, double bhi = 2) {
  Tensor a = param(uniform(sa, rng, -2, 2));
  Tensor b = param(uniform(sb, rng, blo, bhi));
  Tensor r = randn(out, rng);
  return {[=] { return project(f(a, b), r); }, {{"a", a}, {"b", b}}, {r}, nullptr};
}

template <class M>
Case module_case(std::shared_ptr<M> m, Tensor x, Shape out_shape, Rng& rng,
                 const std::function<Tensor(const M&, const Tensor&)>& f) {
  x.requires_grad_();
  Tensor r = randn(out_shape, rng);
  Case c;
  c.owner = m;
  c.checked = m->named_parameters();
  c.checked.push_back({"input", x});
  c.aux = {r};
  for (auto& b : m->named_buffers()) c.aux.push_back(b.tensor);
  c.loss = [m, x, r, f] { return project(f(*m, x), r); };
  return c;
}


void elementwise_ops(Runner& run) {
  run("add", [](Rng& g) { return binary(g, {3, 4}, {4}, [](auto& a, auto& b) { return add(a, b); }, {3, 4}); });
  run("sub", [](Rng& g) { return binary(g, {3, 1}, {3, 4}, [](auto& a, auto& b) { return sub(a, b); }, {3, 4}); });
  run("mul", [](Rng& g) { return binary(g, {2, 3, 4}, {3, 1}, [](auto& a, auto& b) { return mul(a, b); }, {2, 3, 4}); });
  run("div", [](Rng& g) {
    return binary(g, {3, 4}, {3, 4}, [](auto& a, auto& b) { return div(a, b); }, {3, 4}, 0.5, 2.0);
  });
  run("add_scalar", [](Rng& g) { return unary(g, {5}, [](auto& x) { return add_scalar(x, 0.7); }); });
  run("mul_scalar", [](Rng& g) { return unary(g, {5}, [](auto& x) { return mul_scalar(x, -1.3); }); });
  run("neg", [](Rng& g) { return unary(g, {5}, [](auto& x) { return neg(x); }); });
  run("square", [](Rng& g) { return unary(g, {6}, [](auto& x) { return square(x); }); });
  run("exp", [](Rng& g) { return unary(g, {6}, [](auto& x) { return exp(x); }); });
  run("log", [](Rng& g) { return unary(g, {6}, [](auto& x) { return log(x); }, 0.3, 3.0); });
  run("gelu", [](Rng& g) { return unary(g, {12}, [](auto& x) { return gelu(x); }, -4, 4); });
}

void shape_ops(Runner& run) {
  run("reshape", [](Rng& g) { return unary(g, {2, 6}, [](auto& x) { return reshape(reshape(x, {3, 4}), {2, 6}); }); });
  run("permute", [](Rng& g) {
    return unary(g, {2, 3, 4}, [](auto& x) { return reshape(permute(x, {2, 0, 1}), {2, 3, 4}); });
  });
  run("transpose", [](Rng& g) { return unary(g, {3, 3}, [](auto& x) { return transpose(x, 0, 1); }); });
  run("unsqueeze", [](Rng& g) { return unary(g, {4}, [](auto& x) { return reshape(unsqueeze(x, 0), {4}); }); });
  run("slice", [](Rng& g) {
    return unary(g, {4, 5}, [](auto& x) { return concat({slice(x, 1, 1, 3), slice(x, 1, 0, 2)}, 1); });
  });
  run("concat", [](Rng& g) {
    return binary(g, {2, 3}, {2, 2}, [](auto& a, auto& b) { return concat({a, b, a}, 1); }, {2, 8});
  });
}

void reductions(Runner& run) {
  run("sum", [](Rng& g) { return unary(g, {3, 4}, [](auto& x) { return sum(square(x)); }); });
  run("mean", [](Rng& g) { return unary(g, {3, 4}, [](auto& x) { return square(mean(x)); }); });
  run("sum axis", [](Rng& g) { return unary(g, {3, 4, 2}, [](auto& x) { return reshape(sum(x, 1), {3, 2}); }); });
  run("mean axis", [](Rng& g) {
    return unary(g, {3, 4, 2}, [](auto& x) { return reshape(mean(x, 2, true), {3, 4}); });
  });
}

void matmul_linear_and_softmax(Runner& run) {
  run("matmul", [](Rng& g) { return binary(g, {3, 4}, {4, 5}, [](auto& a, auto& b) { return matmul(a, b); }, {3, 5}); });
  run("batched matmul", [](Rng& g) {
    return binary(g, {2, 3, 4}, {2, 4, 2}, [](auto& a, auto& b) { return matmul(a, b); }, {2, 3, 2});
  });
  run("linear", [](Rng& g) {
    Tensor x = param(randn({6, 4}, g));
    Tensor w = param(randn({4, 5}, g));
    Tensor b = param(randn({5}, g));
    Tensor r = randn({6, 5}, g);
    return Case{[=] { return project(linear(x, w, b), r); }, {{"x", x}, {"w", w}, {"b", b}}, {r}, nullptr};
  });
  run("softmax", [](Rng& g) { return unary(g, {3, 5}, [](auto& x) { return softmax(x, -1); }); });
  run("softmax axis 0", [](Rng& g) { return unary(g, {3, 5}, [](auto& x) { return softmax(x, 0); }); });
}

void normalization(Runner& run) {
  run("layer_norm", [](Rng& g) {
    Tensor x = param(randn({2, 3, 6}, g));
    Tensor gm = param(uniform({6}, g, 0.5, 1.5));
    Tensor bt = param(randn({6}, g));
    Tensor r = randn({2, 3, 6}, g);
    return Case{[=] { return project(layer_norm(x, gm, bt), r); }, {{"x", x}, {"gamma", gm}, {"beta", bt}}, {r},
                nullptr};
  });
  for (bool training : {false, true}) {
    run(training ? "batch_norm train" : "batch_norm eval", [training](Rng& g) {
      Tensor x = param(randn({3, 2, 3, 3}, g));
      Tensor gm = param(uniform({2}, g, 0.5, 1.5));
      Tensor bt = param(randn({2}, g));
      BatchNormState st{uniform({2}, g, -0.5, 0.5), uniform({2}, g, 0.5, 2.0), training};
      Tensor r = randn({3, 2, 3, 3}, g);
      return Case{[=] { return project(batch_norm_2d(x, gm, bt, st), r); },
                  {{"x", x}, {"gamma", gm}, {"beta", bt}},
                  {r, st.running_mean, st.running_var},
                  nullptr};
    });
  }
}

void convolution(Runner& run) {
  struct Variant {
    const char* name;
    std::int64_t c_in, c_out, k;
    Conv2dOptions opt;
  };
  const Variant variants[] = {{"conv 3x3", 2, 3, 3, {1, 1, 1, 1}},
                              {"conv stride 2", 2, 2, 3, {2, 1, 1, 1}},
                              {"conv 7x7 stride 4", 3, 2, 7, {4, 3, 1, 1}},
                              {"depthwise 5x5", 3, 3, 5, {1, 2, 1, 3}},
                              {"depthwise dilated 7x7", 2, 2, 7, {1, 9, 3, 2}},
                              {"pointwise", 3, 4, 1, {1, 0, 1, 1}}};
  for (const auto& v : variants) {
    run(v.name, [&v](Rng& g) {
      Tensor x = param(randn({2, v.c_in, 8, 8}, g));
      Tensor w = param(randn({v.c_out, v.c_in / v.opt.groups, v.k, v.k}, g, 0.3));
      Tensor b = param(randn({v.c_out}, g));
      const auto o = conv_out_extent(8, v.k, v.opt);
      Tensor r = randn({2, v.c_out, o, o}, g);
      const auto opt = v.opt;
      return Case{[=] { return project(conv2d(x, w, b, opt), r); }, {{"x", x}, {"w", w}, {"b", b}}, {r}, nullptr};
    });
  }
}

void attention_and_losses(Runner& run) {
  run("sdpa", [](Rng& g) {
    Tensor q = param(randn({2, 3, 4}, g));
    Tensor k = param(randn({2, 5, 4}, g));
    Tensor v = param(randn({2, 5, 4}, g));
    Tensor r = randn({2, 3, 4}, g);
    return Case{[=] { return project(scaled_dot_product_attention(q, k, v), r); }, {{"q", q}, {"k", k}, {"v", v}},
                {r}, nullptr};
  });
  run("sdpa masked", [](Rng& g) {
    Tensor q = param(randn({1, 4, 3}, g));
    Tensor k = param(randn({1, 4, 3}, g));
    Tensor v = param(randn({1, 4, 3}, g));
    Tensor mask = Tensor::zeros({4, 4}, DType::F64);
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j <= i; ++j) mask.set(i * 4 + j, 1.0);
    }
    Tensor r = randn({1, 4, 3}, g);
    return Case{[=] { return project(scaled_dot_product_attention(q, k, v, mask), r); },
                {{"q", q}, {"k", k}, {"v", v}},
                {r, mask},
                nullptr};
  });
  run("mse_loss", [](Rng& g) {
    Tensor p = param(randn({3, 4}, g));
    Tensor t = randn({3, 4}, g);
    return Case{[=] { return mse_loss(p, t); }, {{"pred", p}}, {t}, nullptr};
  });
  run("weighted_ce_loss", [](Rng& g) {
    Tensor p = param(uniform({6}, g, 0.1, 0.9));
    Tensor y = Tensor::from({1, 0, 1, 1, 0, 0}, {6}, DType::F64);
    const double alpha = g.uniform(0.2, 0.8);
    return Case{[=] { return weighted_ce_loss(p, y, alpha); }, {{"probs", p}}, {y}, nullptr};
  });
}

void composed_blocks(Runner& run) {
  run(
      "attention encoder layer",
      [](Rng& g) {
        auto m = std::make_shared<EncoderLayer>(TransformerDims{8, 2, 16}, g);
        return module_case<EncoderLayer>(m, randn({1, 6, 8}, g), {1, 6, 8}, g,
                                         [](const EncoderLayer& l, const Tensor& x) { return l.forward(x); });
      },
      24);
  run(
      "trajectory predictor",
      [](Rng& g) {
        auto m = std::make_shared<TrajPredictor>(TrajPredictorConfig{1, 1, 2, 8, 16, kFeatures}, g);
        return module_case<TrajPredictor>(m, randn({1, kPastLen, kFeatures}, g), {1, kPredLen, kFeatures}, g,
                                          [](const TrajPredictor& t, const Tensor& x) { return t.forward(x); });
      },
      16);
  run(
      "sam encoder",
      [](Rng& g) {
        auto m = std::make_shared<SamEncoder>(SamConfig{1, 2, 8, 16, kFeatures, true, true}, g);
        Tensor pred = randn({1, kPredLen, kFeatures}, g);
        auto c = module_case<SamEncoder>(m, randn({1, kPastLen, kFeatures}, g), {1, 40}, g,
                                         [pred](const SamEncoder& s, const Tensor& x) { return s.forward(x, pred); });
        c.aux.push_back(pred);
        return c;
      },
      16);
  for (bool training : {false, true}) {
    run(
        training ? "van block (batch statistics)" : "van block",
        [training](Rng& g) {
          auto m = std::make_shared<VanBlock>(3, 2, 0.5, g);
          m->train(training);
          return module_case<VanBlock>(m, randn({2, 3, 8, 8}, g), {2, 3, 8, 8}, g,
                                       [](const VanBlock& b, const Tensor& x) { return b.forward(x); });
        },
        16);
  }
  for (bool attn : {false, true}) {
    run(
        attn ? "fusion head with modality attention" : "fusion head",
        [attn](Rng& g) {
          auto m = std::make_shared<FusionHead>(attn, g);
          Tensor v = param(randn({2, 40}, g));
          auto c = module_case<FusionHead>(m, randn({2, 40}, g), {2, 2}, g,
                                           [v](const FusionHead& f, const Tensor& s) { return f.forward(s, v); });
          c.checked.push_back({"vam", v});
          return c;
        },
        24);
  }
}

using GroupFn = void (*)(Runner&);
const std::vector<std::pair<std::string, GroupFn>>& groups() {
  static const std::vector<std::pair<std::string, GroupFn>> g{
    {"elementwise ops", elementwise_ops},
    {"shape ops", shape_ops},
    {"reductions", reductions},
    {"matmul, linear and softmax", matmul_linear_and_softmax},
    {"normalization", normalization},
    {"convolution", convolution},
    {"attention and losses", attention_and_losses},
    {"composed blocks", composed_blocks},
  };
  return g;
}

}  // namespace

std::vector<std::string> gradient_suite_groups() {
  std::vector<std::string> out;
  for (const auto& [name, fn] : groups()) out.push_back(name);
  return out;
}

std::vector<GradSuiteResult> run_gradient_suite(const GradSuiteOptions& opts) {
  if (opts.seeds < 1) throw std::invalid_argument("gradient suite needs at least one seed");
  bool matched = opts.group.empty();
  std::vector<GradSuiteResult> out;
  for (const auto& [name, fn] : groups()) {
    if (!opts.group.empty() && name != opts.group) continue;
    matched = true;
    Runner run(opts, name, out);
    fn(run);
  }
  if (!matched) throw std::invalid_argument("unknown gradient suite group '" + opts.group + "'");
  return out;
}

}  // namespace tfn
