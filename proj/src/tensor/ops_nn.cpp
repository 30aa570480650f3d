#include <cmath>
#include <limits>

#include "tfn/ops.hpp"

namespace tfn {

namespace {

struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit r;
  for (std::int64_t i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor softmax(const Tensor& a, std::int64_t axis) {
  const auto r = a.dim();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("softmax: axis out of range for " + shape_str(a.shape()));
  const auto sp = split_at(a.shape(), axis);
  Tensor out = Tensor::empty(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto x = a.data<T>();
    auto y = out.data<T>();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.inner; ++i) {
        const std::int64_t base = o * sp.len * sp.inner + i;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t l = 0; l < sp.len; ++l) mx = std::max(mx, x[static_cast<std::size_t>(base + l * sp.inner)]);
        T total = 0;
        for (std::int64_t l = 0; l < sp.len; ++l) {
          const auto at = static_cast<std::size_t>(base + l * sp.inner);
          y[at] = std::exp(x[at] - mx);
          total += y[at];
        }
        for (std::int64_t l = 0; l < sp.len; ++l) y[static_cast<std::size_t>(base + l * sp.inner)] /= total;
      }
    }
  });
  Tensor y_saved = out.detach();
  attach_grad_fn(out, "softmax", {a}, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor ga = Tensor::empty(y_saved.shape(), g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto y = y_saved.data<T>();
      auto gd = g.data<T>();
      auto o = ga.data<T>();
      for (std::int64_t ou = 0; ou < sp.outer; ++ou) {
        for (std::int64_t i = 0; i < sp.inner; ++i) {
          const std::int64_t base = ou * sp.len * sp.inner + i;
          T dot = 0;
          for (std::int64_t l = 0; l < sp.len; ++l) {
            const auto at = static_cast<std::size_t>(base + l * sp.inner);
            dot += gd[at] * y[at];
          }
          for (std::int64_t l = 0; l < sp.len; ++l) {
            const auto at = static_cast<std::size_t>(base + l * sp.inner);
            o[at] = y[at] * (gd[at] - dot);
          }
        }
      }
    });
    return {ga};
  });
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.dim() < 1 || x.size(-1) < 1) throw DimensionError("layer_norm: needs d >= 1, got " + shape_str(x.shape()));
  const std::int64_t d = x.size(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw DimensionError("layer_norm: affine params " + shape_str(gamma.shape()) + " do not match input " +
                         shape_str(x.shape()));
  }
  const std::int64_t rows = x.numel() / d;
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  Tensor xhat = Tensor::empty(x.shape(), x.dtype());
  Tensor rstd = Tensor::empty({rows}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    auto hs = xhat.data<T>();
    auto rs = rstd.data<T>();
    auto gs = gamma.data<T>();
    auto bs = beta.data<T>();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* row = xs.data() + r * d;
      double mu = 0.0;
      for (std::int64_t j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::int64_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      rs[static_cast<std::size_t>(r)] = static_cast<T>(inv);
      for (std::int64_t j = 0; j < d; ++j) {
        const auto at = static_cast<std::size_t>(r * d + j);
        hs[at] = static_cast<T>((row[j] - mu) * inv);
        ys[at] = hs[at] * gs[static_cast<std::size_t>(j)] + bs[static_cast<std::size_t>(j)];
      }
    }
  });
  Tensor gamma_saved = gamma.detach();
  attach_grad_fn(out, "layer_norm", {x, gamma, beta}, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor gx = x.requires_grad() ? Tensor::empty(x.shape(), g.dtype()) : Tensor();
    Tensor ggamma = gamma.requires_grad() ? Tensor::zeros(gamma.shape(), g.dtype()) : Tensor();
    Tensor gbeta = beta.requires_grad() ? Tensor::zeros(beta.shape(), g.dtype()) : Tensor();
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto hs = xhat.data<T>();
      auto rs = rstd.data<T>();
      auto gs = gamma_saved.data<T>();
      for (std::int64_t r = 0; r < rows; ++r) {
        double sum_dh = 0.0;
        double sum_dh_h = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
          const auto at = static_cast<std::size_t>(r * d + j);
          const double dh = static_cast<double>(gd[at]) * gs[static_cast<std::size_t>(j)];
          sum_dh += dh;
          sum_dh_h += dh * hs[at];
          if (ggamma.defined()) ggamma.data<T>()[static_cast<std::size_t>(j)] += gd[at] * hs[at];
          if (gbeta.defined()) gbeta.data<T>()[static_cast<std::size_t>(j)] += gd[at];
        }
        if (gx.defined()) {
          const double inv = rs[static_cast<std::size_t>(r)];
          auto gxs = gx.data<T>();
          for (std::int64_t j = 0; j < d; ++j) {
            const auto at = static_cast<std::size_t>(r * d + j);
            const double dh = static_cast<double>(gd[at]) * gs[static_cast<std::size_t>(j)];
            gxs[at] = static_cast<T>(inv * (dh - sum_dh / d - hs[at] * sum_dh_h / d));
          }
        }
      }
    });
    return {gx, ggamma, gbeta};
  });
  return out;
}

Tensor batch_norm_2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, const BatchNormState& st) {
  if (x.dim() != 4) throw DimensionError("batch_norm_2d expects [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t n = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  if (gamma.numel() != c || beta.numel() != c || st.running_mean.numel() != c || st.running_var.numel() != c) {
    throw DimensionError("batch_norm_2d: per-channel params do not match input " + shape_str(x.shape()));
  }
  const std::int64_t count = n * hw;
  if (st.training && count < 2) throw DimensionError("batch_norm_2d: training needs more than one value per channel");
  Tensor out = Tensor::empty(x.shape(), x.dtype());
  Tensor xhat = Tensor::empty(x.shape(), x.dtype());
  Tensor inv_std = Tensor::empty({c}, x.dtype());
  Tensor running_mean = st.running_mean;
  Tensor running_var = st.running_var;
  dispatch(x.dtype(), [&]<typename T>() {
    auto xs = x.data<T>();
    auto ys = out.data<T>();
    auto hs = xhat.data<T>();
    auto is = inv_std.data<T>();
    auto gs = gamma.data<T>();
    auto bs = beta.data<T>();
    auto rm = running_mean.data<T>();
    auto rv = running_var.data<T>();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto cu = static_cast<std::size_t>(ch);
      double mu = 0.0;
      double var = 0.0;
      if (st.training) {
        for (std::int64_t b = 0; b < n; ++b) {
          const T* p = xs.data() + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) mu += p[i];
        }
        mu /= static_cast<double>(count);
        for (std::int64_t b = 0; b < n; ++b) {
          const T* p = xs.data() + (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) var += (p[i] - mu) * (p[i] - mu);
        }
        var /= static_cast<double>(count);
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        rm[cu] = static_cast<T>((1.0 - st.momentum) * rm[cu] + st.momentum * mu);
        rv[cu] = static_cast<T>((1.0 - st.momentum) * rv[cu] + st.momentum * unbiased);
      } else {
        mu = rm[cu];
        var = rv[cu];
      }
      const double inv = 1.0 / std::sqrt(var + st.eps);
      is[cu] = static_cast<T>(inv);
      for (std::int64_t b = 0; b < n; ++b) {
        const std::int64_t base = (b * c + ch) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const auto at = static_cast<std::size_t>(base + i);
          hs[at] = static_cast<T>((xs[at] - mu) * inv);
          ys[at] = hs[at] * gs[cu] + bs[cu];
        }
      }
    }
  });
  const bool training = st.training;
  Tensor gamma_saved = gamma.detach();
  attach_grad_fn(out, "batch_norm_2d", {x, gamma, beta}, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor gx = x.requires_grad() ? Tensor::empty(x.shape(), g.dtype()) : Tensor();
    Tensor ggamma = gamma.requires_grad() ? Tensor::zeros({c}, g.dtype()) : Tensor();
    Tensor gbeta = beta.requires_grad() ? Tensor::zeros({c}, g.dtype()) : Tensor();
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto hs = xhat.data<T>();
      auto is = inv_std.data<T>();
      auto gs = gamma_saved.data<T>();
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const auto cu = static_cast<std::size_t>(ch);
        double sum_g = 0.0;
        double sum_gh = 0.0;
        for (std::int64_t b = 0; b < n; ++b) {
          const std::int64_t base = (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const auto at = static_cast<std::size_t>(base + i);
            sum_g += gd[at];
            sum_gh += static_cast<double>(gd[at]) * hs[at];
          }
        }
        if (ggamma.defined()) ggamma.data<T>()[cu] = static_cast<T>(sum_gh);
        if (gbeta.defined()) gbeta.data<T>()[cu] = static_cast<T>(sum_g);
        if (!gx.defined()) continue;
        auto gxs = gx.data<T>();
        const double scale = static_cast<double>(gs[cu]) * is[cu];
        const double m = static_cast<double>(count);
        for (std::int64_t b = 0; b < n; ++b) {
          const std::int64_t base = (b * c + ch) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const auto at = static_cast<std::size_t>(base + i);
            if (training) {
              gxs[at] = static_cast<T>(scale * (gd[at] - sum_g / m - hs[at] * sum_gh / m));
            } else {
              gxs[at] = static_cast<T>(scale * gd[at]);
            }
          }
        }
      }
    });
    return {gx, ggamma, gbeta};
  });
  return out;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& keep_mask,
                                    Tensor* weights_out) {
  if (q.dim() < 2 || k.shape() != v.shape() || q.dim() != k.dim() || q.size(-1) != k.size(-1)) {
    throw DimensionError("attention: incompatible Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) +
                         ", V " + shape_str(v.shape()));
  }
  if (q.size(-1) == 0 || q.size(-2) == 0 || k.size(-2) == 0) {
    throw EmptyTensorError("attention: empty operand Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()));
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
  Tensor scores = mul_scalar(matmul(q, transpose(k, -2, -1)), scale);
  if (keep_mask.defined()) {
    // blocked positions get a large negative bias before the softmax
    Tensor bias = Tensor::empty(keep_mask.shape(), scores.dtype());
    for (std::int64_t i = 0; i < keep_mask.numel(); ++i) bias.set(i, keep_mask.at(i) != 0.0 ? 0.0 : -1e9);
    scores = add(scores, bias);
  }
  Tensor weights = softmax(scores, -1);
  if (weights_out) *weights_out = weights.detach();
  return matmul(weights, v);
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& keep_mask) {
  return scaled_dot_product_attention(q, k, v, keep_mask, nullptr);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

Tensor weighted_ce_loss(const Tensor& probs, const Tensor& labels, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("weighted_ce_loss: alpha must lie in (0,1), got " + std::to_string(alpha));
  }
  if (probs.shape() != labels.shape()) {
    throw DimensionError("weighted_ce_loss: shape mismatch " + shape_str(probs.shape()) + " vs " +
                         shape_str(labels.shape()));
  }
  const std::int64_t n = probs.numel();
  if (n == 0) throw EmptyTensorError("weighted_ce_loss on an empty batch");
  Tensor out = Tensor::empty({}, probs.dtype());
  dispatch(probs.dtype(), [&]<typename T>() {
    auto p = probs.data<T>();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      const double pc = std::clamp(static_cast<double>(p[iu]), kProbClamp, 1.0 - kProbClamp);
      const double y = labels.at(i);
      acc += alpha * y * std::log(pc) + (1.0 - alpha) * (1.0 - y) * std::log(1.0 - pc);
    }
    out.data<T>()[0] = static_cast<T>(-acc / static_cast<double>(n));
  });
  Tensor p_saved = probs.detach();
  Tensor y_saved = labels.detach();
  attach_grad_fn(out, "weighted_ce", {probs}, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor gp = Tensor::zeros(p_saved.shape(), g.dtype());
    const double go = g.item();
    for (std::int64_t i = 0; i < n; ++i) {
      const double p = p_saved.at(i);
      if (p < kProbClamp || p > 1.0 - kProbClamp) continue;  // clamped: flat
      const double y = y_saved.at(i);
      const double d = -(alpha * y / p - (1.0 - alpha) * (1.0 - y) / (1.0 - p)) / static_cast<double>(n);
      gp.set(i, go * d);
    }
    return {gp};
  });
  return out;
}

}  // namespace tfn
