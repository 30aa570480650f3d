#include <cmath>
#include <numbers>

#include "tfn/ops.hpp"

namespace tfn {

namespace {

void check_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw DimensionError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
  }
}

// Strides of `in` when viewed in the coordinates of `out` (0 on broadcast axes).
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t s = 1;
  const auto offset = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;) {
    if (in[i] != 1) strides[i + offset] = s;
    s *= in[i];
  }
  return strides;
}

template <class F>
void broadcast_loop(const Shape& out, const std::vector<std::int64_t>& sa, const std::vector<std::int64_t>& sb,
                    F&& f) {
  const std::int64_t n = numel_of(out);
  if (n == 0) return;
  const auto r = out.size();
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<std::int64_t> idx(r, 0);
  const std::int64_t inner = out[r - 1];
  const std::int64_t sai = sa[r - 1];
  const std::int64_t sbi = sb[r - 1];
  std::int64_t ia = 0;
  std::int64_t ib = 0;
  for (std::int64_t base = 0; base < n; base += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(base + j, ia + j * sai, ib + j * sbi);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  check_same_dtype(a, b, name);
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), out_shape);
  const auto sb = broadcast_strides(b.shape(), out_shape);
  Tensor out = Tensor::empty(out_shape, a.dtype());
  const bool same = a.shape() == b.shape();
  dispatch(a.dtype(), [&]<typename T>() {
    auto o = out.data<T>();
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto apply = [op](T u, T v) -> T {
      switch (op) {
        case BinOp::Add: return u + v;
        case BinOp::Sub: return u - v;
        case BinOp::Mul: return u * v;
        default: return u / v;
      }
    };
    if (same) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(x[i], y[i]);
    } else {
      broadcast_loop(out_shape, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        o[static_cast<std::size_t>(i)] = apply(x[static_cast<std::size_t>(ia)], y[static_cast<std::size_t>(ib)]);
      });
    }
  });

  Tensor a_saved = a.detach();
  Tensor b_saved = b.detach();
  attach_grad_fn(out, name, {a, b}, [=](const Tensor& g) -> std::vector<Tensor> {
    const bool need_a = a.requires_grad();
    const bool need_b = b.requires_grad();
    Tensor ga = need_a ? Tensor::zeros(a_saved.shape(), g.dtype()) : Tensor();
    Tensor gb = need_b ? Tensor::zeros(b_saved.shape(), g.dtype()) : Tensor();
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto x = a_saved.data<T>();
      auto y = b_saved.data<T>();
      T* pa = need_a ? ga.data<T>().data() : nullptr;
      T* pb = need_b ? gb.data<T>().data() : nullptr;
      broadcast_loop(out_shape, sa, sb, [&](std::int64_t i, std::int64_t ia, std::int64_t ib) {
        const T gi = gd[static_cast<std::size_t>(i)];
        const T u = x[static_cast<std::size_t>(ia)];
        const T v = y[static_cast<std::size_t>(ib)];
        switch (op) {
          case BinOp::Add:
            if (pa) pa[ia] += gi;
            if (pb) pb[ib] += gi;
            break;
          case BinOp::Sub:
            if (pa) pa[ia] += gi;
            if (pb) pb[ib] -= gi;
            break;
          case BinOp::Mul:
            if (pa) pa[ia] += gi * v;
            if (pb) pb[ib] += gi * u;
            break;
          case BinOp::Div:
            if (pa) pa[ia] += gi / v;
            if (pb) pb[ib] -= gi * u / (v * v);
            break;
        }
      });
    });
    return {ga, gb};
  });
  return out;
}

// Unary map with derivative expressed in terms of input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  Tensor out = Tensor::empty(a.shape(), a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto o = out.data<T>();
    auto x = a.data<T>();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<T>(fwd(static_cast<double>(x[i])));
  });
  Tensor a_saved = a.detach();
  Tensor y_saved = out.detach();
  attach_grad_fn(out, name, {a}, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor ga = Tensor::empty(a_saved.shape(), g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto gd = g.data<T>();
      auto x = a_saved.data<T>();
      auto y = y_saved.data<T>();
      auto o = ga.data<T>();
      for (std::size_t i = 0; i < o.size(); ++i) {
        o[i] = static_cast<T>(static_cast<double>(gd[i]) * deriv(static_cast<double>(x[i]), static_cast<double>(y[i])));
      }
    });
    return {ga};
  });
  return out;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const auto r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("cannot broadcast shapes " + shape_str(a) + " and " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Tensor sum_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  Tensor out = Tensor::zeros(shape, g.dtype());
  const auto sg = broadcast_strides(g.shape(), g.shape());
  const auto so = broadcast_strides(shape, g.shape());
  dispatch(g.dtype(), [&]<typename T>() {
    auto gd = g.data<T>();
    auto od = out.data<T>();
    broadcast_loop(g.shape(), sg, so, [&](std::int64_t, std::int64_t ig, std::int64_t io) {
      od[static_cast<std::size_t>(io)] += gd[static_cast<std::size_t>(ig)];
    });
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div, "div"); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary(a, "mul_scalar", [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a) {
  return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, "gelu", [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [=](double x, double) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Tensor scale_backward(const Tensor& x, double factor) {
  return unary(x, "scale_backward", [](double v) { return v; }, [factor](double, double) { return factor; });
}

}  // namespace tfn
