#include <algorithm>
#include <vector>

#include "tfn/blas.hpp"
#include "tfn/ops.hpp"

namespace tfn {

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, const Conv2dOptions& opt) {
  return (in + 2 * opt.padding - opt.dilation * (k - 1) - 1) / opt.stride + 1;
}

namespace {

struct ConvGeom {
  std::int64_t n, cin, h, w, cout, cpg_in, cpg_out, kh, kw, oh, ow;
  Conv2dOptions opt;

  bool pointwise() const {
    return kh == 1 && kw == 1 && opt.stride == 1 && opt.padding == 0 && opt.dilation == 1;
  }
  bool depthwise() const { return opt.groups == cin && cout == cin && cpg_in == 1; }
};

// Valid output range [lo, hi) along one axis for kernel tap `tap`.
inline void tap_range(std::int64_t tap, std::int64_t in, std::int64_t out, const Conv2dOptions& o, std::int64_t& lo,
                      std::int64_t& hi) {
  const std::int64_t shift = o.padding - tap * o.dilation;  // i_in = o_out*stride - shift
  lo = shift <= 0 ? 0 : (shift + o.stride - 1) / o.stride;
  const std::int64_t top = in - 1 + shift;
  hi = top < 0 ? 0 : std::min(out, top / o.stride + 1);
  if (hi < lo) hi = lo;
}

template <class T>
void im2col(const T* x, const ConvGeom& g, std::int64_t c0, T* col) {
  const std::int64_t plane = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.cpg_in; ++c) {
    const T* xc = x + (c0 + c) * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      std::int64_t oy_lo, oy_hi;
      tap_range(i, g.h, g.oh, g.opt, oy_lo, oy_hi);
      for (std::int64_t j = 0; j < g.kw; ++j) {
        std::int64_t ox_lo, ox_hi;
        tap_range(j, g.w, g.ow, g.opt, ox_lo, ox_hi);
        T* dst = col + ((c * g.kh + i) * g.kw + j) * plane;
        std::fill(dst, dst + plane, T(0));
        for (std::int64_t oy = oy_lo; oy < oy_hi; ++oy) {
          const std::int64_t iy = oy * g.opt.stride - g.opt.padding + i * g.opt.dilation;
          const T* src = xc + iy * g.w;
          T* drow = dst + oy * g.ow;
          for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) {
            drow[ox] = src[ox * g.opt.stride - g.opt.padding + j * g.opt.dilation];
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvGeom& g, std::int64_t c0, T* dx) {
  const std::int64_t plane = g.oh * g.ow;
  for (std::int64_t c = 0; c < g.cpg_in; ++c) {
    T* xc = dx + (c0 + c) * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      std::int64_t oy_lo, oy_hi;
      tap_range(i, g.h, g.oh, g.opt, oy_lo, oy_hi);
      for (std::int64_t j = 0; j < g.kw; ++j) {
        std::int64_t ox_lo, ox_hi;
        tap_range(j, g.w, g.ow, g.opt, ox_lo, ox_hi);
        const T* src = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::int64_t oy = oy_lo; oy < oy_hi; ++oy) {
          const std::int64_t iy = oy * g.opt.stride - g.opt.padding + i * g.opt.dilation;
          T* drow = xc + iy * g.w;
          const T* srow = src + oy * g.ow;
          for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) {
            drow[ox * g.opt.stride - g.opt.padding + j * g.opt.dilation] += srow[ox];
          }
        }
      }
    }
  }
}

template <class T>
void depthwise_forward(const T* x, const T* w, T* y, const ConvGeom& g) {
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const T* xc = x + (b * g.cin + c) * g.h * g.w;
      T* yc = y + (b * g.cin + c) * g.oh * g.ow;
      const T* wc = w + c * g.kh * g.kw;
      for (std::int64_t i = 0; i < g.kh; ++i) {
        std::int64_t oy_lo, oy_hi;
        tap_range(i, g.h, g.oh, g.opt, oy_lo, oy_hi);
        for (std::int64_t j = 0; j < g.kw; ++j) {
          std::int64_t ox_lo, ox_hi;
          tap_range(j, g.w, g.ow, g.opt, ox_lo, ox_hi);
          const T wt = wc[i * g.kw + j];
          for (std::int64_t oy = oy_lo; oy < oy_hi; ++oy) {
            const T* src = xc + (oy * g.opt.stride - g.opt.padding + i * g.opt.dilation) * g.w - g.opt.padding +
                           j * g.opt.dilation;
            T* dst = yc + oy * g.ow;
            if (g.opt.stride == 1) {
              for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) dst[ox] += wt * src[ox];
            } else {
              for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) dst[ox] += wt * src[ox * g.opt.stride];
            }
          }
        }
      }
    }
  }
}

template <class T>
void depthwise_backward(const T* x, const T* w, const T* gy, T* gx, T* gw, const ConvGeom& g) {
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (std::int64_t c = 0; c < g.cin; ++c) {
      const T* xc = x + (b * g.cin + c) * g.h * g.w;
      const T* gyc = gy + (b * g.cin + c) * g.oh * g.ow;
      T* gxc = gx ? gx + (b * g.cin + c) * g.h * g.w : nullptr;
      for (std::int64_t i = 0; i < g.kh; ++i) {
        std::int64_t oy_lo, oy_hi;
        tap_range(i, g.h, g.oh, g.opt, oy_lo, oy_hi);
        for (std::int64_t j = 0; j < g.kw; ++j) {
          std::int64_t ox_lo, ox_hi;
          tap_range(j, g.w, g.ow, g.opt, ox_lo, ox_hi);
          const T wt = w[c * g.kh * g.kw + i * g.kw + j];
          double acc = 0.0;
          for (std::int64_t oy = oy_lo; oy < oy_hi; ++oy) {
            const std::int64_t off = (oy * g.opt.stride - g.opt.padding + i * g.opt.dilation) * g.w - g.opt.padding +
                                     j * g.opt.dilation;
            const T* grow = gyc + oy * g.ow;
            const T* src = xc + off;
            T local = 0;
            for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) local += grow[ox] * src[ox * g.opt.stride];
            acc += local;
            if (gxc) {
              T* dst = gxc + off;
              for (std::int64_t ox = ox_lo; ox < ox_hi; ++ox) dst[ox * g.opt.stride] += wt * grow[ox];
            }
          }
          if (gw) gw[c * g.kh * g.kw + i * g.kw + j] += static_cast<T>(acc);
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x_in, const Tensor& w, const Tensor& bias, const Conv2dOptions& opt) {
  if (x_in.dim() == 3) {
    Tensor y = conv2d(unsqueeze(x_in, 0), w, bias, opt);
    return reshape(y, {y.size(1), y.size(2), y.size(3)});
  }
  const Tensor& x = x_in;
  if (x.dim() != 4 || w.dim() != 4) {
    throw DimensionError("conv2d: expected input [N,C,H,W] and weight [Co,Ci/g,kh,kw], got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
  }
  if (x.dtype() != w.dtype()) throw DimensionError("conv2d: dtype mismatch");
  if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0 || opt.groups < 1) {
    throw std::invalid_argument("conv2d: invalid stride/dilation/padding/groups");
  }
  ConvGeom g{};
  g.opt = opt;
  g.n = x.size(0);
  g.cin = x.size(1);
  g.h = x.size(2);
  g.w = x.size(3);
  g.cout = w.size(0);
  g.cpg_in = w.size(1);
  g.kh = w.size(2);
  g.kw = w.size(3);
  if (g.cin % opt.groups != 0 || g.cout % opt.groups != 0 || g.cpg_in * opt.groups != g.cin) {
    throw DimensionError("conv2d: groups=" + std::to_string(opt.groups) + " incompatible with input " +
                         shape_str(x.shape()) + " and weight " + shape_str(w.shape()));
  }
  if (opt.dilation * (g.kh - 1) + 1 > g.h + 2 * opt.padding || opt.dilation * (g.kw - 1) + 1 > g.w + 2 * opt.padding) {
    throw DimensionError("conv2d: kernel " + shape_str(w.shape()) + " (dilation " + std::to_string(opt.dilation) +
                         ") larger than padded input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != g.cout) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match " + std::to_string(g.cout) +
                         " output channels");
  }
  g.cpg_out = g.cout / opt.groups;
  g.oh = conv_out_extent(g.h, g.kh, opt);
  g.ow = conv_out_extent(g.w, g.kw, opt);
  const std::int64_t plane = g.oh * g.ow;
  const std::int64_t kdim = g.cpg_in * g.kh * g.kw;

  Tensor out = Tensor::zeros({g.n, g.cout, g.oh, g.ow}, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    const T* px = x.data<T>().data();
    const T* pw = w.data<T>().data();
    T* py = out.data<T>().data();
    if (g.depthwise()) {
      depthwise_forward(px, pw, py, g);
    } else {
      std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(kdim * plane));
      for (std::int64_t b = 0; b < g.n; ++b) {
        const T* xb = px + b * g.cin * g.h * g.w;
        for (std::int64_t grp = 0; grp < opt.groups; ++grp) {
          const T* src = xb + grp * g.cpg_in * g.h * g.w;
          if (!g.pointwise()) {
            im2col(xb, g, grp * g.cpg_in, col.data());
            src = col.data();
          }
          gemm<T>(false, false, g.cpg_out, plane, kdim, T(1), pw + grp * g.cpg_out * kdim, kdim, src, plane, T(0),
                  py + (b * g.cout + grp * g.cpg_out) * plane, plane);
        }
      }
    }
    if (bias.defined()) {
      const T* pb = bias.data<T>().data();
      for (std::int64_t b = 0; b < g.n; ++b) {
        for (std::int64_t c = 0; c < g.cout; ++c) {
          T* dst = py + (b * g.cout + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) dst[i] += pb[c];
        }
      }
    }
  });

  Tensor x_saved = x.detach();
  Tensor w_saved = w.detach();
  std::vector<Tensor> inputs{x, w};
  if (bias.defined()) inputs.push_back(bias);
  attach_grad_fn(out, "conv2d", inputs, [=](const Tensor& gy) -> std::vector<Tensor> {
    Tensor gx = x.requires_grad() ? Tensor::zeros(x_saved.shape(), gy.dtype()) : Tensor();
    Tensor gw = w.requires_grad() ? Tensor::zeros(w_saved.shape(), gy.dtype()) : Tensor();
    Tensor gb = (bias.defined() && bias.requires_grad()) ? Tensor::zeros(bias.shape(), gy.dtype()) : Tensor();
    dispatch(gy.dtype(), [&]<typename T>() {
      const T* px = x_saved.data<T>().data();
      const T* pw = w_saved.data<T>().data();
      const T* pgy = gy.data<T>().data();
      T* pgx = gx.defined() ? gx.data<T>().data() : nullptr;
      T* pgw = gw.defined() ? gw.data<T>().data() : nullptr;
      if (g.depthwise()) {
        depthwise_backward(px, pw, pgy, pgx, pgw, g);
      } else {
        std::vector<T> col(static_cast<std::size_t>(kdim * plane));
        for (std::int64_t b = 0; b < g.n; ++b) {
          const T* xb = px + b * g.cin * g.h * g.w;
          for (std::int64_t grp = 0; grp < opt.groups; ++grp) {
            const T* gyb = pgy + (b * g.cout + grp * g.cpg_out) * plane;
            if (pgw) {
              const T* src = xb + grp * g.cpg_in * g.h * g.w;
              if (!g.pointwise()) {
                im2col(xb, g, grp * g.cpg_in, col.data());
                src = col.data();
              }
              gemm<T>(false, true, g.cpg_out, kdim, plane, T(1), gyb, plane, src, plane, T(1),
                      pgw + grp * g.cpg_out * kdim, kdim);
            }
            if (pgx) {
              if (g.pointwise()) {
                gemm<T>(true, false, kdim, plane, g.cpg_out, T(1), pw + grp * g.cpg_out * kdim, kdim, gyb, plane,
                        T(1), pgx + (b * g.cin + grp * g.cpg_in) * g.h * g.w, plane);
              } else {
                gemm<T>(true, false, kdim, plane, g.cpg_out, T(1), pw + grp * g.cpg_out * kdim, kdim, gyb, plane,
                        T(0), col.data(), plane);
                col2im(col.data(), g, grp * g.cpg_in, pgx + b * g.cin * g.h * g.w);
              }
            }
          }
        }
      }
      if (gb.defined()) {
        T* pgb = gb.data<T>().data();
        for (std::int64_t b = 0; b < g.n; ++b) {
          for (std::int64_t c = 0; c < g.cout; ++c) {
            const T* src = pgy + (b * g.cout + c) * plane;
            double acc = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
            pgb[c] += static_cast<T>(acc);
          }
        }
      }
    });
    std::vector<Tensor> grads{gx, gw};
    if (bias.defined()) grads.push_back(gb);
    return grads;
  });
  return out;
}

}  // namespace tfn
