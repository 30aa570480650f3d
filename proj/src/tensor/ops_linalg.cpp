#include <cblas.h>

#include "tfn/blas.hpp"
#include "tfn/ops.hpp"

namespace tfn {

template <>
void gemm<float>(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, float alpha,
                 const float* a, std::int64_t lda, const float* b, std::int64_t ldb, float beta, float* c,
                 std::int64_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    return;
  }
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

template <>
void gemm<double>(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, double alpha,
                  const double* a, std::int64_t lda, const double* b, std::int64_t ldb, double beta, double* c,
                  std::int64_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

void set_blas_threads(int n) { openblas_set_num_threads(n); }

namespace {

void check_dtypes(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) {
    throw DimensionError(std::string(op) + ": dtype mismatch " + dtype_name(a.dtype()) + " vs " +
                         dtype_name(b.dtype()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_dtypes(a, b, "matmul");
  if (a.dim() < 2 || b.dim() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::int64_t m = a.size(-2);
  const std::int64_t k = a.size(-1);
  const std::int64_t n = b.size(-1);
  if (b.size(-2) != k) {
    throw DimensionError("matmul: inner extents differ in " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const bool shared_b = b.dim() == 2;
  std::int64_t batch = a.numel() / std::max<std::int64_t>(m * k, 1);
  if (m * k == 0) {
    batch = 1;
    for (std::int64_t i = 0; i + 2 < a.dim(); ++i) batch *= a.shape()[static_cast<std::size_t>(i)];
  }
  if (!shared_b) {
    Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    if (lead_a != lead_b) {
      throw DimensionError("matmul: batch extents differ in " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 1);
  out_shape.push_back(n);
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    const T* pa = a.data<T>().data();
    const T* pb = b.data<T>().data();
    T* pc = out.data<T>().data();
    if (shared_b) {
      gemm<T>(false, false, batch * m, n, k, T(1), pa, k, pb, n, T(0), pc, n);
    } else {
      for (std::int64_t i = 0; i < batch; ++i) {
        gemm<T>(false, false, m, n, k, T(1), pa + i * m * k, k, pb + i * k * n, n, T(0), pc + i * m * n, n);
      }
    }
  });
  Tensor a_saved = a.detach();
  Tensor b_saved = b.detach();
  attach_grad_fn(out, "matmul", {a, b}, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor ga = a.requires_grad() ? Tensor::zeros(a_saved.shape(), g.dtype()) : Tensor();
    Tensor gb = b.requires_grad() ? Tensor::zeros(b_saved.shape(), g.dtype()) : Tensor();
    dispatch(g.dtype(), [&]<typename T>() {
      const T* pa = a_saved.data<T>().data();
      const T* pb = b_saved.data<T>().data();
      const T* pg = g.data<T>().data();
      if (shared_b) {
        if (ga.defined()) gemm<T>(false, true, batch * m, k, n, T(1), pg, n, pb, n, T(0), ga.data<T>().data(), k);
        if (gb.defined()) gemm<T>(true, false, k, n, batch * m, T(1), pa, k, pg, n, T(0), gb.data<T>().data(), n);
      } else {
        for (std::int64_t i = 0; i < batch; ++i) {
          if (ga.defined()) {
            gemm<T>(false, true, m, k, n, T(1), pg + i * m * n, n, pb + i * k * n, n, T(0),
                    ga.data<T>().data() + i * m * k, k);
          }
          if (gb.defined()) {
            gemm<T>(true, false, k, n, m, T(1), pa + i * m * k, k, pg + i * m * n, n, T(0),
                    gb.data<T>().data() + i * k * n, n);
          }
        }
      }
    });
    return {ga, gb};
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_dtypes(x, w, "linear");
  if (w.dim() != 2 || x.dim() < 1 || x.size(-1) != w.size(0)) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  const std::int64_t d_in = w.size(0);
  const std::int64_t d_out = w.size(1);
  if (b.defined() && (b.dim() != 1 || b.size(0) != d_out || b.dtype() != w.dtype())) {
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " incompatible with weight " +
                         shape_str(w.shape()));
  }
  const std::int64_t rows = d_in == 0 ? 0 : x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor out = Tensor::empty(out_shape, x.dtype());
  dispatch(x.dtype(), [&]<typename T>() {
    T* po = out.data<T>().data();
    if (b.defined()) {
      const T* pb = b.data<T>().data();
      for (std::int64_t r = 0; r < rows; ++r) std::copy(pb, pb + d_out, po + r * d_out);
    } else {
      std::fill(po, po + rows * d_out, T(0));
    }
    gemm<T>(false, false, rows, d_out, d_in, T(1), x.data<T>().data(), d_in, w.data<T>().data(), d_out,
            T(1), po, d_out);
  });
  Tensor x_saved = x.detach();
  Tensor w_saved = w.detach();
  std::vector<Tensor> inputs{x, w};
  if (b.defined()) inputs.push_back(b);
  attach_grad_fn(out, "linear", inputs, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor gx = x.requires_grad() ? Tensor::empty(x_saved.shape(), g.dtype()) : Tensor();
    Tensor gw = w.requires_grad() ? Tensor::empty(w_saved.shape(), g.dtype()) : Tensor();
    Tensor gbias = (b.defined() && b.requires_grad()) ? Tensor::zeros({d_out}, g.dtype()) : Tensor();
    dispatch(g.dtype(), [&]<typename T>() {
      const T* pg = g.data<T>().data();
      if (gx.defined()) {
        gemm<T>(false, true, rows, d_in, d_out, T(1), pg, d_out, w_saved.data<T>().data(), d_out, T(0),
                gx.data<T>().data(), d_in);
      }
      if (gw.defined()) {
        gemm<T>(true, false, d_in, d_out, rows, T(1), x_saved.data<T>().data(), d_in, pg, d_out, T(0),
                gw.data<T>().data(), d_out);
      }
      if (gbias.defined()) {
        T* pbias = gbias.data<T>().data();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < d_out; ++j) pbias[j] += pg[r * d_out + j];
        }
      }
    });
    std::vector<Tensor> grads{gx, gw};
    if (b.defined()) grads.push_back(gbias);
    return grads;
  });
  return out;
}

}  // namespace tfn
