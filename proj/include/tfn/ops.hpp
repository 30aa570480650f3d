#pragma once

#include <optional>
#include <vector>

#include "tfn/tensor.hpp"

// Differentiable operators. Every op accepts F32 or F64 operands (both
// operands must share a dtype) and records a backward node when grad mode is
// on and an input requires grad.
namespace tfn {

// --- elementwise (numpy-style broadcasting) --------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// Exact form: x * Phi(x), Phi the standard normal CDF.
Tensor gelu(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }

Shape broadcast_shapes(const Shape& a, const Shape& b);
/// Sums `g` down to `shape` (inverse of broadcasting). No autograd.
Tensor sum_to(const Tensor& g, const Shape& shape);

// --- shape -----------------------------------------------------------------
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<std::int64_t>& dims);
Tensor transpose(const Tensor& a, std::int64_t d0, std::int64_t d1);
Tensor unsqueeze(const Tensor& a, std::int64_t axis);
/// Contiguous range [start, start+length) along `axis`.
Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t length);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);

// --- reductions ------------------------------------------------------------
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a, std::int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& a, std::int64_t axis, bool keepdim = false);

// --- linear algebra --------------------------------------------------------
/// a: [..., m, k]; b: [k, n] or [..., k, n] with the same leading extents.
Tensor matmul(const Tensor& a, const Tensor& b);
/// y = x W + b with x [..., d_in], W [d_in, d_out], b [d_out] (optional).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b = {});

// --- normalization / activation --------------------------------------------
Tensor softmax(const Tensor& a, std::int64_t axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  bool training = false;
  double momentum = 0.1;
  double eps = 1e-5;
};
/// x: [N, C, H, W]. Training mode normalizes with batch statistics and
/// updates the running buffers in place; inference mode uses them frozen.
Tensor batch_norm_2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, const BatchNormState& state);

// --- convolution -----------------------------------------------------------
struct Conv2dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
};
/// x: [N, C_in, H, W] or [C_in, H, W]; w: [C_out, C_in/groups, kh, kw].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dOptions& opt);
std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, const Conv2dOptions& opt);

// --- attention -------------------------------------------------------------
/// Q, K, V: [..., n, d]. `keep_mask` (optional, [n, n] or broadcastable to the
/// score shape) holds 1 where attention is allowed and 0 where it is blocked.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    const Tensor& keep_mask = {});
/// Same as above but also returns the attention weights (no autograd on them).
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& keep_mask,
                                    Tensor* weights_out);

// --- losses ----------------------------------------------------------------
/// Mean of squared differences over all entries.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
/// -(1/N) sum( alpha y log p + (1-alpha)(1-y) log(1-p) ), p clamped to [1e-7, 1-1e-7].
Tensor weighted_ce_loss(const Tensor& probs, const Tensor& labels, double alpha);
inline constexpr double kProbClamp = 1e-7;

// --- test support ----------------------------------------------------------
/// Identity forward; backward multiplies the incoming gradient by `factor`.
Tensor scale_backward(const Tensor& x, double factor);

}  // namespace tfn
