#pragma once

#include <array>

#include "tfn/nn.hpp"

namespace tfn {

struct VanConfig {
  std::array<std::int64_t, 4> dims{64, 128, 320, 512};
  std::array<std::int64_t, 4> depths{3, 3, 12, 3};
  std::array<std::int64_t, 4> mlp_ratios{8, 8, 4, 4};
  std::int64_t in_channels = 3;
  std::int64_t num_classes = 1000;
  double layer_scale_init = 1e-2;

  static VanConfig b0() { return {{32, 64, 160, 256}, {3, 3, 5, 2}, {8, 8, 4, 4}, 3, 1000, 1e-2}; }
  static VanConfig b2() { return {}; }
  /// Cumulative downsampling factor of the four patch embeddings.
  static constexpr std::int64_t kTotalStride = 32;
  /// Throws if an input of `size` x `size` does not survive the stride hierarchy.
  void validate_input(std::int64_t size) const;
};

/// Large kernel attention: a gate computed by a 5x5 depthwise conv, a 7x7
/// depthwise conv with dilation 3 and a 1x1 conv, multiplied into the input.
class LargeKernelAttention : public Module {
 public:
  LargeKernelAttention(std::int64_t channels, Rng& rng);
  Tensor attention_map(const Tensor& x) const;
  Tensor forward(const Tensor& x) const { return mul(x, attention_map(x)); }
  /// Test hook: delta depthwise kernels and a 1x1 conv that outputs a constant
  /// 1, so the gate is all ones and forward(x) == x.
  void make_identity_gate();
  Conv2d& local() { return *conv0_; }
  Conv2d& dilated() { return *conv_spatial_; }
  Conv2d& pointwise() { return *conv1_; }

 private:
  Conv2d* conv0_ = nullptr;
  Conv2d* conv_spatial_ = nullptr;
  Conv2d* conv1_ = nullptr;
};

/// One VAN block: x += ls1 * attn(bn1(x)); x += ls2 * mlp(bn2(x)), where
/// attn = 1x1 -> GELU -> LKA -> 1x1 plus shortcut and mlp = 1x1 -> dw3x3 -> GELU -> 1x1.
class VanBlock : public Module {
 public:
  VanBlock(std::int64_t dim, std::int64_t mlp_ratio, double ls_init, Rng& rng);
  Tensor forward(const Tensor& x) const;
  LargeKernelAttention& lka() { return *lka_; }

 private:
  BatchNorm2d* norm1_ = nullptr;
  Conv2d* proj1_ = nullptr;
  LargeKernelAttention* lka_ = nullptr;
  Conv2d* proj2_ = nullptr;
  Tensor* ls1_ = nullptr;
  BatchNorm2d* norm2_ = nullptr;
  Conv2d* fc1_ = nullptr;
  Conv2d* dw_ = nullptr;
  Conv2d* fc2_ = nullptr;
  Tensor* ls2_ = nullptr;
};

class Van : public Module {
 public:
  Van(const VanConfig& cfg, Rng& rng);
  /// [N,3,H,W] -> [N, num_classes]
  Tensor forward(const Tensor& images) const;
  /// [N,3,H,W] -> globally pooled final-stage features [N, dims[3]]
  Tensor features(const Tensor& images) const;
  const VanConfig& config() const { return cfg_; }
  std::int64_t output_dim() const { return cfg_.num_classes; }

 private:
  VanConfig cfg_;
  std::array<Conv2d*, 4> patch_conv_{};
  std::array<BatchNorm2d*, 4> patch_norm_{};
  std::array<std::vector<VanBlock*>, 4> blocks_{};
  std::array<LayerNorm*, 4> stage_norm_{};
  Linear* head_ = nullptr;
};

/// Layer norm over the channel axis of an [N,C,H,W] tensor.
Tensor channel_layer_norm(const Tensor& x, const LayerNorm& ln);

}  // namespace tfn
