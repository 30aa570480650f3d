#include "tfn/van.hpp"

namespace tfn {

void VanConfig::validate_input(std::int64_t size) const {
  if (size <= 0 || size % kTotalStride != 0) {
    throw std::invalid_argument("VAN input resolution " + std::to_string(size) +
                                " is not divisible by the cumulative stride " + std::to_string(kTotalStride));
  }
}

LargeKernelAttention::LargeKernelAttention(std::int64_t c, Rng& rng) {
  conv0_ = &register_module("conv0", std::make_unique<Conv2d>(c, c, 5, Conv2dOptions{1, 2, 1, c}, rng));
  conv_spatial_ =
      &register_module("conv_spatial", std::make_unique<Conv2d>(c, c, 7, Conv2dOptions{1, 9, 3, c}, rng));
  conv1_ = &register_module("conv1", std::make_unique<Conv2d>(c, c, 1, Conv2dOptions{}, rng));
}

Tensor LargeKernelAttention::attention_map(const Tensor& x) const {
  return conv1_->forward(conv_spatial_->forward(conv0_->forward(x)));
}

void LargeKernelAttention::make_identity_gate() {
  for (Conv2d* c : {conv0_, conv_spatial_}) {
    Tensor w = c->weight;
    const auto k = w.size(2);
    for (std::int64_t i = 0; i < w.numel(); ++i) w.set(i, (i % (k * k)) == (k * k) / 2 ? 1.0 : 0.0);
    Tensor b = c->bias;
    for (std::int64_t i = 0; i < b.numel(); ++i) b.set(i, 0.0);
  }
  Tensor w = conv1_->weight;
  for (std::int64_t i = 0; i < w.numel(); ++i) w.set(i, 0.0);
  Tensor b = conv1_->bias;
  for (std::int64_t i = 0; i < b.numel(); ++i) b.set(i, 1.0);
}

VanBlock::VanBlock(std::int64_t dim, std::int64_t mlp_ratio, double ls_init, Rng& rng) {
  const std::int64_t hidden = dim * mlp_ratio;
  norm1_ = &register_module("norm1", std::make_unique<BatchNorm2d>(dim));
  proj1_ = &register_module("attn.proj1", std::make_unique<Conv2d>(dim, dim, 1, Conv2dOptions{}, rng));
  lka_ = &register_module("attn.lka", std::make_unique<LargeKernelAttention>(dim, rng));
  proj2_ = &register_module("attn.proj2", std::make_unique<Conv2d>(dim, dim, 1, Conv2dOptions{}, rng));
  ls1_ = &register_parameter("ls1", Tensor::full({dim, 1, 1}, ls_init));
  norm2_ = &register_module("norm2", std::make_unique<BatchNorm2d>(dim));
  fc1_ = &register_module("mlp.fc1", std::make_unique<Conv2d>(dim, hidden, 1, Conv2dOptions{}, rng));
  dw_ = &register_module("mlp.dw", std::make_unique<Conv2d>(hidden, hidden, 3, Conv2dOptions{1, 1, 1, hidden}, rng));
  fc2_ = &register_module("mlp.fc2", std::make_unique<Conv2d>(hidden, dim, 1, Conv2dOptions{}, rng));
  ls2_ = &register_parameter("ls2", Tensor::full({dim, 1, 1}, ls_init));
}

Tensor VanBlock::forward(const Tensor& x) const {
  Tensor h = norm1_->forward(x);
  Tensor a = add(proj2_->forward(lka_->forward(gelu(proj1_->forward(h)))), h);
  Tensor y = add(x, mul(*ls1_, a));
  Tensor m = fc2_->forward(gelu(dw_->forward(fc1_->forward(norm2_->forward(y)))));
  return add(y, mul(*ls2_, m));
}

Tensor channel_layer_norm(const Tensor& x, const LayerNorm& ln) {
  return permute(ln.forward(permute(x, {0, 2, 3, 1})), {0, 3, 1, 2});
}

Van::Van(const VanConfig& cfg, Rng& rng) : cfg_(cfg) {
  for (std::size_t s = 0; s < 4; ++s) {
    const std::int64_t c_in = s == 0 ? cfg.in_channels : cfg.dims[s - 1];
    const std::int64_t k = s == 0 ? 7 : 3;
    const Conv2dOptions opt{s == 0 ? 4 : 2, k / 2, 1, 1};
    const std::string p = "stage" + std::to_string(s);
    patch_conv_[s] = &register_module(p + ".patch.conv", std::make_unique<Conv2d>(c_in, cfg.dims[s], k, opt, rng));
    patch_norm_[s] = &register_module(p + ".patch.norm", std::make_unique<BatchNorm2d>(cfg.dims[s]));
    for (std::int64_t b = 0; b < cfg.depths[s]; ++b) {
      blocks_[s].push_back(&register_module(
          p + ".block" + std::to_string(b),
          std::make_unique<VanBlock>(cfg.dims[s], cfg.mlp_ratios[s], cfg.layer_scale_init, rng)));
    }
    stage_norm_[s] = &register_module(p + ".norm", std::make_unique<LayerNorm>(cfg.dims[s], 1e-6));
  }
  head_ = &register_module("head", std::make_unique<Linear>(cfg.dims[3], cfg.num_classes, rng));
}

Tensor Van::features(const Tensor& images) const {
  if (images.dim() != 4 || images.size(1) != cfg_.in_channels) {
    throw DimensionError("VAN expects [N," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                         shape_str(images.shape()));
  }
  if (images.size(2) % VanConfig::kTotalStride != 0 || images.size(3) % VanConfig::kTotalStride != 0) {
    cfg_.validate_input(images.size(2) % VanConfig::kTotalStride != 0 ? images.size(2) : images.size(3));
  }
  Tensor x = images;
  for (std::size_t s = 0; s < 4; ++s) {
    x = patch_norm_[s]->forward(patch_conv_[s]->forward(x));
    for (const auto* b : blocks_[s]) x = b->forward(x);
    x = channel_layer_norm(x, *stage_norm_[s]);
  }
  return mean(reshape(x, {x.size(0), x.size(1), -1}), 2);
}

Tensor Van::forward(const Tensor& images) const { return head_->forward(features(images)); }

}  // namespace tfn
