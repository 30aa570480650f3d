#include "tfn/nn.hpp"

#include <cmath>

namespace tfn {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor t = Tensor::empty(std::move(shape));
  for (auto& v : t.data<float>()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::empty(std::move(shape));
  for (auto& v : t.data<float>()) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

Tensor& Module::register_parameter(const std::string& name, Tensor t) {
  if (t.defined()) t.requires_grad_(true);
  params_.emplace_back(name, std::make_unique<Tensor>(std::move(t)));
  return *params_.back().second;
}

Tensor& Module::register_buffer(const std::string& name, Tensor t) {
  buffers_.emplace_back(name, std::make_unique<Tensor>(std::move(t)));
  return *buffers_.back().second;
}

std::vector<NamedTensor> Module::named_parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : params_) {
    if (t->defined()) out.push_back({join(prefix, name), *t});
  }
  for (const auto& [name, child] : children_) {
    auto sub = child->named_parameters(join(prefix, name));
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<NamedTensor> Module::named_buffers(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (const auto& [name, t] : buffers_) {
    if (t->defined()) out.push_back({join(prefix, name), *t});
  }
  for (const auto& [name, child] : children_) {
    auto sub = child->named_buffers(join(prefix, name));
    out.insert(out.end(), sub.begin(), sub.end());
  }
  return out;
}

std::vector<Tensor> Module::parameters() const {
  std::vector<Tensor> out;
  for (auto& p : named_parameters()) out.push_back(p.tensor);
  return out;
}

std::int64_t Module::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

void Module::to(DType dtype) {
  for (auto& p : named_parameters()) p.tensor.convert_(dtype);
  for (auto& b : named_buffers()) b.tensor.convert_(dtype);
}

void Module::train(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->train(on);
}

void Module::zero_grad() {
  for (auto& p : named_parameters()) p.tensor.zero_grad();
}

void Module::set_requires_grad(bool on) {
  for (auto& p : named_parameters()) p.tensor.requires_grad_(on);
}

Linear::Linear(std::int64_t d_in, std::int64_t d_out, Rng& rng, bool with_bias)
    : weight(register_parameter("weight", uniform_tensor({d_in, d_out}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng))),
      bias(register_parameter("bias", with_bias ? uniform_tensor({d_out}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng)
                                                : Tensor())) {}

LayerNorm::LayerNorm(std::int64_t d, double eps)
    : gamma(register_parameter("weight", Tensor::ones({d}))),
      beta(register_parameter("bias", Tensor::zeros({d}))),
      eps_(eps) {}

BatchNorm2d::BatchNorm2d(std::int64_t c, double eps, double momentum)
    : gamma(register_parameter("weight", Tensor::ones({c}))),
      beta(register_parameter("bias", Tensor::zeros({c}))),
      running_mean(register_buffer("running_mean", Tensor::zeros({c}))),
      running_var(register_buffer("running_var", Tensor::ones({c}))),
      eps_(eps),
      momentum_(momentum) {}

Tensor BatchNorm2d::forward(const Tensor& x) const {
  BatchNormState st;
  st.running_mean = running_mean;
  st.running_var = running_var;
  st.training = is_training();
  st.momentum = momentum_;
  st.eps = eps_;
  return batch_norm_2d(x, gamma, beta, st);
}

Conv2d::Conv2d(std::int64_t c_in, std::int64_t c_out, std::int64_t kernel, const Conv2dOptions& opt, Rng& rng,
               bool with_bias)
    : weight(register_parameter(
          "weight", normal_tensor({c_out, c_in / opt.groups, kernel, kernel},
                                  std::sqrt(2.0 / static_cast<double>(kernel * kernel * c_out / opt.groups)), rng))),
      bias(register_parameter("bias", with_bias ? Tensor::zeros({c_out}) : Tensor())),
      opt_(opt) {}

MultiHeadAttention::MultiHeadAttention(std::int64_t d_model, std::int64_t heads, Rng& rng)
    : heads_(heads),
      head_dim_(heads > 0 ? d_model / heads : 0),
      q_(register_module("q", std::make_unique<Linear>(d_model, heads * (d_model / heads), rng))),
      k_(register_module("k", std::make_unique<Linear>(d_model, heads * (d_model / heads), rng))),
      v_(register_module("v", std::make_unique<Linear>(d_model, heads * (d_model / heads), rng))),
      out_(register_module("out", std::make_unique<Linear>(heads * (d_model / heads), d_model, rng))) {
  if (heads < 1 || head_dim_ < 1) {
    throw std::invalid_argument("attention: " + std::to_string(heads) + " heads do not fit d_model " +
                                std::to_string(d_model));
  }
}

Tensor MultiHeadAttention::forward(const Tensor& query, const Tensor& key_value) const {
  const std::int64_t n = query.size(0);
  const std::int64_t lq = query.size(1);
  const std::int64_t lk = key_value.size(1);
  auto split_heads = [&](const Tensor& t, std::int64_t len) {
    return permute(reshape(t, {n, len, heads_, head_dim_}), {0, 2, 1, 3});
  };
  Tensor q = split_heads(q_.forward(query), lq);
  Tensor k = split_heads(k_.forward(key_value), lk);
  Tensor v = split_heads(v_.forward(key_value), lk);
  Tensor ctx = scaled_dot_product_attention(q, k, v);
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {n, lq, heads_ * head_dim_});
  return out_.forward(ctx);
}

EncoderLayer::EncoderLayer(const TransformerDims& d, Rng& rng)
    : attn_(register_module("attn", std::make_unique<MultiHeadAttention>(d.d_model, d.heads, rng))),
      ffn1_(register_module("ffn1", std::make_unique<Linear>(d.d_model, d.ffn_dim, rng))),
      ffn2_(register_module("ffn2", std::make_unique<Linear>(d.ffn_dim, d.d_model, rng))),
      norm1_(register_module("norm1", std::make_unique<LayerNorm>(d.d_model))),
      norm2_(register_module("norm2", std::make_unique<LayerNorm>(d.d_model))) {}

Tensor EncoderLayer::forward(const Tensor& x) const {
  Tensor h = norm1_.forward(add(x, attn_.forward(x, x)));
  return norm2_.forward(add(h, ffn2_.forward(gelu(ffn1_.forward(h)))));
}

DecoderLayer::DecoderLayer(const TransformerDims& d, Rng& rng)
    : self_attn_(register_module("self_attn", std::make_unique<MultiHeadAttention>(d.d_model, d.heads, rng))),
      cross_attn_(register_module("cross_attn", std::make_unique<MultiHeadAttention>(d.d_model, d.heads, rng))),
      ffn1_(register_module("ffn1", std::make_unique<Linear>(d.d_model, d.ffn_dim, rng))),
      ffn2_(register_module("ffn2", std::make_unique<Linear>(d.ffn_dim, d.d_model, rng))),
      norm1_(register_module("norm1", std::make_unique<LayerNorm>(d.d_model))),
      norm2_(register_module("norm2", std::make_unique<LayerNorm>(d.d_model))),
      norm3_(register_module("norm3", std::make_unique<LayerNorm>(d.d_model))) {}

Tensor DecoderLayer::forward(const Tensor& x, const Tensor& memory) const {
  Tensor h = norm1_.forward(add(x, self_attn_.forward(x, x)));
  h = norm2_.forward(add(h, cross_attn_.forward(h, memory)));
  return norm3_.forward(add(h, ffn2_.forward(gelu(ffn1_.forward(h)))));
}

Tensor sinusoidal_positions(std::int64_t positions, std::int64_t d_model, DType dtype) {
  Tensor pe = Tensor::empty({positions, d_model}, dtype);
  for (std::int64_t p = 0; p < positions; ++p) {
    for (std::int64_t i = 0; i < d_model; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i - (i % 2)) / static_cast<double>(d_model));
      const double angle = static_cast<double>(p) * freq;
      pe.set(p * d_model + i, (i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

}  // namespace tfn
