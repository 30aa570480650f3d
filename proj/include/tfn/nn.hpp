#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tfn/ops.hpp"
#include "tfn/random.hpp"
#include "tfn/tensor.hpp"

namespace tfn {

/// Owner of named parameters, buffers and child modules. Names compose with
/// '.', e.g. "encoder.layers.0.attn.q.weight".
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<NamedTensor> named_parameters(const std::string& prefix = "") const;
  std::vector<NamedTensor> named_buffers(const std::string& prefix = "") const;
  std::vector<Tensor> parameters() const;
  std::int64_t parameter_count() const;

  void to(DType dtype);
  void train(bool on = true);
  bool is_training() const { return training_; }
  void zero_grad();
  void set_requires_grad(bool on);

 protected:
  Tensor& register_parameter(const std::string& name, Tensor t);
  Tensor& register_buffer(const std::string& name, Tensor t);
  template <class M>
  M& register_module(const std::string& name, std::unique_ptr<M> m) {
    M& ref = *m;
    children_.emplace_back(name, std::move(m));
    return ref;
  }

 private:
  // deque-like stability: entries are never erased, and references handed
  // out by register_* point into unique_ptr-owned slots.
  std::vector<std::pair<std::string, std::unique_ptr<Tensor>>> params_;
  std::vector<std::pair<std::string, std::unique_ptr<Tensor>>> buffers_;
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> children_;
  bool training_ = true;
};

class Linear : public Module {
 public:
  Linear(std::int64_t d_in, std::int64_t d_out, Rng& rng, bool bias = true);
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  std::int64_t in_features() const { return weight.size(0); }
  std::int64_t out_features() const { return weight.size(1); }

  Tensor& weight;
  Tensor& bias;
};

class LayerNorm : public Module {
 public:
  explicit LayerNorm(std::int64_t d, double eps = 1e-5);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps_); }

  Tensor& gamma;
  Tensor& beta;

 private:
  double eps_;
};

class BatchNorm2d : public Module {
 public:
  explicit BatchNorm2d(std::int64_t c, double eps = 1e-5, double momentum = 0.1);
  Tensor forward(const Tensor& x) const;

  Tensor& gamma;
  Tensor& beta;
  Tensor& running_mean;
  Tensor& running_var;

 private:
  double eps_;
  double momentum_;
};

class Conv2d : public Module {
 public:
  Conv2d(std::int64_t c_in, std::int64_t c_out, std::int64_t kernel, const Conv2dOptions& opt, Rng& rng,
         bool bias = true);
  Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, opt_); }
  const Conv2dOptions& options() const { return opt_; }

  Tensor& weight;
  Tensor& bias;

 private:
  Conv2dOptions opt_;
};

/// Multi-head attention with per-head width floor(d_model / heads); the
/// concatenated heads (heads * head_dim wide) are projected back to d_model.
class MultiHeadAttention : public Module {
 public:
  MultiHeadAttention(std::int64_t d_model, std::int64_t heads, Rng& rng);
  /// query [N, Lq, d], key/value [N, Lk, d] -> [N, Lq, d]
  Tensor forward(const Tensor& query, const Tensor& key_value) const;
  std::int64_t heads() const { return heads_; }
  std::int64_t head_dim() const { return head_dim_; }

 private:
  std::int64_t heads_;
  std::int64_t head_dim_;
  Linear& q_;
  Linear& k_;
  Linear& v_;
  Linear& out_;
};

struct TransformerDims {
  std::int64_t d_model = 128;
  std::int64_t heads = 4;
  std::int64_t ffn_dim = 512;
};

/// Post-norm encoder layer: x = norm1(x + attn(x)); x = norm2(x + ffn(x)).
class EncoderLayer : public Module {
 public:
  EncoderLayer(const TransformerDims& dims, Rng& rng);
  Tensor forward(const Tensor& x) const;

 private:
  MultiHeadAttention& attn_;
  Linear& ffn1_;
  Linear& ffn2_;
  LayerNorm& norm1_;
  LayerNorm& norm2_;
};

/// Post-norm decoder layer with unmasked self-attention and cross-attention.
class DecoderLayer : public Module {
 public:
  DecoderLayer(const TransformerDims& dims, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& memory) const;

 private:
  MultiHeadAttention& self_attn_;
  MultiHeadAttention& cross_attn_;
  Linear& ffn1_;
  Linear& ffn2_;
  LayerNorm& norm1_;
  LayerNorm& norm2_;
  LayerNorm& norm3_;
};

/// Fixed sinusoidal encoding table [positions, d_model].
Tensor sinusoidal_positions(std::int64_t positions, std::int64_t d_model, DType dtype = DType::F32);

}  // namespace tfn
