#pragma once

#include "tfn/data.hpp"
#include "tfn/nn.hpp"

namespace tfn {

inline constexpr std::int64_t kEmbedDim = 40;  // width of each branch embedding

struct SamConfig {
  std::int64_t layers = 6;
  std::int64_t heads = 12;
  std::int64_t d_model = 128;
  std::int64_t ffn_dim = 1024;
  std::int64_t m = kFeatures;
  bool type_ids = true;       // append the 0/1 sequence type column
  bool use_prediction = true;  // false: encode the 15 observed rows only

  static SamConfig full() { return {}; }
  static SamConfig small() { return {2, 2, 128, 256, kFeatures, true, true}; }

  std::int64_t input_width() const { return use_prediction && type_ids ? m + 1 : m; }
  std::int64_t sequence_length() const { return use_prediction ? kSeqLen : kPastLen; }
  void validate() const;
};

/// [N,15,m] + [N,60,m] -> [N,75,m+1]; rows 0-14 get id 0, rows 15-74 get id 1.
Tensor append_type_ids(const Tensor& past, const Tensor& pred);

/// Encoder-only transformer over the observed and predicted trajectory,
/// mean-pooled over tokens and projected to a 40-d embedding.
class SamEncoder : public Module {
 public:
  SamEncoder(const SamConfig& cfg, Rng& rng);

  /// The token sequence fed to the embedding, according to the config.
  Tensor build_input(const Tensor& past, const Tensor& pred) const;
  /// Mean-pooled encoder output [N, d_model]. `pred` is ignored when the
  /// config does not use the prediction.
  Tensor pooled(const Tensor& past, const Tensor& pred) const;
  /// pooled -> [N, 40]
  Tensor project(const Tensor& pooled) const { return proj_->forward(pooled); }
  Tensor forward(const Tensor& past, const Tensor& pred) const { return project(pooled(past, pred)); }

  const SamConfig& config() const { return cfg_; }

 private:
  SamConfig cfg_;
  Linear* embed_ = nullptr;
  std::vector<EncoderLayer*> layers_;
  LayerNorm* norm_ = nullptr;
  Linear* proj_ = nullptr;
};

}  // namespace tfn
