#pragma once

#include <atomic>

#include "tfn/data.hpp"
#include "tfn/nn.hpp"

namespace tfn {

struct TrajPredictorConfig {
  std::int64_t enc_layers = 8;
  std::int64_t dec_layers = 8;
  std::int64_t heads = 4;
  std::int64_t d_model = 128;
  std::int64_t ffn_dim = 512;
  std::int64_t m = kFeatures;

  static TrajPredictorConfig full() { return {}; }
  static TrajPredictorConfig small() { return {2, 2, 2, 128, 256, kFeatures}; }
  void validate() const;
};

/// Non-autoregressive encoder-decoder transformer. The encoder sees the 15
/// observed rows; the decoder sees those rows followed by 60 zero rows and
/// all 75 outputs are projected back to feature space in a single pass.
class TrajPredictor : public Module {
 public:
  TrajPredictor(const TrajPredictorConfig& cfg, Rng& rng);

  /// [N, n, m] -> [N, n, d_model]: bias-free token projection plus sinusoidal positions.
  Tensor embed_encoder(const Tensor& seq) const;
  Tensor embed_decoder(const Tensor& seq) const;
  /// [N, 15, m] or [15, m] -> past rows followed by 60 zero rows.
  static Tensor build_decoder_input(const Tensor& past);
  /// [N, 15, m] -> [N, 60, m]. Throws on non-finite input.
  Tensor forward(const Tensor& past) const;

  const TrajPredictorConfig& config() const { return cfg_; }
  std::int64_t encoder_passes() const { return enc_passes_.load(); }
  std::int64_t decoder_passes() const { return dec_passes_.load(); }

 private:
  Tensor positions(std::int64_t n, DType dtype) const;

  TrajPredictorConfig cfg_;
  Linear* enc_embed_ = nullptr;
  Linear* dec_embed_ = nullptr;
  std::vector<EncoderLayer*> encoder_;
  LayerNorm* enc_norm_ = nullptr;
  std::vector<DecoderLayer*> decoder_;
  LayerNorm* dec_norm_ = nullptr;
  Linear* proj_ = nullptr;
  mutable std::atomic<std::int64_t> enc_passes_{0};
  mutable std::atomic<std::int64_t> dec_passes_{0};
};

/// Mean of squared differences over all entries; shapes must match.
Tensor traj_mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace tfn
