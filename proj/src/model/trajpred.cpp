#include "tfn/trajpred.hpp"

#include <cmath>

namespace tfn {

void TrajPredictorConfig::validate() const {
  if (enc_layers < 1 || dec_layers < 1) throw std::invalid_argument("trajectory predictor needs at least one layer");
  if (heads < 1 || d_model % heads != 0) {
    throw std::invalid_argument("trajectory predictor d_model " + std::to_string(d_model) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (m != kFeatures && m != kFeatures - 1) throw std::invalid_argument("feature width must be 4 or 5");
}

TrajPredictor::TrajPredictor(const TrajPredictorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const TransformerDims dims{cfg.d_model, cfg.heads, cfg.ffn_dim};
  enc_embed_ = &register_module("enc_embed", std::make_unique<Linear>(cfg.m, cfg.d_model, rng, false));
  dec_embed_ = &register_module("dec_embed", std::make_unique<Linear>(cfg.m, cfg.d_model, rng, false));
  for (std::int64_t i = 0; i < cfg.enc_layers; ++i) {
    encoder_.push_back(&register_module("encoder." + std::to_string(i), std::make_unique<EncoderLayer>(dims, rng)));
  }
  enc_norm_ = &register_module("enc_norm", std::make_unique<LayerNorm>(cfg.d_model));
  for (std::int64_t i = 0; i < cfg.dec_layers; ++i) {
    decoder_.push_back(&register_module("decoder." + std::to_string(i), std::make_unique<DecoderLayer>(dims, rng)));
  }
  dec_norm_ = &register_module("dec_norm", std::make_unique<LayerNorm>(cfg.d_model));
  proj_ = &register_module("proj", std::make_unique<Linear>(cfg.d_model, cfg.m, rng));
}

Tensor TrajPredictor::positions(std::int64_t n, DType dtype) const {
  return sinusoidal_positions(n, cfg_.d_model, dtype);
}

Tensor TrajPredictor::embed_encoder(const Tensor& seq) const {
  return add(enc_embed_->forward(seq), positions(seq.size(-2), enc_embed_->weight.dtype()));
}

Tensor TrajPredictor::embed_decoder(const Tensor& seq) const {
  return add(dec_embed_->forward(seq), positions(seq.size(-2), dec_embed_->weight.dtype()));
}

Tensor TrajPredictor::build_decoder_input(const Tensor& past) {
  const bool batched = past.dim() == 3;
  if ((past.dim() != 2 && !batched) || past.size(-2) != kPastLen) {
    throw DimensionError("decoder input expects past of shape [" + std::to_string(kPastLen) + ",m], got " +
                         shape_str(past.shape()));
  }
  Shape zshape = past.shape();
  zshape[zshape.size() - 2] = kPredLen;
  return concat({past, Tensor::zeros(zshape, past.dtype())}, -2);
}

Tensor TrajPredictor::forward(const Tensor& past_in) const {
  Tensor past = past_in.dim() == 2 ? unsqueeze(past_in, 0) : past_in;
  if (past.dim() != 3 || past.size(1) != kPastLen || past.size(2) != cfg_.m) {
    throw DimensionError("trajectory predictor expects [N," + std::to_string(kPastLen) + "," +
                         std::to_string(cfg_.m) + "], got " + shape_str(past_in.shape()));
  }
  for (double v : past.to_vector()) {
    if (!std::isfinite(v)) throw std::invalid_argument("trajectory predictor input contains non-finite values");
  }
  enc_passes_.fetch_add(1);
  Tensor memory = embed_encoder(past);
  for (const auto* layer : encoder_) memory = layer->forward(memory);
  memory = enc_norm_->forward(memory);

  dec_passes_.fetch_add(1);
  Tensor h = embed_decoder(build_decoder_input(past));
  for (const auto* layer : decoder_) h = layer->forward(h, memory);
  h = dec_norm_->forward(h);
  Tensor out = slice(proj_->forward(h), 1, kPastLen, kPredLen);
  return past_in.dim() == 2 ? reshape(out, {kPredLen, cfg_.m}) : out;
}

Tensor traj_mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse loss shape mismatch: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  return mse_loss(pred, target);
}

}  // namespace tfn
