#include "tfn/sam.hpp"

namespace tfn {

void SamConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("SAM needs at least one encoder layer");
  if (heads < 1 || d_model / heads < 1) throw std::invalid_argument("SAM heads do not fit d_model");
  if (m != kFeatures && m != kFeatures - 1) throw std::invalid_argument("feature width must be 4 or 5");
}

Tensor append_type_ids(const Tensor& past, const Tensor& pred) {
  const bool batched = past.dim() == 3;
  if (past.dim() != pred.dim() || past.size(-2) != kPastLen || pred.size(-2) != kPredLen ||
      past.size(-1) != pred.size(-1) || (batched && past.size(0) != pred.size(0))) {
    throw DimensionError("type ids need past [.,15,m] and prediction [.,60,m], got " + shape_str(past.shape()) +
                         " and " + shape_str(pred.shape()));
  }
  Shape ps = past.shape();
  ps.back() = 1;
  Shape qs = pred.shape();
  qs.back() = 1;
  Tensor a = concat({past, Tensor::zeros(ps, past.dtype())}, -1);
  Tensor b = concat({pred, Tensor::ones(qs, pred.dtype())}, -1);
  return concat({a, b}, -2);
}

SamEncoder::SamEncoder(const SamConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const TransformerDims dims{cfg.d_model, cfg.heads, cfg.ffn_dim};
  embed_ = &register_module("embed", std::make_unique<Linear>(cfg.input_width(), cfg.d_model, rng, false));
  for (std::int64_t i = 0; i < cfg.layers; ++i) {
    layers_.push_back(&register_module("encoder." + std::to_string(i), std::make_unique<EncoderLayer>(dims, rng)));
  }
  norm_ = &register_module("norm", std::make_unique<LayerNorm>(cfg.d_model));
  proj_ = &register_module("proj", std::make_unique<Linear>(cfg.d_model, kEmbedDim, rng));
}

Tensor SamEncoder::build_input(const Tensor& past, const Tensor& pred) const {
  if (!cfg_.use_prediction) return past;
  if (cfg_.type_ids) return append_type_ids(past, pred);
  return concat({past, pred}, -2);
}

Tensor SamEncoder::pooled(const Tensor& past_in, const Tensor& pred_in) const {
  Tensor past = past_in.dim() == 2 ? unsqueeze(past_in, 0) : past_in;
  Tensor pred = cfg_.use_prediction && pred_in.dim() == 2 ? unsqueeze(pred_in, 0) : pred_in;
  Tensor seq = build_input(past, pred);
  if (seq.size(-1) != cfg_.input_width() || seq.size(-2) != cfg_.sequence_length()) {
    throw DimensionError("SAM expects tokens [N," + std::to_string(cfg_.sequence_length()) + "," +
                         std::to_string(cfg_.input_width()) + "], got " + shape_str(seq.shape()));
  }
  Tensor h = add(embed_->forward(seq), sinusoidal_positions(seq.size(1), cfg_.d_model, embed_->weight.dtype()));
  for (const auto* layer : layers_) h = layer->forward(h);
  h = norm_->forward(h);
  return mean(h, 1);
}

}  // namespace tfn
