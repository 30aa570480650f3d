#include "tfn/model.hpp"

#include <chrono>
#include <cmath>

namespace tfn {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

constexpr std::uint64_t kTrajSeed = 0x7472616a;
constexpr std::uint64_t kSamSeed = 0x73616d;
constexpr std::uint64_t kVamSeed = 0x76616d;
constexpr std::uint64_t kFusionSeed = 0x667573;

}  // namespace

const char* variant_name(Variant v) { return v == Variant::Full ? "full" : "small"; }

Variant parse_variant(const std::string& s) {
  if (s == "full") return Variant::Full;
  if (s == "small") return Variant::Small;
  throw std::invalid_argument("unknown variant '" + s + "' (expected full or small)");
}

Toggles scenario_toggles(int scenario) {
  Toggles t;
  switch (scenario) {
    case 0: break;
    case 1: t.attn_fusion = true; break;
    case 2: t.single_van = true; break;
    case 3: t.no_type_ids = true; break;
    case 4: t.no_speed = true; break;
    case 5: t.no_pred_sam = true; break;
    case 6: t.no_pred_vam = true; break;
    default:
      throw std::invalid_argument("unknown ablation scenario " + std::to_string(scenario) +
                                  "; valid ids are 1, 2, 3, 4, 5, 6");
  }
  return t;
}

std::string scenario_description(int scenario) {
  static const char* kNames[] = {"Base model",
                                 "Add self-attention across modalities before fusion",
                                 "Use a single VAN with combined past and predicted overlays",
                                 "Remove type IDs in SAM branch",
                                 "Remove vehicle speed from input modalities",
                                 "Remove trajectory prediction from SAM branch",
                                 "Remove trajectory prediction from VAM branch"};
  (void)scenario_toggles(scenario);
  return kNames[scenario];
}

ModelConfig ModelConfig::make(Variant v, const Toggles& t, std::int64_t image_size) {
  ModelConfig c;
  c.variant = v;
  c.toggles = t;
  c.image_size = image_size;
  c.trajpred = v == Variant::Full ? TrajPredictorConfig::full() : TrajPredictorConfig::small();
  c.sam = v == Variant::Full ? SamConfig::full() : SamConfig::small();
  c.van = v == Variant::Full ? VanConfig::b2() : VanConfig::b0();
  c.trajpred.m = c.m();
  c.sam.m = c.m();
  c.sam.type_ids = !t.no_type_ids;
  c.sam.use_prediction = !t.no_pred_sam;
  return c;
}

void ModelConfig::validate() const {
  trajpred.validate();
  sam.validate();
  van.validate_input(image_size);
  if (trajpred.m != m() || sam.m != m()) throw std::invalid_argument("feature width disagrees with the speed toggle");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"variant", variant_name(variant)},
          {"toggles",
           {{"attn_fusion", toggles.attn_fusion},
            {"single_van", toggles.single_van},
            {"no_type_ids", toggles.no_type_ids},
            {"no_speed", toggles.no_speed},
            {"no_pred_sam", toggles.no_pred_sam},
            {"no_pred_vam", toggles.no_pred_vam}}},
          {"image_size", image_size},
          {"trajpred",
           {{"enc_layers", trajpred.enc_layers},
            {"dec_layers", trajpred.dec_layers},
            {"heads", trajpred.heads},
            {"d_model", trajpred.d_model},
            {"ffn_dim", trajpred.ffn_dim},
            {"m", trajpred.m}}},
          {"sam",
           {{"layers", sam.layers},
            {"heads", sam.heads},
            {"d_model", sam.d_model},
            {"ffn_dim", sam.ffn_dim},
            {"m", sam.m},
            {"type_ids", sam.type_ids},
            {"use_prediction", sam.use_prediction}}},
          {"van", {{"dims", van.dims}, {"depths", van.depths}, {"mlp_ratios", van.mlp_ratios}}},
          {"image_norm", {{"mean", image_norm.mean}, {"std", image_norm.std}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  Toggles t;
  const auto& tj = j.at("toggles");
  t.attn_fusion = tj.at("attn_fusion");
  t.single_van = tj.at("single_van");
  t.no_type_ids = tj.at("no_type_ids");
  t.no_speed = tj.at("no_speed");
  t.no_pred_sam = tj.at("no_pred_sam");
  t.no_pred_vam = tj.at("no_pred_vam");
  ModelConfig c = make(parse_variant(j.at("variant")), t, j.at("image_size"));
  const auto& tp = j.at("trajpred");
  c.trajpred = {tp.at("enc_layers"), tp.at("dec_layers"), tp.at("heads"), tp.at("d_model"), tp.at("ffn_dim"),
                tp.at("m")};
  const auto& sj = j.at("sam");
  c.sam = {sj.at("layers"), sj.at("heads"), sj.at("d_model"), sj.at("ffn_dim"),
           sj.at("m"), sj.at("type_ids"), sj.at("use_prediction")};
  c.van.dims = j.at("van").at("dims");
  c.van.depths = j.at("van").at("depths");
  c.van.mlp_ratios = j.at("van").at("mlp_ratios");
  if (j.contains("image_norm")) {
    c.image_norm.mean = j.at("image_norm").at("mean");
    c.image_norm.std = j.at("image_norm").at("std");
  }
  c.validate();
  return c;
}

Vam::Vam(const VanConfig& cfg, int van_count, Rng& rng) {
  if (van_count < 1 || van_count > 2) throw std::invalid_argument("VAM holds one or two VAN instances");
  for (int i = 0; i < van_count; ++i) {
    Rng child = rng.split();
    vans_.push_back(&register_module("van" + std::to_string(i), std::make_unique<Van>(cfg, child)));
  }
  proj_ = &register_module("proj", std::make_unique<Linear>(van_count * cfg.num_classes, kEmbedDim, rng));
}

Tensor Vam::forward(const std::vector<Tensor>& images) const {
  if (images.size() != vans_.size()) {
    throw DimensionError("VAM expects " + std::to_string(vans_.size()) + " image batches, got " +
                         std::to_string(images.size()));
  }
  std::vector<Tensor> feats;
  for (std::size_t i = 0; i < vans_.size(); ++i) feats.push_back(vans_[i]->forward(images[i]));
  return project(feats.size() == 1 ? feats[0] : concat(feats, 1));
}

FusionHead::FusionHead(bool modality_attention, Rng& rng) : attention_(modality_attention) {
  const std::int64_t in = modality_attention ? 4 * kEmbedDim : 2 * kEmbedDim;
  fc1_ = &register_module("fc1", std::make_unique<Linear>(in, 2 * kEmbedDim, rng));
  fc2_ = &register_module("fc2", std::make_unique<Linear>(2 * kEmbedDim, kEmbedDim, rng));
  fc3_ = &register_module("fc3", std::make_unique<Linear>(kEmbedDim, 2, rng));
}

Tensor FusionHead::stack_modalities(const Tensor& sam_emb, const Tensor& vam_emb) {
  if (sam_emb.size(-1) != kEmbedDim || vam_emb.shape() != sam_emb.shape()) {
    throw DimensionError("fusion expects two [N,40] embeddings, got " + shape_str(sam_emb.shape()) + " and " +
                         shape_str(vam_emb.shape()));
  }
  return concat({unsqueeze(sam_emb, -2), unsqueeze(vam_emb, -2)}, -2);
}

Tensor FusionHead::modality_context(const Tensor& chi) { return scaled_dot_product_attention(chi, chi, chi); }

Tensor FusionHead::forward(const Tensor& sam_in, const Tensor& vam_in) const {
  Tensor sam_emb = sam_in.dim() == 1 ? unsqueeze(sam_in, 0) : sam_in;
  Tensor vam_emb = vam_in.dim() == 1 ? unsqueeze(vam_in, 0) : vam_in;
  Tensor x;
  if (attention_) {
    Tensor chi = stack_modalities(sam_emb, vam_emb);
    Tensor joined = concat({modality_context(chi), chi}, -1);
    x = reshape(joined, {joined.size(0), 4 * kEmbedDim});
  } else {
    if (sam_emb.size(-1) != kEmbedDim || vam_emb.shape() != sam_emb.shape()) {
      throw DimensionError("fusion expects two [N,40] embeddings, got " + shape_str(sam_emb.shape()) + " and " +
                           shape_str(vam_emb.shape()));
    }
    x = concat({sam_emb, vam_emb}, -1);
  }
  return fc3_->forward(gelu(fc2_->forward(gelu(fc1_->forward(x)))));
}

TrajFusionNet::TrajFusionNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng r_traj(seed ^ kTrajSeed);
  Rng r_sam(seed ^ kSamSeed);
  Rng r_vam(seed ^ kVamSeed);
  Rng r_fus(seed ^ kFusionSeed);
  trajpred_ = &register_module("trajpred", std::make_unique<TrajPredictor>(cfg_.trajpred, r_traj));
  sam_ = &register_module("sam", std::make_unique<SamEncoder>(cfg_.sam, r_sam));
  vam_ = &register_module("vam", std::make_unique<Vam>(cfg_.van, cfg_.van_count(), r_vam));
  fusion_ = &register_module("fusion", std::make_unique<FusionHead>(cfg_.toggles.attn_fusion, r_fus));
}

std::int64_t count_parameters(const Module& m) { return m.parameter_count(); }

std::int64_t count_parameters(const ModelConfig& cfg) {
  TrajFusionNet net(cfg, 0);
  return net.parameter_count();
}

Tensor rows_to_tensor(const Rows& rows, std::int64_t m) {
  Tensor t = Tensor::empty({static_cast<std::int64_t>(rows.size()), m});
  auto d = t.data<float>();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::int64_t j = 0; j < m; ++j) d[i * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] = static_cast<float>(rows[i][static_cast<std::size_t>(j)]);
  }
  return t;
}

Tensor normalize_past(const Sample& s, const NormStats& stats, std::int64_t m) {
  const Rows rows(s.observed.begin(), s.observed.end());
  return rows_to_tensor(offset_and_zscore(rows, stats), m);
}

std::vector<Box> boxes_from_prediction(const Tensor& pred, const Row& ref, const NormStats& stats) {
  const std::int64_t n = pred.size(-2);
  const std::int64_t m = pred.size(-1);
  if (m < 4) throw DimensionError("prediction needs at least 4 columns, got " + shape_str(pred.shape()));
  Rows norm(static_cast<std::size_t>(n));
  const auto v = pred.to_vector();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < 4; ++j) norm[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = v[static_cast<std::size_t>(i * m + j)];
  }
  const Rows px = denormalize_relative(norm, ref, stats);
  std::vector<Box> out;
  out.reserve(px.size());
  for (const auto& r : px) out.push_back({r[0], r[1], r[2], r[3]});
  return out;
}

std::vector<SceneImage> render_vam_inputs(const ModelConfig& cfg, const SceneImage& first, const SceneImage& last,
                                          const std::vector<Box>& obs, const std::vector<Box>& pred,
                                          const Palette& palette) {
  const bool show_pred = !cfg.toggles.no_pred_vam;
  if (cfg.van_count() == 1) {
    SceneImage img = last;
    render_overlay_inplace(img, obs, palette, 0);
    if (show_pred) render_overlay_inplace(img, pred, palette, kPastLen);
    return {img};
  }
  SceneImage a = render_overlay(first, obs, palette, 0);
  SceneImage b = show_pred ? render_overlay(last, pred, palette, kPastLen) : render_overlay(last, obs, palette, 0);
  return {a, b};
}

Tensor image_batch(const SceneImage& img, const ModelConfig& cfg) {
  const auto s = static_cast<int>(cfg.image_size);
  return unsqueeze(image_to_tensor(resize_bilinear(img, s, s), cfg.image_norm), 0);
}

CrossingPrediction prediction_from_logits(const Tensor& logits, std::int64_t row) {
  CrossingPrediction p;
  p.logits = {logits.at(row * 2), logits.at(row * 2 + 1)};
  const double mx = std::max(p.logits[0], p.logits[1]);
  const double e0 = std::exp(p.logits[0] - mx);
  const double e1 = std::exp(p.logits[1] - mx);
  p.probability = e1 / (e0 + e1);
  p.label = p.probability >= 0.5 ? 1 : 0;
  return p;
}

CrossingPrediction predict_crossing(const TrajFusionNet& net, const Sample& sample, const SceneImage& first,
                                    const SceneImage& last, const NormStats& stats, const Palette& palette,
                                    PipelineTrace* trace) {
  if (net.is_training()) throw std::logic_error("predict_crossing needs the model in inference mode");
  NoGradGuard no_grad;
  const ModelConfig& cfg = net.config();
  const auto t_start = Clock::now();
  double model_ms = 0.0;

  Tensor past = unsqueeze(normalize_past(sample, stats, cfg.m()), 0);
  auto t0 = Clock::now();
  Tensor pred = net.trajpred().forward(past);
  model_ms += ms_since(t0);

  const auto obs = sample.obs_boxes();
  const auto pred_boxes = boxes_from_prediction(pred, sample.observed[0], stats);
  auto overlays = render_vam_inputs(cfg, first, last, obs, pred_boxes, palette);
  std::vector<Tensor> batches;
  for (const auto& img : overlays) batches.push_back(image_batch(img, cfg));

  t0 = Clock::now();
  Tensor sam_emb = net.sam().forward(past, pred);
  Tensor vam_emb = net.vam().forward(batches);
  Tensor logits = net.fusion().forward(sam_emb, vam_emb);
  model_ms += ms_since(t0);

  const auto p = prediction_from_logits(logits);
  if (trace) {
    trace->model_ms = model_ms;
    trace->total_ms = ms_since(t_start);
    if (trace->keep_images) trace->vam_inputs = std::move(overlays);
  }
  return p;
}

}  // namespace tfn
