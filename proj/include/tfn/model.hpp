#pragma once

#include <array>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfn/data.hpp"
#include "tfn/image.hpp"
#include "tfn/sam.hpp"
#include "tfn/trajpred.hpp"
#include "tfn/van.hpp"

namespace tfn {

enum class Variant : std::uint8_t { Full, Small };
const char* variant_name(Variant v);
Variant parse_variant(const std::string& s);

/// Ablation switches. Scenario ids 1-6 each turn on exactly one of them.
struct Toggles {
  bool attn_fusion = false;  // 1: modality self-attention before the dense stack
  bool single_van = false;   // 2: one VAN on the last frame with both overlays
  bool no_type_ids = false;  // 3: SAM tokens without the 0/1 type column
  bool no_speed = false;     // 4: drop ego speed, m = 4 everywhere
  bool no_pred_sam = false;  // 5: SAM sees the observed rows only
  bool no_pred_vam = false;  // 6: overlays show observed boxes only

  bool operator==(const Toggles&) const = default;
};

Toggles scenario_toggles(int scenario);
std::string scenario_description(int scenario);
inline constexpr int kScenarioCount = 6;

struct ModelConfig {
  Variant variant = Variant::Full;
  Toggles toggles;
  TrajPredictorConfig trajpred;
  SamConfig sam;
  VanConfig van;
  std::int64_t image_size = 224;
  ImageNorm image_norm;

  static ModelConfig make(Variant v, const Toggles& t = {}, std::int64_t image_size = 224);
  std::int64_t m() const { return toggles.no_speed ? kFeatures - 1 : kFeatures; }
  int van_count() const { return variant == Variant::Small || toggles.single_van ? 1 : 2; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Two VAN instances (first and last frame) or one, concatenated and projected to 40.
class Vam : public Module {
 public:
  Vam(const VanConfig& cfg, int van_count, Rng& rng);
  int van_count() const { return static_cast<int>(vans_.size()); }
  Van& van(int i) { return *vans_[static_cast<std::size_t>(i)]; }
  const Van& van(int i) const { return *vans_[static_cast<std::size_t>(i)]; }
  /// Concatenated VAN outputs [N, van_count * 1000] -> [N, 40].
  Tensor project(const Tensor& features) const { return proj_->forward(features); }
  /// One image batch per VAN.
  Tensor forward(const std::vector<Tensor>& images) const;

 private:
  std::vector<Van*> vans_;
  Linear* proj_ = nullptr;
};

/// Late fusion: concat(sam, vam) -> 80 -> GELU -> 40 -> GELU -> 2. The
/// attention variant first stacks the embeddings as a 2x40 matrix, attends
/// over the two modality rows, concatenates context and input (2x80) and
/// flattens to 160 before the same dense stack.
class FusionHead : public Module {
 public:
  FusionHead(bool modality_attention, Rng& rng);
  Tensor forward(const Tensor& sam_emb, const Tensor& vam_emb) const;
  bool attention() const { return attention_; }

  /// [N,40] x2 -> chi [N,2,40]
  static Tensor stack_modalities(const Tensor& sam_emb, const Tensor& vam_emb);
  /// Unprojected scaled dot-product self-attention over the modality rows.
  static Tensor modality_context(const Tensor& chi);

 private:
  bool attention_;
  Linear* fc1_ = nullptr;
  Linear* fc2_ = nullptr;
  Linear* fc3_ = nullptr;
};

class TrajFusionNet : public Module {
 public:
  TrajFusionNet(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  TrajPredictor& trajpred() { return *trajpred_; }
  const TrajPredictor& trajpred() const { return *trajpred_; }
  SamEncoder& sam() { return *sam_; }
  const SamEncoder& sam() const { return *sam_; }
  Vam& vam() { return *vam_; }
  const Vam& vam() const { return *vam_; }
  FusionHead& fusion() { return *fusion_; }
  const FusionHead& fusion() const { return *fusion_; }

 private:
  ModelConfig cfg_;
  TrajPredictor* trajpred_ = nullptr;
  SamEncoder* sam_ = nullptr;
  Vam* vam_ = nullptr;
  FusionHead* fusion_ = nullptr;
};

std::int64_t count_parameters(const Module& m);
/// Builds the model described by `cfg` and counts its trainable scalars.
std::int64_t count_parameters(const ModelConfig& cfg);

/// Keeps the first m features of each row.
Tensor rows_to_tensor(const Rows& rows, std::int64_t m);
/// Observed rows of a sample, offset by the first row and z-scored: [15, m].
Tensor normalize_past(const Sample& s, const NormStats& stats, std::int64_t m);
/// Normalized prediction [60, m] back to pixel boxes relative to `ref`.
std::vector<Box> boxes_from_prediction(const Tensor& pred, const Row& ref, const NormStats& stats);

/// Overlay images fed to the VAN instances, at source resolution.
std::vector<SceneImage> render_vam_inputs(const ModelConfig& cfg, const SceneImage& first, const SceneImage& last,
                                          const std::vector<Box>& obs, const std::vector<Box>& pred,
                                          const Palette& palette);
/// Resizes to the model resolution and stacks into [1,3,S,S].
Tensor image_batch(const SceneImage& img, const ModelConfig& cfg);

struct CrossingPrediction {
  std::array<double, 2> logits{};
  double probability = 0.0;  // of crossing
  int label = 0;
};
CrossingPrediction prediction_from_logits(const Tensor& logits, std::int64_t row = 0);

struct PipelineTrace {
  double model_ms = 0.0;  // network forward segments only
  double total_ms = 0.0;  // preprocessing and forward
  std::vector<SceneImage> vam_inputs;  // filled when keep_images is set
  bool keep_images = false;
};

/// Full inference for one sample with pre-staged frames. The trajectory is
/// predicted once and shared by both branches.
CrossingPrediction predict_crossing(const TrajFusionNet& net, const Sample& sample, const SceneImage& first,
                                    const SceneImage& last, const NormStats& stats, const Palette& palette,
                                    PipelineTrace* trace = nullptr);

}  // namespace tfn
