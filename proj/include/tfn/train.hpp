#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfn/checkpoint.hpp"
#include "tfn/dataset.hpp"
#include "tfn/metrics.hpp"
#include "tfn/model.hpp"
#include "tfn/optim.hpp"

namespace tfn {

enum class Stage : std::uint8_t { TrajPred, SamEncoder, VanFirst, VanSecond, Fusion };
inline constexpr std::array<Stage, 5> kStageOrder{Stage::TrajPred, Stage::SamEncoder, Stage::VanFirst,
                                                  Stage::VanSecond, Stage::Fusion};
const char* stage_name(Stage s);
/// Accepts the stage names and the short forms sam, van1, van2.
Stage parse_stage(const std::string& s);
std::string stage_order_text();

enum class LossKind : std::uint8_t { Mse, WeightedCe };

/// Optimisation settings of one stage, without the model-dependent parts.
struct StageHyper {
  double peak_lr = 0.0;
  int epochs = 1;
  int batch_size = 16;
};

struct StageSpec {
  Stage stage = Stage::TrajPred;
  double peak_lr = 0.0;
  int epochs = 1;
  int batch_size = 16;
  LossKind loss = LossKind::Mse;
  /// Parameters whose name starts with one of these stay bitwise unchanged.
  std::vector<std::string> frozen_prefixes;
  /// Learning rate of the VAM projection is held at 0 for epochs below this.
  int vam_proj_hold_epochs = 0;

  /// Defaults for the full two-VAN model.
  static StageSpec defaults(Stage s);
  static StageSpec make(Stage s, const StageHyper& h, const ModelConfig& cfg, int vam_proj_hold_epochs);
};

/// Prefixes a stage updates. Everything else is frozen.
std::vector<std::string> trainable_prefixes(Stage s);
std::vector<std::string> frozen_prefixes(Stage s, const ModelConfig& cfg);

/// Trainer configuration. Keys of the key=value file format:
///   preset            reference | desk (applied before the other keys)
///   variant           full | small
///   scenario          0 (base) or an ablation id 1-6
///   image_size        VAN input resolution, a multiple of 32
///   seed, deterministic
///   sample_stride     keep every k-th classification sample per track
///   traj_overlap      overlap of trajectory training windows in [0,1)
///   <stage>.lr, <stage>.epochs, <stage>.batch_size   for each stage name
///   fusion.vam_proj_hold_epochs
///   eval_batch_size
struct TrainConfig {
  std::string preset = "reference";
  Variant variant = Variant::Full;
  int scenario = 0;
  std::int64_t image_size = 224;
  std::uint64_t seed = 0;
  bool deterministic = false;
  int sample_stride = 1;
  double traj_overlap = 0.6;
  std::array<StageHyper, 5> stages{};
  int vam_proj_hold_epochs = 15;
  int eval_batch_size = 32;

  /// Hyperparameters of the original schedule.
  static TrainConfig reference();
  /// Reduced schedule for the synthetic desk-scale data: Small variant,
  /// 64-pixel VAN input, fewer epochs and larger learning rates.
  static TrainConfig desk();
  static TrainConfig from_preset(const std::string& name);

  void set(const std::string& key, const std::string& value);
  /// Applies every line of a key=value file. '#' starts a comment. With
  /// `skip_preset` a preset line is ignored so the current base is kept.
  void apply_file(const std::string& path, bool skip_preset = false);
  void apply_text(const std::string& text, const std::string& source = "<memory>", bool skip_preset = false);

  StageHyper& hyper(Stage s) { return stages[static_cast<std::size_t>(s)]; }
  const StageHyper& hyper(Stage s) const { return stages[static_cast<std::size_t>(s)]; }
  ModelConfig model_config() const;
  StageSpec stage_spec(Stage s) const;
  DatasetOptions dataset_options() const;
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Reads a config file: the preset line (if any) first, then every key in order.
TrainConfig load_train_config(const std::string& path);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;  // NaN for the regression stage
  double lr = 0.0;            // rate of the last step in the epoch
};

struct TrainingRunRecord {
  Stage stage = Stage::TrajPred;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  std::string checkpoint_hash;
  /// Rate used at every optimiser step.
  std::vector<double> lr_trace;
  LrSchedule schedule;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Called after each epoch with the stage, epoch index and the model.
using EpochHook = std::function<void(Stage, int, const TrajFusionNet&)>;

/// Runs the staged schedule on one model. Outputs of frozen stages are cached
/// per split so each stage only runs the modules it trains.
class Trainer {
 public:
  /// `out_dir` may be empty, in which case nothing is written.
  Trainer(TrainConfig cfg, const Dataset& data, std::string out_dir = "");
  ~Trainer();

  TrajFusionNet& model() { return *net_; }
  const TrajFusionNet& model() const { return *net_; }
  const TrainConfig& config() const { return cfg_; }
  /// Stages that apply to this model, in order.
  std::vector<Stage> stages() const;
  bool completed(Stage s) const { return done_.count(s) > 0; }
  double class_weight() const { return alpha_; }

  /// Trains one stage. Throws naming the stage order when an earlier stage
  /// has not run. Verifies afterwards that frozen parameters are unchanged.
  TrainingRunRecord train_stage(Stage s, const EpochHook& hook = {});
  /// Copies the weights of `stages` from a checkpoint and marks them done.
  void adopt(const Checkpoint& ckpt, const std::vector<Stage>& stages);
  /// Restores a trainer from a manifest written by save_manifest.
  void resume(const nlohmann::json& manifest, const std::string& manifest_dir);

  /// Writes model.ckpt and manifest.json under the output directory.
  nlohmann::json save_manifest(const nlohmann::json& extra = nlohmann::json::object());
  nlohmann::json manifest_json() const;

 private:
  struct Caches;
  void require_prerequisites(Stage s) const;
  void drop_caches_after(Stage s);

  TrainConfig cfg_;
  const Dataset& data_;
  std::string out_dir_;
  std::unique_ptr<TrajFusionNet> net_;
  std::unique_ptr<Caches> caches_;
  std::set<Stage> done_;
  std::map<Stage, TrainingRunRecord> records_;
  double alpha_ = 0.5;
};

struct TrainAllResult {
  nlohmann::json manifest;
  std::vector<TrainingRunRecord> records;
  MetricsReport test;
};

/// Runs every stage in order, evaluates on the test split and writes the
/// manifest. A failing stage aborts; artifacts of finished stages remain.
TrainAllResult train_all(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir,
                         const EpochHook& hook = {});

/// Model, statistics and palette restored from a manifest.
struct LoadedModel {
  std::unique_ptr<TrajFusionNet> net;
  NormStats stats;
  nlohmann::json manifest;
};
LoadedModel load_model(const std::string& manifest_path);

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kModelCheckpoint = "model.ckpt";

}  // namespace tfn
