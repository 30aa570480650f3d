#include "tfn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "tfn/blas.hpp"
#include "tfn/checkpoint.hpp"
#include "tfn/eval.hpp"

namespace fs = std::filesystem;

namespace tfn {

// --- stages ------------------------------------------------------------------

const char* stage_name(Stage s) {
  switch (s) {
    case Stage::TrajPred: return "trajpred";
    case Stage::SamEncoder: return "sam_encoder";
    case Stage::VanFirst: return "van_first";
    case Stage::VanSecond: return "van_second";
    case Stage::Fusion: return "fusion";
  }
  return "?";
}

Stage parse_stage(const std::string& s) {
  if (s == "trajpred") return Stage::TrajPred;
  if (s == "sam_encoder" || s == "sam") return Stage::SamEncoder;
  if (s == "van_first" || s == "van1") return Stage::VanFirst;
  if (s == "van_second" || s == "van2") return Stage::VanSecond;
  if (s == "fusion") return Stage::Fusion;
  throw std::invalid_argument("unknown stage '" + s + "' (expected trajpred, sam, van1, van2 or fusion)");
}

std::string stage_order_text() {
  std::string out;
  for (Stage s : kStageOrder) out += (out.empty() ? "" : " -> ") + std::string(stage_name(s));
  return out;
}

std::vector<std::string> trainable_prefixes(Stage s) {
  switch (s) {
    case Stage::TrajPred: return {"trajpred."};
    case Stage::SamEncoder: return {"sam.embed.", "sam.encoder.", "sam.norm."};
    case Stage::VanFirst: return {"vam.van0."};
    case Stage::VanSecond: return {"vam.van1."};
    case Stage::Fusion: return {"sam.proj.", "vam.proj.", "fusion."};
  }
  return {};
}

std::vector<std::string> frozen_prefixes(Stage s, const ModelConfig& cfg) {
  std::vector<std::string> all = {"trajpred.", "sam.embed.", "sam.encoder.", "sam.norm.", "sam.proj.", "vam.van0."};
  if (cfg.van_count() == 2) all.push_back("vam.van1.");
  all.insert(all.end(), {"vam.proj.", "fusion."});
  const auto keep = trainable_prefixes(s);
  std::vector<std::string> out;
  for (const auto& p : all) {
    if (std::find(keep.begin(), keep.end(), p) == keep.end()) out.push_back(p);
  }
  return out;
}

namespace {

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(), [&](const auto& p) { return name.rfind(p, 0) == 0; });
}

constexpr std::array<StageHyper, 5> kReferenceHyper{{{5e-5, 40, 64}, {5e-6, 60, 16}, {5e-5, 15, 16}, {5e-5, 15, 16},
                                                 {5e-6, 60, 16}}};

}  // namespace

StageSpec StageSpec::make(Stage s, const StageHyper& h, const ModelConfig& cfg, int hold) {
  StageSpec spec;
  spec.stage = s;
  spec.peak_lr = h.peak_lr;
  spec.epochs = h.epochs;
  spec.batch_size = h.batch_size;
  spec.loss = s == Stage::TrajPred ? LossKind::Mse : LossKind::WeightedCe;
  spec.frozen_prefixes = tfn::frozen_prefixes(s, cfg);
  spec.vam_proj_hold_epochs = s == Stage::Fusion ? hold : 0;
  return spec;
}

StageSpec StageSpec::defaults(Stage s) {
  return make(s, kReferenceHyper[static_cast<std::size_t>(s)], ModelConfig::make(Variant::Full), 15);
}

// --- configuration -----------------------------------------------------------

TrainConfig TrainConfig::reference() {
  TrainConfig c;
  c.preset = "reference";
  c.stages = kReferenceHyper;
  return c;
}

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.preset = "desk";
  c.variant = Variant::Small;
  c.image_size = 64;
  c.sample_stride = 4;
  c.traj_overlap = 0.8;
  c.stages = {{{1e-3, 12, 32}, {3e-4, 6, 32}, {1e-3, 2, 32}, {1e-3, 2, 32}, {2e-3, 24, 32}}};
  c.vam_proj_hold_epochs = 15;
  return c;
}

TrainConfig TrainConfig::from_preset(const std::string& name) {
  if (name == "reference") return reference();
  if (name == "desk") return desk();
  throw std::invalid_argument("unknown preset '" + name + "' (expected reference or desk)");
}

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  if (!is || !is.eof()) throw std::invalid_argument("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "no") return false;
  throw std::invalid_argument("config key '" + key + "': expected true or false, got '" + value + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "preset") {
    const TrainConfig base = from_preset(value);
    *this = base;
    return;
  }
  if (key == "variant") {
    variant = parse_variant(value);
  } else if (key == "scenario") {
    scenario = parse_number<int>(key, value);
    if (scenario != 0) (void)scenario_toggles(scenario);
  } else if (key == "image_size") {
    image_size = parse_number<std::int64_t>(key, value);
  } else if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "deterministic") {
    deterministic = parse_bool(key, value);
  } else if (key == "sample_stride") {
    sample_stride = parse_number<int>(key, value);
  } else if (key == "traj_overlap") {
    traj_overlap = parse_number<double>(key, value);
  } else if (key == "eval_batch_size") {
    eval_batch_size = parse_number<int>(key, value);
  } else if (key == "fusion.vam_proj_hold_epochs") {
    vam_proj_hold_epochs = parse_number<int>(key, value);
  } else {
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw std::invalid_argument("unknown config key '" + key + "'");
    Stage s;
    try {
      s = parse_stage(key.substr(0, dot));
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
    const std::string field = key.substr(dot + 1);
    StageHyper& h = hyper(s);
    if (field == "lr") {
      h.peak_lr = parse_number<double>(key, value);
    } else if (field == "epochs") {
      h.epochs = parse_number<int>(key, value);
    } else if (field == "batch_size") {
      h.batch_size = parse_number<int>(key, value);
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
}

void TrainConfig::apply_text(const std::string& text, const std::string& source, bool skip_preset) {
  std::istringstream in(text);
  std::vector<std::pair<std::string, std::string>> entries;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(line_no) + ": expected key=value");
    }
    entries.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  // a preset resets everything, so it goes first wherever it appears
  std::stable_partition(entries.begin(), entries.end(), [](const auto& e) { return e.first == "preset"; });
  for (const auto& [k, v] : entries) {
    if (skip_preset && k == "preset") continue;
    try {
      set(k, v);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ": " + e.what());
    }
  }
}

void TrainConfig::apply_file(const std::string& path, bool skip_preset) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  apply_text(ss.str(), path, skip_preset);
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig c = TrainConfig::reference();
  c.apply_file(path);
  return c;
}

ModelConfig TrainConfig::model_config() const {
  const Toggles t = scenario == 0 ? Toggles{} : scenario_toggles(scenario);
  return ModelConfig::make(variant, t, image_size);
}

StageSpec TrainConfig::stage_spec(Stage s) const {
  return StageSpec::make(s, hyper(s), model_config(), vam_proj_hold_epochs);
}

DatasetOptions TrainConfig::dataset_options() const {
  DatasetOptions o;
  o.classification.stride = sample_stride;
  o.trajectory.overlap = traj_overlap;
  return o;
}

void TrainConfig::validate() const {
  model_config().validate();
  if (sample_stride < 1) throw std::invalid_argument("sample_stride must be at least 1");
  if (!(traj_overlap >= 0.0 && traj_overlap < 1.0)) throw std::invalid_argument("traj_overlap must be in [0,1)");
  if (eval_batch_size < 1) throw std::invalid_argument("eval_batch_size must be at least 1");
  if (vam_proj_hold_epochs < 0) throw std::invalid_argument("fusion.vam_proj_hold_epochs must be non-negative");
  for (Stage s : kStageOrder) {
    const auto& h = hyper(s);
    if (!(h.peak_lr >= 0.0) || h.epochs < 1 || h.batch_size < 1) {
      throw std::invalid_argument(std::string("invalid hyperparameters for stage ") + stage_name(s));
    }
  }
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json st = nlohmann::json::object();
  for (Stage s : kStageOrder) {
    const auto& h = hyper(s);
    st[stage_name(s)] = {{"lr", h.peak_lr}, {"epochs", h.epochs}, {"batch_size", h.batch_size}};
  }
  return {{"preset", preset},
          {"variant", variant_name(variant)},
          {"scenario", scenario},
          {"image_size", image_size},
          {"seed", seed},
          {"deterministic", deterministic},
          {"sample_stride", sample_stride},
          {"traj_overlap", traj_overlap},
          {"eval_batch_size", eval_batch_size},
          {"vam_proj_hold_epochs", vam_proj_hold_epochs},
          {"stages", st}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c = from_preset(j.at("preset").get<std::string>());
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.scenario = j.at("scenario").get<int>();
  c.image_size = j.at("image_size").get<std::int64_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.deterministic = j.at("deterministic").get<bool>();
  c.sample_stride = j.at("sample_stride").get<int>();
  c.traj_overlap = j.at("traj_overlap").get<double>();
  c.eval_batch_size = j.at("eval_batch_size").get<int>();
  c.vam_proj_hold_epochs = j.at("vam_proj_hold_epochs").get<int>();
  for (Stage s : kStageOrder) {
    const auto& h = j.at("stages").at(stage_name(s));
    c.hyper(s) = {h.at("lr").get<double>(), h.at("epochs").get<int>(), h.at("batch_size").get<int>()};
  }
  c.validate();
  return c;
}

// --- records -----------------------------------------------------------------

nlohmann::json TrainingRunRecord::to_json() const {
  nlohmann::json ep = nlohmann::json::array();
  for (const auto& e : epochs) {
    ep.push_back({{"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"val_loss", e.val_loss},
                  {"val_accuracy", std::isnan(e.val_accuracy) ? nlohmann::json(nullptr) : nlohmann::json(e.val_accuracy)},
                  {"lr", e.lr}});
  }
  return {{"stage", stage_name(stage)},
          {"seed", seed},
          {"epochs", ep},
          {"best_epoch", best_epoch},
          {"checkpoint_hash", checkpoint_hash},
          {"steps", lr_trace.size()},
          {"warmup_steps", schedule.warmup_steps},
          {"peak_lr", schedule.peak_lr},
          {"seconds", seconds}};
}

// --- helpers -----------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

/// Dense layer pair used while pretraining a branch on the crossing label.
/// It is never registered in the model, so it cannot reach a checkpoint.
class TemporaryHead : public Module {
 public:
  TemporaryHead(std::int64_t in, Rng& rng) {
    fc1_ = &register_module("fc1", std::make_unique<Linear>(in, kEmbedDim, rng));
    fc2_ = &register_module("fc2", std::make_unique<Linear>(kEmbedDim, 2, rng));
  }
  Tensor forward(const Tensor& x) const { return fc2_->forward(gelu(fc1_->forward(x))); }

 private:
  Linear* fc1_ = nullptr;
  Linear* fc2_ = nullptr;
};

/// Probability of the crossing class from two logits per row.
Tensor crossing_probability(const Tensor& logits) {
  return reshape(slice(softmax(logits, -1), 1, 1, 1), {logits.size(0)});
}

/// Copies rows `idx` of a cached f32 tensor (first axis) into a new tensor.
Tensor gather(const Tensor& t, const std::vector<std::int64_t>& idx) {
  Shape shape = t.shape();
  const std::int64_t row = t.numel() / std::max<std::int64_t>(t.size(0), 1);
  shape[0] = static_cast<std::int64_t>(idx.size());
  Tensor out = Tensor::empty(shape, t.dtype());
  const auto src = t.data<float>();
  auto dst = out.data<float>();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(src.begin() + idx[i] * row, row, dst.begin() + static_cast<std::int64_t>(i) * row);
  }
  return out;
}

Tensor stack_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack_rows: nothing to stack");
  Shape shape = parts[0].shape();
  shape.insert(shape.begin(), static_cast<std::int64_t>(parts.size()));
  Tensor out = Tensor::empty(shape, DType::F32);
  auto dst = out.data<float>();
  std::size_t pos = 0;
  for (const auto& p : parts) {
    const auto src = p.data<float>();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(pos));
    pos += src.size();
  }
  return out;
}

std::vector<std::int64_t> range_indices(std::int64_t lo, std::int64_t hi) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(hi - lo));
  std::iota(v.begin(), v.end(), lo);
  return v;
}

Tensor labels_tensor(const std::vector<int>& labels, const std::vector<std::int64_t>& idx) {
  std::vector<double> v;
  v.reserve(idx.size());
  for (auto i : idx) v.push_back(labels[static_cast<std::size_t>(i)]);
  return Tensor::from(v, {static_cast<std::int64_t>(v.size())});
}

void copy_values(Tensor& dst, const Tensor& src) {
  auto d = dst.data<float>();
  const auto s = src.data<float>();
  std::copy(s.begin(), s.end(), d.begin());
}

std::uint64_t stage_seed(std::uint64_t seed, Stage s) {
  return seed ^ (0xA24BAED4963EE407ULL * (static_cast<std::uint64_t>(s) + 1));
}

/// Stage-independent description of one optimisation run.
struct Loop {
  const StageSpec* spec = nullptr;
  std::int64_t n_train = 0;
  std::vector<NamedTensor> params;    // optimised tensors
  std::vector<NamedTensor> snapshot;  // restored from the best epoch (params and buffers)
  std::vector<Module*> modules;       // switched to training mode for batches
  std::function<Tensor(const std::vector<std::int64_t>&)> batch_loss;
  std::function<std::pair<double, double>()> validate;  // loss, accuracy
};

TrainingRunRecord run_loop(Loop& loop, std::uint64_t seed, const TrajFusionNet& net, const EpochHook& hook,
                           const std::string& csv_path) {
  const StageSpec& spec = *loop.spec;
  TrainingRunRecord rec;
  rec.stage = spec.stage;
  rec.seed = seed;
  const auto t_start = Clock::now();
  const std::int64_t bs = spec.batch_size;
  const std::int64_t steps_per_epoch = (loop.n_train + bs - 1) / bs;
  rec.schedule = make_schedule(spec.peak_lr, steps_per_epoch * spec.epochs);
  Adam opt(loop.params);
  Rng rng(stage_seed(seed, spec.stage));

  std::ofstream csv;
  if (!csv_path.empty()) {
    csv.open(csv_path);
    csv << "epoch,split,loss,acc,lr\n";
    csv.precision(8);
  }

  double best = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_state;
  std::vector<std::int64_t> order = range_indices(0, loop.n_train);
  std::int64_t step = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    if (spec.vam_proj_hold_epochs > 0) opt.set_lr_scale("vam.proj.", epoch < spec.vam_proj_hold_epochs ? 0.0 : 1.0);
    for (std::int64_t i = loop.n_train - 1; i > 0; --i) {
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    }
    for (auto* m : loop.modules) m->train(true);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::int64_t b = 0; b < loop.n_train; b += bs) {
      const std::vector<std::int64_t> idx(order.begin() + b, order.begin() + std::min(loop.n_train, b + bs));
      opt.zero_grad();
      Tensor loss = loop.batch_loss(idx);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw std::runtime_error(std::string("stage ") + stage_name(spec.stage) + ": non-finite loss at epoch " +
                                 std::to_string(epoch));
      }
      loss.backward();
      lr = lr_at_step(rec.schedule, step++);
      opt.step(lr);
      rec.lr_trace.push_back(lr);
      loss_sum += lv * static_cast<double>(idx.size());
    }
    for (auto* m : loop.modules) m->train(false);
    EpochRecord e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(loop.n_train);
    e.lr = lr;
    std::tie(e.val_loss, e.val_accuracy) = loop.validate();
    rec.epochs.push_back(e);
    if (csv.is_open()) {
      csv << epoch << ",train," << e.train_loss << ",," << lr << "\n";
      csv << epoch << ",val," << e.val_loss << ",";
      if (!std::isnan(e.val_accuracy)) csv << e.val_accuracy;
      csv << "," << lr << "\n";
      csv.flush();
    }
    const double score = std::isfinite(e.val_loss) ? e.val_loss : e.train_loss;
    if (score < best) {
      best = score;
      rec.best_epoch = epoch;
      best_state.clear();
      for (const auto& nt : loop.snapshot) best_state.push_back(nt.tensor.clone());
    }
    if (hook) hook(spec.stage, epoch, net);
  }
  for (std::size_t i = 0; i < best_state.size(); ++i) copy_values(loop.snapshot[i].tensor, best_state[i]);
  rec.seconds = std::chrono::duration<double>(Clock::now() - t_start).count();
  return rec;
}

std::vector<NamedTensor> select(const std::vector<NamedTensor>& all, const std::vector<std::string>& prefixes) {
  std::vector<NamedTensor> out;
  for (const auto& nt : all) {
    if (has_prefix(nt.name, prefixes)) out.push_back(nt);
  }
  return out;
}

}  // namespace

// --- caches ------------------------------------------------------------------

struct SplitCache {
  std::vector<int> labels;
  Tensor past;  // [N,15,m] normalized observed rows
  Tensor pred;  // [N,60,m] predicted rows
  std::array<std::vector<SceneImage>, 2> images;  // overlay inputs at model resolution
  Tensor sam_pooled;  // [N,d_model]
  std::array<Tensor, 2> van_out;  // [N,1000] per VAN
};

struct Trainer::Caches {
  std::array<SplitCache, 3> split;
  bool preds = false;
  bool images = false;
  bool sam = false;
  std::array<bool, 2> van{};
};

namespace {

constexpr std::array<Split, 3> kSplits{Split::Train, Split::Val, Split::Test};

}  // namespace

Trainer::Trainer(TrainConfig cfg, const Dataset& data, std::string out_dir)
    : cfg_(std::move(cfg)), data_(data), out_dir_(std::move(out_dir)), caches_(std::make_unique<Caches>()) {
  cfg_.validate();
  if (cfg_.deterministic) set_blas_threads(1);
  net_ = std::make_unique<TrajFusionNet>(cfg_.model_config(), cfg_.seed);
  net_->train(false);
  std::vector<int> labels;
  for (const auto& s : data_.split(Split::Train)) labels.push_back(s.label);
  alpha_ = compute_class_weight(labels);
  if (!(alpha_ > 0.0 && alpha_ < 1.0)) {
    throw DataError("training split needs both classes (negative fraction " + std::to_string(alpha_) + ")");
  }
  if (!out_dir_.empty()) fs::create_directories(fs::path(out_dir_) / "logs");
}

Trainer::~Trainer() = default;

std::vector<Stage> Trainer::stages() const {
  std::vector<Stage> out;
  for (Stage s : kStageOrder) {
    if (s == Stage::VanSecond && net_->config().van_count() < 2) continue;
    out.push_back(s);
  }
  return out;
}

void Trainer::require_prerequisites(Stage s) const {
  const auto order = stages();
  const auto it = std::find(order.begin(), order.end(), s);
  if (it == order.end()) {
    throw std::invalid_argument(std::string("stage ") + stage_name(s) + " does not apply to the " +
                                variant_name(cfg_.variant) + " single-VAN configuration");
  }
  for (auto p = order.begin(); p != it; ++p) {
    if (!completed(*p)) {
      throw std::logic_error(std::string("stage ") + stage_name(s) + " requires stage " + stage_name(*p) +
                             " to be trained first (order: " + stage_order_text() + ")");
    }
  }
}

void Trainer::drop_caches_after(Stage s) {
  auto& c = *caches_;
  switch (s) {
    case Stage::TrajPred: c = Caches{}; break;
    case Stage::SamEncoder: c.sam = false; break;
    case Stage::VanFirst: c.van[0] = false; break;
    case Stage::VanSecond: c.van[1] = false; break;
    case Stage::Fusion: break;
  }
}

TrainingRunRecord Trainer::train_stage(Stage s, const EpochHook& hook) {
  require_prerequisites(s);
  const StageSpec spec = cfg_.stage_spec(s);
  TrajFusionNet& net = *net_;
  const ModelConfig& mc = net.config();
  const std::int64_t m = mc.m();
  const std::int64_t eval_bs = cfg_.eval_batch_size;
  auto& C = *caches_;
  const Palette& palette = default_palette();

  auto ensure_preds = [&] {
    if (C.preds) return;
    NoGradGuard ng;
    for (Split sp : kSplits) {
      auto& sc = C.split[static_cast<std::size_t>(sp)];
      const auto& samples = data_.split(sp);
      sc = SplitCache{};
      if (samples.empty()) continue;
      std::vector<Tensor> rows;
      for (const auto& smp : samples) {
        rows.push_back(normalize_past(smp, data_.stats, m));
        sc.labels.push_back(smp.label);
      }
      sc.past = stack_rows(rows);
      std::vector<Tensor> preds;
      for (std::int64_t b = 0; b < sc.past.size(0); b += eval_bs) {
        const auto idx = range_indices(b, std::min(sc.past.size(0), b + eval_bs));
        const Tensor out = net.trajpred().forward(gather(sc.past, idx));
        for (std::int64_t i = 0; i < out.size(0); ++i) preds.push_back(reshape(slice(out, 0, i, 1), {kPredLen, m}));
      }
      sc.pred = stack_rows(preds);
    }
    C.preds = true;
  };

  auto ensure_images = [&] {
    ensure_preds();
    if (C.images) return;
    const int size = static_cast<int>(mc.image_size);
    for (Split sp : kSplits) {
      auto& sc = C.split[static_cast<std::size_t>(sp)];
      const auto& samples = data_.split(sp);
      for (auto& v : sc.images) v.clear();
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& smp = samples[i];
        const Tensor pred = reshape(slice(sc.pred, 0, static_cast<std::int64_t>(i), 1), {kPredLen, m});
        const auto boxes = boxes_from_prediction(pred, smp.observed[0], data_.stats);
        const auto overlays = render_vam_inputs(mc, data_.frames->frame(smp.video, smp.frame_first),
                                                data_.frames->frame(smp.video, smp.frame_t), smp.obs_boxes(), boxes,
                                                palette);
        for (std::size_t v = 0; v < overlays.size(); ++v) sc.images[v].push_back(resize_bilinear(overlays[v], size, size));
      }
    }
    C.images = true;
  };

  auto image_tensor = [&](const SplitCache& sc, int v, const std::vector<std::int64_t>& idx) {
    std::vector<Tensor> parts;
    for (auto i : idx) parts.push_back(image_to_tensor(sc.images[static_cast<std::size_t>(v)][static_cast<std::size_t>(i)], mc.image_norm));
    return stack_rows(parts);
  };

  auto ensure_sam = [&] {
    ensure_preds();
    if (C.sam) return;
    NoGradGuard ng;
    for (Split sp : kSplits) {
      auto& sc = C.split[static_cast<std::size_t>(sp)];
      if (sc.labels.empty()) continue;
      std::vector<Tensor> rows;
      for (std::int64_t b = 0; b < sc.past.size(0); b += eval_bs) {
        const auto idx = range_indices(b, std::min(sc.past.size(0), b + eval_bs));
        const Tensor out = net.sam().pooled(gather(sc.past, idx), gather(sc.pred, idx));
        for (std::int64_t i = 0; i < out.size(0); ++i) rows.push_back(reshape(slice(out, 0, i, 1), {out.size(1)}));
      }
      sc.sam_pooled = stack_rows(rows);
    }
    C.sam = true;
  };

  auto ensure_van = [&](int v) {
    ensure_images();
    if (C.van[static_cast<std::size_t>(v)]) return;
    NoGradGuard ng;
    for (Split sp : kSplits) {
      auto& sc = C.split[static_cast<std::size_t>(sp)];
      if (sc.labels.empty()) continue;
      std::vector<Tensor> rows;
      const auto n = static_cast<std::int64_t>(sc.labels.size());
      for (std::int64_t b = 0; b < n; b += eval_bs) {
        const auto idx = range_indices(b, std::min(n, b + eval_bs));
        const Tensor out = net.vam().van(v).forward(image_tensor(sc, v, idx));
        for (std::int64_t i = 0; i < out.size(0); ++i) rows.push_back(reshape(slice(out, 0, i, 1), {out.size(1)}));
      }
      sc.van_out[static_cast<std::size_t>(v)] = stack_rows(rows);
    }
    C.van[static_cast<std::size_t>(v)] = true;
  };

  // Weighted cross-entropy and accuracy over a cached split, in eval mode.
  auto classify_split = [&](Split sp, const std::function<Tensor(const SplitCache&, const std::vector<std::int64_t>&)>& logits_of) {
    const auto& sc = C.split[static_cast<std::size_t>(sp)];
    const auto n = static_cast<std::int64_t>(sc.labels.size());
    if (n == 0) return std::pair<double, double>{std::nan(""), std::nan("")};
    NoGradGuard ng;
    double loss = 0.0;
    std::int64_t correct = 0;
    for (std::int64_t b = 0; b < n; b += eval_bs) {
      const auto idx = range_indices(b, std::min(n, b + eval_bs));
      const Tensor p = crossing_probability(logits_of(sc, idx));
      loss += weighted_ce_loss(p, labels_tensor(sc.labels, idx), alpha_).item() * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) {
        correct += ((p.at(static_cast<std::int64_t>(i)) >= 0.5 ? 1 : 0) == sc.labels[static_cast<std::size_t>(idx[i])]);
      }
    }
    return std::pair<double, double>{loss / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
  };

  const auto all_named = module_state(net, "");
  const auto frozen = select(net.named_parameters(), spec.frozen_prefixes);
  const std::string frozen_before = state_digest(frozen);

  net.set_requires_grad(false);
  const auto trainable = select(net.named_parameters(), trainable_prefixes(s));
  for (const auto& nt : trainable) Tensor(nt.tensor).requires_grad_(true);

  Loop loop;
  loop.spec = &spec;
  loop.params = trainable;
  loop.snapshot = select(all_named, trainable_prefixes(s));
  Rng head_rng(stage_seed(cfg_.seed, s) ^ 0x5EEDULL);
  std::unique_ptr<TemporaryHead> head;
  auto add_head = [&](std::int64_t in) {
    head = std::make_unique<TemporaryHead>(in, head_rng);
    for (const auto& nt : head->named_parameters("head")) {
      loop.params.push_back(nt);
      loop.snapshot.push_back(nt);
    }
  };

  // Trajectory windows for the regression stage.
  std::array<Tensor, 3> win_x, win_y;

  switch (s) {
    case Stage::TrajPred: {
      for (Split sp : kSplits) {
        const auto& ws = data_.split_windows(sp);
        if (ws.empty()) continue;
        std::vector<Tensor> xs, ys;
        for (const auto& w : ws) {
          const Rows rows = offset_and_zscore(Rows(w.rows.begin(), w.rows.end()), data_.stats);
          const Tensor full = rows_to_tensor(rows, m);
          xs.push_back(slice(full, 0, 0, kPastLen).clone());
          ys.push_back(slice(full, 0, kPastLen, kPredLen).clone());
        }
        win_x[static_cast<std::size_t>(sp)] = stack_rows(xs);
        win_y[static_cast<std::size_t>(sp)] = stack_rows(ys);
      }
      const Tensor& X = win_x[0];
      const Tensor& Y = win_y[0];
      loop.n_train = X.size(0);
      loop.modules = {&net.trajpred()};
      loop.batch_loss = [&](const std::vector<std::int64_t>& idx) {
        return traj_mse_loss(net.trajpred().forward(gather(X, idx)), gather(Y, idx));
      };
      loop.validate = [&]() {
        const Tensor& VX = win_x[1];
        if (!VX.defined()) return std::pair<double, double>{std::nan(""), std::nan("")};
        NoGradGuard ng;
        double loss = 0.0;
        for (std::int64_t b = 0; b < VX.size(0); b += eval_bs) {
          const auto idx = range_indices(b, std::min(VX.size(0), b + eval_bs));
          loss += traj_mse_loss(net.trajpred().forward(gather(VX, idx)), gather(win_y[1], idx)).item() *
                  static_cast<double>(idx.size());
        }
        return std::pair<double, double>{loss / static_cast<double>(VX.size(0)), std::nan("")};
      };
      break;
    }
    case Stage::SamEncoder: {
      ensure_preds();
      add_head(mc.sam.d_model);
      auto logits = [&](const SplitCache& sc, const std::vector<std::int64_t>& idx) {
        return head->forward(net.sam().pooled(gather(sc.past, idx), gather(sc.pred, idx)));
      };
      loop.n_train = static_cast<std::int64_t>(C.split[0].labels.size());
      loop.modules = {&net.sam()};
      loop.batch_loss = [&, logits](const std::vector<std::int64_t>& idx) {
        const auto& sc = C.split[0];
        return weighted_ce_loss(crossing_probability(logits(sc, idx)), labels_tensor(sc.labels, idx), alpha_);
      };
      loop.validate = [&, logits]() { return classify_split(Split::Val, logits); };
      break;
    }
    case Stage::VanFirst:
    case Stage::VanSecond: {
      const int v = s == Stage::VanFirst ? 0 : 1;
      ensure_images();
      add_head(mc.van.num_classes);
      auto logits = [&, v](const SplitCache& sc, const std::vector<std::int64_t>& idx) {
        return head->forward(net.vam().van(v).forward(image_tensor(sc, v, idx)));
      };
      loop.n_train = static_cast<std::int64_t>(C.split[0].labels.size());
      loop.modules = {&net.vam().van(v)};
      loop.batch_loss = [&, logits](const std::vector<std::int64_t>& idx) {
        const auto& sc = C.split[0];
        return weighted_ce_loss(crossing_probability(logits(sc, idx)), labels_tensor(sc.labels, idx), alpha_);
      };
      loop.validate = [&, logits]() { return classify_split(Split::Val, logits); };
      break;
    }
    case Stage::Fusion: {
      ensure_sam();
      for (int v = 0; v < mc.van_count(); ++v) ensure_van(v);
      const int nv = mc.van_count();
      auto logits = [&, nv](const SplitCache& sc, const std::vector<std::int64_t>& idx) {
        std::vector<Tensor> feats;
        for (int v = 0; v < nv; ++v) feats.push_back(gather(sc.van_out[static_cast<std::size_t>(v)], idx));
        const Tensor vam_in = nv == 1 ? feats[0] : concat(feats, 1);
        return net.fusion().forward(net.sam().project(gather(sc.sam_pooled, idx)), net.vam().project(vam_in));
      };
      loop.n_train = static_cast<std::int64_t>(C.split[0].labels.size());
      loop.modules = {};
      loop.batch_loss = [&, logits](const std::vector<std::int64_t>& idx) {
        const auto& sc = C.split[0];
        return weighted_ce_loss(crossing_probability(logits(sc, idx)), labels_tensor(sc.labels, idx), alpha_);
      };
      loop.validate = [&, logits]() { return classify_split(Split::Val, logits); };
      break;
    }
  }
  if (loop.n_train == 0) throw DataError(std::string("stage ") + stage_name(s) + " has no training data");

  const std::string csv = out_dir_.empty() ? "" : (fs::path(out_dir_) / "logs" / (std::string(stage_name(s)) + ".csv")).string();
  TrainingRunRecord rec = run_loop(loop, cfg_.seed, net, hook, csv);
  net.set_requires_grad(false);
  net.train(false);

  if (state_digest(frozen) != frozen_before) {
    throw std::logic_error(std::string("stage ") + stage_name(s) + " modified frozen parameters");
  }
  const auto stage_state = select(module_state(net, ""), trainable_prefixes(s));
  rec.checkpoint_hash = state_digest(stage_state);
  if (!out_dir_.empty()) {
    fs::create_directories(fs::path(out_dir_) / "ckpt");
    save_checkpoint((fs::path(out_dir_) / "ckpt" / (std::string(stage_name(s)) + ".ckpt")).string(), stage_state,
                    {{"stage", stage_name(s)}});
  }
  done_.insert(s);
  records_[s] = rec;
  drop_caches_after(s);
  if (!out_dir_.empty()) save_manifest();
  return rec;
}

void Trainer::adopt(const Checkpoint& ckpt, const std::vector<Stage>& stages) {
  for (Stage s : stages) {
    const auto prefixes = trainable_prefixes(s);
    for (auto& nt : select(module_state(*net_, ""), prefixes)) {
      const auto it = ckpt.tensors.find(nt.name);
      if (it == ckpt.tensors.end()) throw std::invalid_argument("checkpoint lacks tensor " + nt.name);
      if (it->second.shape() != nt.tensor.shape()) {
        throw std::invalid_argument("checkpoint tensor " + nt.name + " has shape " + shape_str(it->second.shape()) +
                                    ", model expects " + shape_str(nt.tensor.shape()));
      }
      copy_values(nt.tensor, it->second.to(DType::F32));
    }
    done_.insert(s);
    drop_caches_after(s);
  }
}

nlohmann::json Trainer::manifest_json() const {
  nlohmann::json stages_json = nlohmann::json::object();
  nlohmann::json done = nlohmann::json::array();
  for (Stage s : stages()) {
    if (!completed(s)) continue;
    done.push_back(stage_name(s));
    nlohmann::json entry = {{"checkpoint", std::string("ckpt/") + stage_name(s) + ".ckpt"}};
    const auto it = records_.find(s);
    if (it != records_.end()) entry["record"] = it->second.to_json();
    stages_json[stage_name(s)] = entry;
  }
  return {{"format", "trajfusion-manifest-1"},
          {"train_config", cfg_.to_json()},
          {"model_config", net_->config().to_json()},
          {"seed", cfg_.seed},
          {"norm_stats", to_json(data_.stats)},
          {"palette_hash", palette_hash(default_palette())},
          {"data_dir", data_.root},
          {"class_weight", alpha_},
          {"completed_stages", done},
          {"stages", stages_json},
          {"checkpoint", kModelCheckpoint}};
}

nlohmann::json Trainer::save_manifest(const nlohmann::json& extra) {
  nlohmann::json j = manifest_json();
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  if (out_dir_.empty()) return j;
  const fs::path dir(out_dir_);
  save_checkpoint((dir / kModelCheckpoint).string(), module_state(*net_, ""), {{"manifest", kManifestFile}});
  j["checkpoint_digest"] = file_digest((dir / kModelCheckpoint).string());
  std::ofstream out(dir / kManifestFile);
  out << j.dump(2) << "\n";
  return j;
}

void Trainer::resume(const nlohmann::json& manifest, const std::string& manifest_dir) {
  const ModelConfig mc = ModelConfig::from_json(manifest.at("model_config"));
  if (mc.to_json() != net_->config().to_json()) {
    throw std::invalid_argument("manifest model configuration differs from the requested configuration");
  }
  const NormStats saved = norm_stats_from_json(manifest.at("norm_stats"));
  if (saved.mean != data_.stats.mean || saved.std != data_.stats.std) {
    throw DataError("dataset normalization differs from the one recorded in the manifest");
  }
  const auto ckpt = load_checkpoint((fs::path(manifest_dir) / manifest.at("checkpoint").get<std::string>()).string());
  load_module(*net_, ckpt, "");
  done_.clear();
  for (const auto& name : manifest.at("completed_stages")) done_.insert(parse_stage(name.get<std::string>()));
  *caches_ = Caches{};
}

TrainAllResult train_all(const TrainConfig& cfg, const Dataset& data, const std::string& out_dir,
                         const EpochHook& hook) {
  Trainer trainer(cfg, data, out_dir);
  TrainAllResult result;
  for (Stage s : trainer.stages()) result.records.push_back(trainer.train_stage(s, hook));
  const Evaluation ev = evaluate_split(trainer.model(), data, Split::Test, data.stats, default_palette());
  result.test = ev.metrics;
  const auto traj = evaluate_trajectory(trainer.model().trajpred(), data.split_windows(Split::Test), data.stats);
  result.manifest = trainer.save_manifest({{"test_metrics", ev.metrics.to_json()}, {"trajectory", traj.to_json()}});
  if (!out_dir.empty()) {
    std::ofstream csv(fs::path(out_dir) / "metrics.csv");
    csv << metrics_csv_header() << "\n" << metrics_csv_row("test", ev.metrics) << "\n";
  }
  return result;
}

LoadedModel load_model(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path);
  LoadedModel lm;
  try {
    lm.manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(manifest_path + ": " + e.what());
  }
  const auto hash = lm.manifest.value("palette_hash", "");
  if (hash != palette_hash(default_palette())) {
    throw DataError("manifest palette hash " + hash + " does not match the installed palette " +
                    palette_hash(default_palette()));
  }
  const ModelConfig mc = ModelConfig::from_json(lm.manifest.at("model_config"));
  lm.net = std::make_unique<TrajFusionNet>(mc, lm.manifest.value("seed", std::uint64_t{0}));
  const fs::path dir = fs::path(manifest_path).parent_path();
  load_module(*lm.net, load_checkpoint((dir / lm.manifest.at("checkpoint").get<std::string>()).string()), "");
  lm.net->train(false);
  lm.net->set_requires_grad(false);
  lm.stats = norm_stats_from_json(lm.manifest.at("norm_stats"));
  return lm;
}

}  // namespace tfn
