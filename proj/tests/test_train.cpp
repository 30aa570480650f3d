#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "tfn/checkpoint.hpp"
#include "tfn/train.hpp"

using namespace tfn;
namespace fs = std::filesystem;

namespace {

/// A few dozen synthetic tracks, enough for every stage to run in seconds.
const Dataset& tiny_data() {
  static const Dataset data = [] {
    SyntheticConfig sc;
    sc.n_tracks = 40;
    const auto tracks = generate_synthetic_tracks(sc, 11);
    auto frames = std::make_shared<SyntheticFrameSource>(tracks, sc, 11);
    DatasetOptions opts;
    opts.classification.stride = 8;
    opts.trajectory.overlap = 0.8;
    return make_dataset(tracks, frames, opts);
  }();
  return data;
}

TrainConfig tiny_config() {
  TrainConfig c = TrainConfig::desk();
  c.image_size = 32;
  c.seed = 5;
  c.deterministic = true;
  for (Stage s : kStageOrder) c.hyper(s) = {1e-3, 1, 16};
  c.vam_proj_hold_epochs = 2;
  c.hyper(Stage::Fusion).epochs = 3;
  return c;
}

std::map<std::string, std::vector<double>> snapshot(const TrajFusionNet& net) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& nt : net.named_parameters()) out[nt.name] = nt.tensor.to_vector();
  return out;
}

bool starts_with_any(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (name.rfind(p, 0) == 0) return true;
  }
  return false;
}

std::string tmp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tfn_test_train_" + name);
  fs::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("weighted cross-entropy: hand-computed values") {
  const Tensor p = Tensor::from({0.5}, {1}, DType::F64);
  const Tensor y = Tensor::from({1.0}, {1}, DType::F64);
  CHECK(std::abs(weighted_ce_loss(p, y, 0.7).item() - 0.7 * std::log(2.0)) < 1e-6);
  CHECK(std::abs(weighted_ce_loss(p, y, 0.7).item() - 0.4852) < 1e-4);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> pv, yv;
    double bce = 0.0;
    for (int i = 0; i < 17; ++i) {
      pv.push_back(rng.uniform(0.01, 0.99));
      yv.push_back(rng.uniform_int(0, 1));
      bce -= yv.back() * std::log(pv.back()) + (1.0 - yv.back()) * std::log(1.0 - pv.back());
    }
    bce /= 17.0;
    const double l = weighted_ce_loss(Tensor::from(pv, {17}, DType::F64), Tensor::from(yv, {17}, DType::F64), 0.5).item();
    CHECK(std::abs(l - 0.5 * bce) < 1e-9);
  }

  const Tensor perfect = Tensor::from({1.0, 0.0, 1.0}, {3}, DType::F64);
  CHECK(weighted_ce_loss(perfect, perfect, 0.3).item() <= 1.7e-6);
  CHECK_THROWS_AS(weighted_ce_loss(p, y, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(weighted_ce_loss(p, y, 1.0), std::invalid_argument);
}

TEST_CASE("mse loss: exact on constructed tensors") {
  const Tensor a = Tensor::from({1.0, 2.0, 3.0, 4.0}, {2, 2}, DType::F64);
  const Tensor b = Tensor::from({1.0, 0.0, 3.5, 8.0}, {2, 2}, DType::F64);
  CHECK(mse_loss(a, b).item() == (0.0 + 4.0 + 0.25 + 16.0) / 4.0);
}

TEST_CASE("stage specs: documented defaults") {
  const auto tp = StageSpec::defaults(Stage::TrajPred);
  CHECK(tp.peak_lr == 5e-5);
  CHECK(tp.epochs == 40);
  CHECK(tp.batch_size == 64);
  CHECK(tp.loss == LossKind::Mse);
  const auto sam = StageSpec::defaults(Stage::SamEncoder);
  CHECK(sam.peak_lr == 5e-6);
  CHECK(sam.epochs == 60);
  CHECK(sam.batch_size == 16);
  CHECK(sam.loss == LossKind::WeightedCe);
  for (Stage v : {Stage::VanFirst, Stage::VanSecond}) {
    const auto van = StageSpec::defaults(v);
    CHECK(van.peak_lr == 5e-5);
    CHECK(van.epochs == 15);
    CHECK(van.batch_size == 16);
    CHECK(van.loss == LossKind::WeightedCe);
  }
  const auto fu = StageSpec::defaults(Stage::Fusion);
  CHECK(fu.peak_lr == 5e-6);
  CHECK(fu.epochs == 60);
  CHECK(fu.batch_size == 16);
  CHECK(fu.vam_proj_hold_epochs == 15);
}

TEST_CASE("stage prefixes: trainable and frozen sets partition the model") {
  for (Variant v : {Variant::Full, Variant::Small}) {
    const ModelConfig cfg = ModelConfig::make(v, {}, 64);
    const TrajFusionNet net(cfg, 1);
    const auto params = net.named_parameters();
    for (Stage s : kStageOrder) {
      if (s == Stage::VanSecond && cfg.van_count() < 2) continue;
      const auto train = trainable_prefixes(s);
      const auto frozen = frozen_prefixes(s, cfg);
      for (const auto& p : train) {
        bool found = false;
        for (const auto& nt : params) found = found || nt.name.rfind(p, 0) == 0;
        CHECK_MESSAGE(found, p);
      }
      for (const auto& nt : params) {
        CHECK(starts_with_any(nt.name, train) != starts_with_any(nt.name, frozen));
      }
    }
  }
}

TEST_CASE("train config: key=value parsing") {
  TrainConfig c = TrainConfig::reference();
  c.apply_text("# comment\nseed = 9\nsam.lr=1e-4\npreset=desk\nvan1.epochs=3\nfusion.vam_proj_hold_epochs=4\n");
  CHECK(c.preset == "desk");
  CHECK(c.variant == Variant::Small);
  CHECK(c.seed == 9);
  CHECK(c.hyper(Stage::SamEncoder).peak_lr == 1e-4);
  CHECK(c.hyper(Stage::VanFirst).epochs == 3);
  CHECK(c.vam_proj_hold_epochs == 4);
  CHECK_THROWS_AS(c.apply_text("bogus=1"), std::invalid_argument);
  CHECK_THROWS_AS(c.apply_text("sam.momentum=1"), std::invalid_argument);
  CHECK_THROWS_AS(c.apply_text("seed=abc"), std::invalid_argument);
  CHECK_THROWS_AS(c.apply_text("scenario=9"), std::invalid_argument);
  CHECK_THROWS_AS(c.apply_text("no equals sign"), std::invalid_argument);
  CHECK(parse_stage("van2") == Stage::VanSecond);
  CHECK(parse_stage("sam") == Stage::SamEncoder);
  CHECK_THROWS(parse_stage("decoder"));

  const auto path = fs::temp_directory_path() / "tfn_test_train.cfg";
  std::ofstream(path) << "variant=full\nimage_size=96\n";
  const TrainConfig f = load_train_config(path.string());
  CHECK(f.variant == Variant::Full);
  CHECK(f.image_size == 96);
  CHECK(f.to_json().at("image_size") == 96);
  fs::remove(path);
}

TEST_CASE("train stage: missing prerequisite names the stage order") {
  Trainer t(tiny_config(), tiny_data());
  try {
    t.train_stage(Stage::SamEncoder);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    CHECK(msg.find(stage_order_text()) != std::string::npos);
    CHECK(msg.find("trajpred") != std::string::npos);
  }
  CHECK(t.stages().size() == 4);  // Small: a single VAN stage
  CHECK_THROWS(t.train_stage(Stage::VanSecond));
}

TEST_CASE("train stage: trajectory loss decreases over the first five epochs") {
  TrainConfig c = tiny_config();
  c.hyper(Stage::TrajPred) = {1e-3, 5, 16};
  Trainer t(c, tiny_data());
  const auto rec = t.train_stage(Stage::TrajPred);
  REQUIRE(rec.epochs.size() == 5);
  for (std::size_t i = 1; i < rec.epochs.size(); ++i) {
    CHECK_MESSAGE(rec.epochs[i].train_loss < rec.epochs[i - 1].train_loss, "epoch " << i);
  }
}

TEST_CASE("train stages: freezing, projection hold, schedule trace, checkpoints") {
  const std::string out = tmp_dir("pipeline");
  const TrainConfig cfg = tiny_config();
  Trainer t(cfg, tiny_data(), out);
  const ModelConfig mc = t.model().config();
  CHECK(t.class_weight() > 0.0);
  CHECK(t.class_weight() < 1.0);

  std::map<std::string, std::vector<double>> fusion_start;
  std::vector<bool> proj_changed;
  const EpochHook hook = [&](Stage s, int, const TrajFusionNet& net) {
    if (s != Stage::Fusion) return;
    bool changed = false;
    for (const auto& [name, v] : snapshot(net)) {
      if (name.rfind("vam.proj.", 0) == 0) changed = changed || v != fusion_start.at(name);
    }
    proj_changed.push_back(changed);
  };

  for (Stage s : t.stages()) {
    const auto before = snapshot(t.model());
    if (s == Stage::Fusion) fusion_start = before;
    const auto rec = t.train_stage(s, hook);
    const auto after = snapshot(t.model());
    const auto frozen = frozen_prefixes(s, mc);
    bool any_trainable_changed = false;
    for (const auto& [name, v] : after) {
      if (starts_with_any(name, frozen)) {
        CHECK_MESSAGE(v == before.at(name), stage_name(s) << " changed frozen " << name);
      } else {
        any_trainable_changed = any_trainable_changed || v != before.at(name);
      }
    }
    CHECK_MESSAGE(any_trainable_changed, stage_name(s));

    REQUIRE(!rec.lr_trace.empty());
    for (std::size_t i = 0; i < rec.lr_trace.size(); ++i) {
      CHECK(rec.lr_trace[i] == lr_at_step(rec.schedule, static_cast<std::int64_t>(i)));
    }
    for (const auto& e : rec.epochs) CHECK(std::isfinite(e.train_loss));
    CHECK(fs::exists(fs::path(out) / "logs" / (std::string(stage_name(s)) + ".csv")));
  }
  REQUIRE(proj_changed.size() == 3);
  CHECK_FALSE(proj_changed[0]);
  CHECK_FALSE(proj_changed[1]);
  CHECK(proj_changed[2]);

  std::ifstream log(fs::path(out) / "logs" / "fusion.csv");
  std::string header;
  std::getline(log, header);
  CHECK(header == "epoch,split,loss,acc,lr");

  // Saved checkpoints hold exactly the model state: no temporary heads.
  const auto state = module_state(t.model(), "");
  std::set<std::string> names;
  for (const auto& nt : state) names.insert(nt.name);
  const auto manifest = t.save_manifest();
  const auto full = load_checkpoint((fs::path(out) / kModelCheckpoint).string());
  CHECK(full.tensors.size() == names.size());
  for (const auto& [name, tensor] : full.tensors) CHECK_MESSAGE(names.count(name) == 1, name);
  for (Stage s : t.stages()) {
    const auto ck = load_checkpoint((fs::path(out) / "ckpt" / (std::string(stage_name(s)) + ".ckpt")).string());
    for (const auto& [name, tensor] : ck.tensors) {
      CHECK_MESSAGE(names.count(name) == 1, name);
      CHECK(starts_with_any(name, trainable_prefixes(s)));
    }
  }
  CHECK(manifest.at("completed_stages").size() == 4);

  // A reloaded manifest reproduces the trained weights.
  const auto loaded = load_model((fs::path(out) / kManifestFile).string());
  const auto a = snapshot(t.model());
  const auto b = snapshot(*loaded.net);
  CHECK(a == b);
  fs::remove_all(out);
}

TEST_CASE("train stages: same seed gives identical records") {
  TrainConfig c = tiny_config();
  c.hyper(Stage::TrajPred).epochs = 2;
  auto run = [&] {
    Trainer t(c, tiny_data());
    std::vector<double> losses;
    for (Stage s : {Stage::TrajPred, Stage::SamEncoder}) {
      for (const auto& e : t.train_stage(s).epochs) {
        losses.push_back(e.train_loss);
        losses.push_back(e.val_loss);
      }
    }
    return losses;
  };
  CHECK(run() == run());
}
