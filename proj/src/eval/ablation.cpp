#include "tfn/ablation.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tfn/eval.hpp"

namespace fs = std::filesystem;

namespace tfn {

std::vector<Stage> affected_stages(const Toggles& t) {
  std::vector<Stage> out;
  auto add = [&](std::initializer_list<Stage> stages) {
    for (Stage s : stages) {
      if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    }
  };
  if (t.no_speed) add({Stage::TrajPred, Stage::SamEncoder, Stage::VanFirst, Stage::VanSecond});
  if (t.no_type_ids || t.no_pred_sam) add({Stage::SamEncoder});
  if (t.single_van || t.no_pred_vam) add({Stage::VanFirst, Stage::VanSecond});
  add({Stage::Fusion});
  std::vector<Stage> ordered;
  for (Stage s : kStageOrder) {
    if (std::find(out.begin(), out.end(), s) != out.end()) ordered.push_back(s);
  }
  return ordered;
}

AblationResult run_ablation(int scenario, const TrainConfig& base_cfg, const Dataset& data,
                            const std::string& base_manifest_path, const std::string& out_dir) {
  const Toggles toggles = scenario_toggles(scenario);
  TrainConfig cfg = base_cfg;
  cfg.scenario = scenario;

  std::ifstream in(base_manifest_path);
  if (!in) throw IoError("cannot open base manifest " + base_manifest_path);
  const auto base = nlohmann::json::parse(in);
  const auto ckpt =
      load_checkpoint((fs::path(base_manifest_path).parent_path() / base.at("checkpoint").get<std::string>()).string());

  Trainer trainer(cfg, data, out_dir);
  const auto retrain = affected_stages(toggles);
  std::vector<Stage> keep;
  for (Stage s : trainer.stages()) {
    if (std::find(retrain.begin(), retrain.end(), s) == retrain.end()) keep.push_back(s);
  }
  trainer.adopt(ckpt, keep);

  AblationResult r;
  r.scenario = scenario;
  r.description = scenario_description(scenario);
  for (Stage s : trainer.stages()) {
    if (trainer.completed(s)) continue;
    trainer.train_stage(s);
    r.retrained.push_back(s);
  }
  r.test = evaluate_split(trainer.model(), data, Split::Test, data.stats, default_palette()).metrics;
  nlohmann::json retrained = nlohmann::json::array();
  for (Stage s : r.retrained) retrained.push_back(stage_name(s));
  r.manifest = trainer.save_manifest({{"test_metrics", r.test.to_json()},
                                      {"scenario_description", r.description},
                                      {"retrained_stages", retrained},
                                      {"base_manifest", fs::absolute(base_manifest_path).string()}});
  return r;
}

std::string ablation_csv(const MetricsReport& base, const std::vector<AblationResult>& rows) {
  std::ostringstream os;
  os.precision(6);
  auto auc = [](const MetricsReport& m) { return m.auc ? std::to_string(*m.auc) : std::string(); };
  os << "scenario,description,accuracy,auc,f1,precision,recall,accuracy_change\n";
  os << "0,\"base model\"," << base.accuracy << "," << auc(base) << "," << base.f1 << "," << base.precision << ","
     << base.recall << ",0\n";
  for (const auto& r : rows) {
    os << r.scenario << ",\"" << r.description << "\"," << r.test.accuracy << "," << auc(r.test) << "," << r.test.f1
       << "," << r.test.precision << "," << r.test.recall << "," << r.test.accuracy - base.accuracy << "\n";
  }
  return os.str();
}

}  // namespace tfn
