#pragma once

#include <string>
#include <vector>

#include "tfn/train.hpp"

namespace tfn {

/// Stages whose inputs or shapes change under the toggles; the rest are
/// copied from the base model.
std::vector<Stage> affected_stages(const Toggles& t);

struct AblationResult {
  int scenario = 0;
  std::string description;
  std::vector<Stage> retrained;
  MetricsReport test;
  nlohmann::json manifest;
};

/// Retrains the affected stages of `base_cfg` under one scenario, starting
/// from the weights in the base manifest, and evaluates on the test split.
/// Artifacts go to `out_dir` when it is not empty.
AblationResult run_ablation(int scenario, const TrainConfig& base_cfg, const Dataset& data,
                            const std::string& base_manifest_path, const std::string& out_dir);

/// One row per scenario next to the base row, with the accuracy change.
std::string ablation_csv(const MetricsReport& base, const std::vector<AblationResult>& rows);

}  // namespace tfn
