#pragma once

#include <string>
#include <vector>

#include "fleet/harness.hpp"

namespace fleet {

// Switches the per-grid reward from arrival-averaged to the raw grid total.
// Only the reward key changes. Method must be cA2C or cDQN.
ExperimentConfig raw_reward_variant(ExperimentConfig config);

// Removes the collaborative mask ("collab") or both masks ("collab+geo")
// from the policy's probability computation; execution still converts
// off-map moves to stay. Only the context key changes. Method must be cA2C.
ExperimentConfig context_drop_variant(ExperimentConfig config, const std::string& drop);

// Switches the reallocation program between the neighborhood-aggregated
// regularizer and the per-grid one. Method must be LP-cA2C.
ExperimentConfig group_regularizer_variant(ExperimentConfig config, bool grouped);

struct AblationReport {
  std::string preset;
  std::vector<ComparisonRow> rows;
  bool direction_holds = false;
  std::string summary;
};

// Presets: table5-reward, table6-context, table8-group-reg.
const std::vector<std::string>& ablation_presets();
AblationReport run_ablation_preset(const std::string& preset, const ExperimentConfig& base);

}  // namespace fleet
