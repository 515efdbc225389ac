#include "fleet/ablations.hpp"

#include <sstream>
#include <stdexcept>

namespace fleet {

ExperimentConfig raw_reward_variant(ExperimentConfig config) {
  if (config.method.name != "cA2C" && config.method.name != "cDQN")
    throw std::invalid_argument("raw_reward_variant applies to cA2C or cDQN");
  config.sim.reward_mode = "raw";
  if (config.method.label.empty()) config.method.label = config.method.name + "-raw";
  return config;
}

ExperimentConfig context_drop_variant(ExperimentConfig config, const std::string& drop) {
  if (config.method.name != "cA2C")
    throw std::invalid_argument("context_drop_variant applies to cA2C");
  if (drop != "collab" && drop != "collab+geo")
    throw std::invalid_argument("drop must be 'collab' or 'collab+geo'");
  config.method.context_drop = drop;
  if (config.method.label.empty())
    config.method.label = drop == "collab" ? "cA2C-v1" : "cA2C-v2";
  return config;
}

ExperimentConfig group_regularizer_variant(ExperimentConfig config, bool grouped) {
  if (config.method.name != "LP-cA2C")
    throw std::invalid_argument("group_regularizer_variant applies to LP-cA2C");
  config.method.lp_grouped = grouped;
  if (config.method.label.empty() && !grouped) config.method.label = "LP-cA2C-ungrouped";
  return config;
}

const std::vector<std::string>& ablation_presets() {
  static const std::vector<std::string> presets{"table5-reward", "table6-context",
                                                "table8-group-reg"};
  return presets;
}

namespace {

const ComparisonRow& row_of(const std::vector<ComparisonRow>& rows, const std::string& name) {
  for (const auto& r : rows)
    if (r.method == name) return r;
  throw std::logic_error("missing comparison row: " + name);
}

}  // namespace

AblationReport run_ablation_preset(const std::string& preset, const ExperimentConfig& base) {
  AblationReport report;
  report.preset = preset;

  ExperimentConfig sim = base;
  sim.method = MethodConfig{};
  sim.method.name = "Simulation";
  ExperimentConfig variant_base = base;
  variant_base.method.label.clear();

  std::ostringstream summary;
  if (preset == "table5-reward") {
    if (base.method.name != "cA2C" && base.method.name != "cDQN") {
      variant_base.method = base.method;
      variant_base.method.name = "cA2C";
    }
    const ExperimentConfig raw = raw_reward_variant(variant_base);
    report.rows = compare_configs({sim, variant_base, raw});
    const auto& avg = row_of(report.rows, variant_base.method.display_name());
    const auto& rawr = row_of(report.rows, raw.method.display_name());
    report.direction_holds = avg.norm_gmv_mean >= rawr.norm_gmv_mean;
    summary << "averaged " << avg.norm_gmv_mean << " vs raw " << rawr.norm_gmv_mean;
  } else if (preset == "table6-context") {
    variant_base.method.name = "cA2C";
    variant_base.method.context_drop = "none";
    const ExperimentConfig v1 = context_drop_variant(variant_base, "collab");
    const ExperimentConfig v2 = context_drop_variant(variant_base, "collab+geo");
    report.rows = compare_configs({sim, variant_base, v1, v2});
    const auto& full = row_of(report.rows, "cA2C");
    const auto& nov1 = row_of(report.rows, "cA2C-v1");
    report.direction_holds = full.repositions_mean < nov1.repositions_mean;
    summary << "repositions full " << full.repositions_mean << " vs no-collab "
            << nov1.repositions_mean;
  } else if (preset == "table8-group-reg") {
    variant_base.method.name = "LP-cA2C";
    const ExperimentConfig grouped = group_regularizer_variant(variant_base, true);
    ExperimentConfig ungrouped_base = variant_base;
    const ExperimentConfig ungrouped = group_regularizer_variant(ungrouped_base, false);
    report.rows = compare_configs({sim, grouped, ungrouped});
    const auto& g = row_of(report.rows, "LP-cA2C");
    const auto& u = row_of(report.rows, "LP-cA2C-ungrouped");
    report.direction_holds =
        g.repositions_mean <= u.repositions_mean && g.norm_gmv_mean >= u.norm_gmv_mean;
    summary << "grouped " << g.repositions_mean << " moves / " << g.norm_gmv_mean
            << " gmv vs ungrouped " << u.repositions_mean << " / " << u.norm_gmv_mean;
  } else {
    std::string msg = "unknown ablation preset '" + preset + "'; presets:";
    for (const auto& p : ablation_presets()) msg += " " + p;
    throw std::invalid_argument(msg);
  }
  report.summary = summary.str();
  return report;
}

}  // namespace fleet
