#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fleet/ordergen.hpp"
#include "fleet/simcore.hpp"

namespace fleet {

struct WorldConfig {
  int rows = 5;
  int cols = 5;
  std::vector<int> invalid;
  std::string map_file;  // overrides rows/cols/invalid when set
  GridWorld build() const;
};

struct DemandConfig {
  std::string kind = "parametric";  // parametric | replay
  double base_rate = 0.5;
  std::vector<HotspotRule> hotspots;
  double price_mean = 10.0;
  double price_spread = 4.0;
  std::vector<std::pair<int, double>> price_overrides;  // (grid, mean)
  std::vector<double> duration_pmf{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  // Destination distribution shared by all origins, proportional to
  // per-grid weights (default 1 on every valid grid).
  std::vector<std::pair<int, double>> destination_weights;
  bool deterministic = false;
  std::string replay_csv;
  DemandModel build(const GridWorld& world, int horizon) const;
};

struct SimSettings {
  int fleet = 200;
  double fleet_scale = 1.0;
  int horizon = 144;
  bool cost_enabled = false;
  double reposition_cost = 0.6;
  std::string reward_mode = "averaged";  // averaged | raw
  double online_rate = 0.0;
  double offline_rate = 0.0;
  double count_norm = 0.0;  // 0 = calibrate from the fit episodes
  std::vector<int> initial_placement;
  SimConfig build() const;
};

struct MethodConfig {
  std::string name = "Simulation";
  std::string label;  // display override for variants; defaults to name
  double gamma = 0.9;
  std::vector<int> hidden{128, 64, 32};
  int batch_size = 3000;
  int m1 = 4000;
  int m2 = 4000;
  double learning_rate = 1e-3;
  double eps_start = 0.5;
  double eps_end = 0.1;
  int eps_anneal_episodes = 15;
  double eval_eps = 0.1;
  uint64_t replay_capacity = 200000;
  double alpha = 0.1;  // tabular step size
  double lp_lambda = 1.0;
  bool lp_grouped = true;
  bool lp_true_demand = false;  // estimate o from the generator means
  std::string context_drop = "none";  // none | collab | collab+geo
  uint64_t net_seed = 7;

  std::string display_name() const { return label.empty() ? name : label; }
};

struct RunConfig {
  int replicates = 3;
  int train_episodes = 15;
  int eval_episodes = 10;
  int fit_episodes = 10;
  uint64_t train_seed = 1001;
  uint64_t eval_seed = 2002;
  uint64_t fit_seed = 3003;
  std::string out_dir;
  bool write_logs = false;
};

struct ExperimentConfig {
  WorldConfig world;
  DemandConfig demand;
  SimSettings sim;
  MethodConfig method;
  RunConfig run;

  void validate() const;
  // Hash of everything that defines the scenario dynamics (world, demand,
  // sim settings, episode seeds); methods sharing it are comparable.
  std::string scenario_hash() const;

  std::string to_json_text() const;
  static ExperimentConfig from_json_text(const std::string& text);
  void save(const std::string& path) const;
  static ExperimentConfig load(const std::string& path);
};

const std::vector<std::string>& method_registry();

struct EpisodeRow {
  std::string method;
  int replicate = 0;
  std::string phase;  // train | eval
  int episode = 0;
  uint64_t env_seed = 0;
  double gmv = 0.0;
  double orr = 0.0;
  long long served = 0;
  long long generated = 0;
  long long repositions = 0;
  std::string scenario;
};

struct AggregateRow {
  std::string method;
  std::string scenario;
  int replicates = 0;
  double gmv_mean = 0.0;
  double gmv_std = 0.0;
  double orr_mean = 0.0;
  double orr_std = 0.0;
  double repositions_mean = 0.0;  // per eval episode
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<EpisodeRow> rows;
  AggregateRow aggregate;
  // per-replicate eval totals for paired comparisons
  std::vector<double> gmv_by_replicate;
  std::vector<double> orr_by_replicate;
  std::vector<double> repositions_by_replicate;  // mean per episode
};

// Trains (when the method learns) and evaluates one config; writes
// episodes.csv / aggregate.csv (and checkpoints) under run.out_dir when it
// is nonempty. Honors FLEETSIM_WORKERS for replicate-level parallelism.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Training half only: fits the mean tables, trains every replicate, and
// writes artifacts + train-phase rows under run.out_dir (required).
void train_only(const ExperimentConfig& config);

// Evaluation half: restores per-replicate artifacts written by train_only
// or run_experiment and evaluates them on the eval seeds.
ExperimentResult evaluate_trained(const ExperimentConfig& config,
                                  const std::string& artifacts_dir);

struct ComparisonRow {
  std::string method;
  double norm_gmv_mean = 0.0;  // Simulation = 100
  double norm_gmv_std = 0.0;
  double orr_mean = 0.0;
  double repositions_mean = 0.0;
  std::optional<double> roi;
};

// Runs the base scenario once per method name (Simulation prepended when
// absent) and tabulates normalized GMV against the Simulation baseline,
// paired by seed. Refuses configs whose scenario hashes differ.
std::vector<ComparisonRow> compare(const ExperimentConfig& base,
                                   const std::vector<std::string>& methods);

// As compare(), but over fully-specified configs (method variants).
std::vector<ComparisonRow> compare_configs(const std::vector<ExperimentConfig>& configs);

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& scenario,
                          const std::string& path);

// Pinned scenarios.
ExperimentConfig desk_scenario();  // 5x5, T=144, two alternating hotspots
ExperimentConfig tiny_scenario();  // small fast scenario for tests

}  // namespace fleet
