#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "fleet/hexgrid.hpp"
#include "fleet/rng.hpp"
#include "fleet/simcore.hpp"

namespace fleet {

// Every available agent stays put.
JointAction simulation_policy(const std::vector<AgentRef>& agents);

// Each agent picks uniformly among its valid directions, stay included.
JointAction diffusion_policy(const GridWorld& world, const std::vector<AgentRef>& agents,
                             Rng& rng);

// Samples each agent's move from the value-proportional distribution over
// valid targets at t+1. All-zero values fall back to uniform; at the last
// tick everyone stays. Throws on negative table entries.
JointAction rule_based_policy(const GridWorld& world, const GlobalState& state,
                              const std::vector<AgentRef>& agents,
                              const Eigen::MatrixXd& v_rule, Rng& rng);

// Rule-based sampling from a live table, with moves toward lower-valued
// grids masked out; the table is refined by per-episode policy evaluation
// with 1/visit running averages.
class ValueIterLearner {
 public:
  ValueIterLearner(int horizon, int n_grids, double gamma);
  explicit ValueIterLearner(Eigen::MatrixXd initial, double gamma);

  JointAction act(const GridWorld& world, const GlobalState& state,
                  const std::vector<AgentRef>& agents, Rng& rng) const;
  // Ticks are processed in descending order so bootstrap targets use this
  // episode's later-tick updates.
  void update_from_episode(const GridWorld& world, const EpisodeLog& log);

  const Eigen::MatrixXd& table() const { return v_; }
  Eigen::MatrixXd& table() { return v_; }

 private:
  Eigen::MatrixXd v_;        // T x N
  Eigen::MatrixXi visits_;   // T x N
  double gamma_;
};

struct TabularTransition {
  int t = 0;
  int grid = 0;
  int action = 0;
  int dest = 0;
  double reward = 0.0;
  bool terminal = false;
};

// q[t](grid, direction); invalid directions are never selected and never
// enter bootstrap maxima.
class TabularQ {
 public:
  TabularQ(int horizon, int n_grids);

  double at(int t, int grid, int action) const { return q_[(size_t)t](grid, action); }
  double& at(int t, int grid, int action) { return q_[(size_t)t](grid, action); }
  int horizon() const { return (int)q_.size(); }
  int n_grids() const { return q_.empty() ? 0 : (int)q_.front().rows(); }

  int greedy_action(const GridWorld& world, int t, int grid) const;
  JointAction act_eps_greedy(const GridWorld& world, const GlobalState& state,
                             const std::vector<AgentRef>& agents, double epsilon,
                             Rng& rng) const;

  void q_update(const GridWorld& world, const TabularTransition& tr, double alpha, double gamma);
  void sarsa_update(const TabularTransition& tr, int next_action, double alpha, double gamma);

  void save_csv(const std::string& path) const;
  static TabularQ load_csv(const std::string& path, int horizon, int n_grids);

 private:
  std::vector<Eigen::MatrixXd> q_;
};

void save_value_table_csv(const Eigen::MatrixXd& table, const std::string& path);
Eigen::MatrixXd load_value_table_csv(const std::string& path, int horizon, int n_grids);

}  // namespace fleet
