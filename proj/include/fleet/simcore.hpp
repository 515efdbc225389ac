#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fleet/hexgrid.hpp"
#include "fleet/ordergen.hpp"
#include "fleet/rng.hpp"

namespace fleet {

enum class VehicleStatus { Available, OnService, Offline };

struct Vehicle {
  int id = 0;
  int location = 0;
  VehicleStatus status = VehicleStatus::Available;
  int busy_until = -1;  // tick at which an on-service vehicle frees up
  int dropoff = -1;     // location at busy_until
};

// Per-tick snapshot seen by policies. vehicle_count holds the agents left
// after pre-dispatch; order_count the orders generated this tick.
struct GlobalState {
  int t = 0;
  int horizon = 0;
  bool terminal = false;
  Eigen::VectorXd vehicle_count;
  Eigen::VectorXd order_count;

  int n_grids() const { return (int)vehicle_count.size(); }
  // [vehicle_count, order_count, time one-hot] / counts divided by count_norm.
  Eigen::VectorXd vector(double count_norm) const;
};

inline int state_dim(int n_grids, int horizon) { return 2 * n_grids + horizon; }
inline int agent_state_dim(int n_grids, int horizon) { return 3 * n_grids + horizon; }

// [state vector, one-hot(grid)] — the per-agent input.
Eigen::VectorXd agent_state_vector(const GlobalState& s, int grid, double count_norm);

enum class RewardMode { Averaged, Raw };

struct SimConfig {
  int fleet = 200;
  double fleet_scale = 1.0;
  int horizon = 144;
  bool cost_enabled = false;
  double reposition_cost = 0.6;
  RewardMode reward_mode = RewardMode::Averaged;
  double online_rate = 0.0;   // per offline vehicle per tick
  double offline_rate = 0.0;  // per available vehicle per tick
  double count_norm = 1.0;    // divisor for learner inputs
  std::vector<int> initial_placement;  // per-grid counts; empty = uniform random

  void validate(const GridWorld& world) const;
};

struct StepOutcome {
  // All realized quantities refer to the tick whose order assignment ran in
  // this call, i.e. the rewards earned by the previous call's actions.
  Eigen::VectorXd rewards;    // per-grid reward
  Eigen::VectorXd collected;  // order value collected per grid
  Eigen::VectorXi arrivals;   // available vehicles per grid at tick start
  double served_value = 0.0;
  double generated_value = 0.0;
  int served_orders = 0;
  int generated_orders = 0;
  int repositions = 0;
  GlobalState next_state;
  bool done = false;
};

struct TickRecord {
  int t = 0;
  Eigen::VectorXd vehicle_count;  // post pre-dispatch (agents per grid)
  Eigen::VectorXd order_count;
  Eigen::VectorXi arrivals;
  Eigen::VectorXd rewards;
  std::vector<std::vector<int>> actions_by_grid;  // directions of managed agents
  double served_value = 0.0;
  double generated_value = 0.0;
  int served_orders = 0;
  int generated_orders = 0;
  int repositions = 0;
};

struct EpisodeLog {
  int n_grids = 0;
  int horizon = 0;
  std::vector<TickRecord> ticks;

  std::string to_jsonl() const;
  static EpisodeLog from_jsonl(const std::string& text);
  void save(const std::string& path) const;
  static EpisodeLog load(const std::string& path);
};

struct EpisodeMetrics {
  double gmv = 0.0;
  double orr = 0.0;
  double served_value = 0.0;
  long long served_orders = 0;
  long long generated_orders = 0;
  long long repositions = 0;
  std::optional<double> roi;  // set when a baseline GMV is supplied
};

EpisodeMetrics metrics(const EpisodeLog& log, bool cost_enabled, double reposition_cost,
                       std::optional<double> baseline_gmv = std::nullopt);

struct AgentRef {
  int vehicle_id = 0;
  int grid = 0;
};

using JointAction = std::vector<int>;

struct MatchPair {
  int order_index = 0;
  int vehicle_id = 0;
  int vehicle_grid = 0;  // where the vehicle picks the order up
};

// Two-stage assignment: highest-price orders first, same-grid vehicles in
// stage 1, neighbor-grid vehicles (shuffled scan) in stage 2. Pure given
// the rng value; pre-dispatch and commit share one result.
struct MatchResult {
  std::vector<MatchPair> pairs;
  std::vector<std::vector<int>> leftover_by_grid;  // unmatched available vehicle ids
};

MatchResult two_stage_match(const GridWorld& world, const std::vector<Order>& orders,
                            const std::vector<std::vector<int>>& available_by_grid,
                            Rng rng);

// The environment. One tick runs: vehicle status updates, order generation,
// agent interaction (pre-dispatch counting + repositions), then the
// committed two-stage order assignment. Rewards realized by an assignment
// are the per-grid collected value averaged over the vehicles present at
// tick start, and pay the actions taken one tick earlier.
class Env {
 public:
  Env(GridWorld world, SimConfig config, DemandModel demand);

  const GridWorld& world() const { return world_; }
  const SimConfig& config() const { return config_; }
  const DemandModel& demand() const { return demand_; }

  GlobalState reset(uint64_t seed);
  StepOutcome step(const JointAction& joint_action, bool coerce_invalid_to_stay = false);

  const GlobalState& state() const { return state_; }
  const std::vector<AgentRef>& agents() const { return agents_; }
  Eigen::VectorXi pre_dispatch_counts() const;
  Eigen::VectorXi arrival_counts() const { return arrivals_; }
  const std::vector<Order>& pending_orders() const { return orders_; }
  const MatchResult& pending_match() const { return match_; }
  const std::vector<Vehicle>& vehicles() const { return vehicles_; }
  const EpisodeLog& log() const { return log_; }
  int fleet_size() const { return (int)vehicles_.size(); }
  bool done() const { return state_.terminal; }

 private:
  void status_updates();     // arrivals + online/offline for tick t_
  void generate_orders();    // orders for tick t_
  void run_pre_dispatch();   // virtual assignment -> agents_, state_
  std::vector<std::vector<int>> available_by_grid() const;

  GridWorld world_;
  SimConfig config_;
  DemandModel demand_;

  uint64_t seed_ = 0;
  int t_ = 0;
  std::vector<Vehicle> vehicles_;
  std::vector<Order> orders_;
  MatchResult match_;
  std::vector<AgentRef> agents_;
  Eigen::VectorXi arrivals_;
  GlobalState state_;
  EpisodeLog log_;
  bool started_ = false;
};

}  // namespace fleet
