#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "fleet/hexgrid.hpp"
#include "fleet/rng.hpp"

namespace fleet {

struct Order {
  int origin = 0;
  int destination = 0;
  double price = 0.0;
  int duration = 1;  // ticks, >= 1
  int created_at = 0;
};

// Time-windowed demand surge over a set of grids.
struct HotspotRule {
  std::vector<int> grids;
  int tick_begin = 0;
  int tick_end = 0;  // half-open [begin, end)
  double multiplier = 1.0;
};

// Synthetic spatiotemporal demand: Poisson arrivals per (tick, grid) with
// hotspot multipliers, per-origin uniform prices, categorical durations,
// and a row-stochastic destination matrix. A replay table (explicit order
// list per tick) can stand in for the parametric sampler.
struct DemandModel {
  int n_grids = 0;
  int horizon = 0;
  Eigen::MatrixXd base_rate;          // T x N mean order counts
  std::vector<HotspotRule> hotspots;
  Eigen::VectorXd price_mean;         // per origin
  Eigen::VectorXd price_spread;       // price ~ U[mean-spread, mean+spread], clamped at 0
  std::vector<double> duration_pmf;   // durations 1..K
  Eigen::MatrixXd destination;        // N x N row-stochastic (rows of valid grids)
  bool deterministic = false;         // counts = round(rate) instead of Poisson

  bool is_replay = false;
  std::vector<std::vector<Order>> replay;  // per tick

  double rate(int t, int g) const;
  void validate(const GridWorld& world) const;

  // Uniform model: every valid grid gets base rate `rate`, destination
  // uniform over valid grids, shared price stats.
  static DemandModel uniform(const GridWorld& world, int horizon, double rate,
                             double price_mean, double price_spread,
                             std::vector<double> duration_pmf);
  // CSV rows: tick,grid,count,price,duration,dest
  static DemandModel replay_from_csv(const std::string& path, const GridWorld& world, int horizon);
  static DemandModel replay_from_orders(std::vector<std::vector<Order>> per_tick,
                                        const GridWorld& world, int horizon);
};

std::vector<Order> sample_orders(const DemandModel& model, int t, Rng& rng,
                                 const GridWorld& world);

struct EpisodeLog;  // simcore

// Per-(tick, grid) means over a set of episode logs: realized grid rewards
// and generated order counts.
struct MeanTables {
  Eigen::MatrixXd v_rule;      // T x N mean reward
  Eigen::MatrixXd order_mean;  // T x N mean generated order count
};

MeanTables fit_mean_tables(const std::vector<EpisodeLog>& logs);

}  // namespace fleet
