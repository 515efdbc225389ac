#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "fleet/hexgrid.hpp"
#include "fleet/rng.hpp"
#include "fleet/simcore.hpp"

namespace fleet {

// The centralized reallocation program for one tick. Directions run from
// each grid holding agents to itself and to strictly higher-valued
// neighbors; the objective trades per-direction value gain against
// reposition cost and a quadratic penalty on neighborhood-aggregated
// demand mismatch.
struct RepositionProblem {
  int n = 0;                                    // grids
  std::vector<std::pair<int, int>> directions;  // (from, to), grouped by origin
  std::vector<std::pair<int, int>> origin_span; // per grid: (offset, count) into directions
  Eigen::MatrixXd A;  // n x n_r inflow indicator
  Eigen::MatrixXd B;  // n x n_r outflow indicator
  Eigen::VectorXd v;  // per-grid state values
  Eigen::VectorXd c;  // per-direction costs (0 on self-loops)
  Eigen::VectorXd o;  // estimated next-tick orders per grid
  Eigen::VectorXd d;  // available agents per grid
  double lambda = 1.0;
  Eigen::MatrixXd D;  // neighborhood aggregation (adjacency, or identity)

  int n_directions() const { return (int)directions.size(); }
};

RepositionProblem build_problem(const Eigen::VectorXd& v, const Eigen::VectorXd& d,
                                const Eigen::VectorXd& o, const GridWorld& world, double cost,
                                double lambda);

// Identical program with the quadratic penalty applied per grid instead of
// per neighborhood (D = identity).
RepositionProblem build_problem_ungrouped(const Eigen::VectorXd& v, const Eigen::VectorXd& d,
                                          const Eigen::VectorXd& o, const GridWorld& world,
                                          double cost, double lambda);

double reposition_objective(const RepositionProblem& p, const Eigen::VectorXd& y);

struct RelaxResult {
  Eigen::VectorXd y;
  double objective = 0.0;
  bool converged = true;
  int iterations = 0;
};

// Maximizes the objective over {y >= 0, B y = d} by projected gradient
// ascent; the feasible set splits into one scaled simplex per origin grid,
// so projections are exact. A zero quadratic term is solved in closed form.
RelaxResult solve_relaxation(const RepositionProblem& p, int max_iterations = 20000,
                             double tolerance = 1e-9);

struct RepositionPlan {
  Eigen::VectorXi y;
};

// Per-origin largest-remainder rounding; ties go to the lowest direction
// index. The result satisfies B y = d exactly.
RepositionPlan round_to_integer(const Eigen::VectorXd& y, const RepositionProblem& p);

JointAction plan_to_joint_action(const RepositionPlan& plan, const RepositionProblem& p,
                                 const GridWorld& world, const std::vector<AgentRef>& agents,
                                 Rng& rng);

struct OracleResult {
  Eigen::VectorXi y;
  double objective = 0.0;
};

// Exhaustive integer optimum; throws when the enumeration would exceed cap.
OracleResult brute_force_oracle(const RepositionProblem& p, uint64_t cap = 2000000);

void save_plan_csv(const RepositionPlan& plan, const RepositionProblem& p, int tick,
                   const std::string& path, bool append = false);

}  // namespace fleet
