#include "fleet/lp_realloc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fleet {

namespace {

RepositionProblem build_impl(const Eigen::VectorXd& v, const Eigen::VectorXd& d,
                             const Eigen::VectorXd& o, const GridWorld& world, double cost,
                             double lambda, bool grouped) {
  const int n = world.n_grids();
  if (v.size() != n || d.size() != n || o.size() != n)
    throw std::invalid_argument("build_problem: vector length != grid count");
  if ((d.array() < 0.0).any() || (o.array() < 0.0).any())
    throw std::invalid_argument("build_problem: d and o must be nonnegative");

  RepositionProblem p;
  p.n = n;
  p.v = v;
  p.o = o;
  p.d = d;
  p.lambda = lambda;
  p.D = grouped ? adjacency_matrix(world) : Eigen::MatrixXd::Identity(n, n);
  p.origin_span.assign((size_t)n, {0, 0});

  std::vector<double> costs;
  for (int g = 0; g < n; ++g) {
    if (d(g) <= 0.0) continue;
    const int offset = (int)p.directions.size();
    p.directions.emplace_back(g, g);
    costs.push_back(0.0);
    for (int k = 0; k < kHexDirections; ++k) {
      const int dest = world.neighbor(g, k);
      if (dest >= 0 && v(dest) > v(g)) {
        p.directions.emplace_back(g, dest);
        costs.push_back(cost);
      }
    }
    p.origin_span[(size_t)g] = {offset, (int)p.directions.size() - offset};
  }

  const int nr = (int)p.directions.size();
  p.A = Eigen::MatrixXd::Zero(n, nr);
  p.B = Eigen::MatrixXd::Zero(n, nr);
  p.c = Eigen::VectorXd::Zero(nr);
  for (int j = 0; j < nr; ++j) {
    p.B(p.directions[(size_t)j].first, j) = 1.0;
    p.A(p.directions[(size_t)j].second, j) = 1.0;
    p.c(j) = costs[(size_t)j];
  }
  return p;
}

// Euclidean projection of z onto {x >= 0, sum x = s}.
Eigen::VectorXd project_simplex(const Eigen::VectorXd& z, double s) {
  const int m = (int)z.size();
  if (m == 1) return Eigen::VectorXd::Constant(1, s);
  std::vector<double> u(z.data(), z.data() + m);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cum = 0.0, tau = 0.0;
  int rho = 0;
  for (int i = 0; i < m; ++i) {
    cum += u[(size_t)i];
    const double t = (cum - s) / (double)(i + 1);
    if (u[(size_t)i] - t > 0.0) {
      rho = i + 1;
      tau = t;
    }
  }
  (void)rho;
  return (z.array() - tau).cwiseMax(0.0);
}

}  // namespace

RepositionProblem build_problem(const Eigen::VectorXd& v, const Eigen::VectorXd& d,
                                const Eigen::VectorXd& o, const GridWorld& world, double cost,
                                double lambda) {
  return build_impl(v, d, o, world, cost, lambda, true);
}

RepositionProblem build_problem_ungrouped(const Eigen::VectorXd& v, const Eigen::VectorXd& d,
                                          const Eigen::VectorXd& o, const GridWorld& world,
                                          double cost, double lambda) {
  return build_impl(v, d, o, world, cost, lambda, false);
}

double reposition_objective(const RepositionProblem& p, const Eigen::VectorXd& y) {
  const Eigen::VectorXd linear = p.A.transpose() * p.v - p.c;
  const Eigen::VectorXd resid = p.D * (p.o - p.A * y);
  return linear.dot(y) - p.lambda * resid.squaredNorm();
}

RelaxResult solve_relaxation(const RepositionProblem& p, int max_iterations, double tolerance) {
  const int nr = p.n_directions();
  RelaxResult res;
  if (nr == 0) {
    res.y = Eigen::VectorXd();
    res.objective = -p.lambda * (p.D * p.o).squaredNorm();
    return res;
  }

  const Eigen::VectorXd linear = p.A.transpose() * p.v - p.c;

  if (p.lambda <= 0.0) {
    // Linear objective: each origin sends everything along its best
    // direction; ties go to the lowest index.
    res.y = Eigen::VectorXd::Zero(nr);
    for (int g = 0; g < p.n; ++g) {
      const auto [offset, count] = p.origin_span[(size_t)g];
      if (count == 0) continue;
      int best = offset;
      for (int j = offset + 1; j < offset + count; ++j)
        if (linear(j) > linear(best)) best = j;
      res.y(best) = p.d(g);
    }
    res.objective = reposition_objective(p, res.y);
    return res;
  }

  const Eigen::MatrixXd DtD = p.D.transpose() * p.D;
  const Eigen::MatrixXd M = p.A.transpose() * DtD * p.A;  // quadratic coefficient
  const Eigen::VectorXd q = p.A.transpose() * (DtD * p.o);

  // Gershgorin bound on the spectral radius keeps the step safe.
  double row_max = 0.0;
  for (int i = 0; i < nr; ++i) row_max = std::max(row_max, M.row(i).cwiseAbs().sum());
  const double lipschitz = std::max(2.0 * p.lambda * row_max, 1e-12);
  const double step = 1.0 / lipschitz;

  // Start from the uniform feasible point.
  Eigen::VectorXd y = Eigen::VectorXd::Zero(nr);
  for (int g = 0; g < p.n; ++g) {
    const auto [offset, count] = p.origin_span[(size_t)g];
    for (int j = offset; j < offset + count; ++j) y(j) = p.d(g) / (double)count;
  }

  double best_obj = reposition_objective(p, y);
  Eigen::VectorXd best_y = y;
  int stall = 0;
  int it = 0;
  for (; it < max_iterations; ++it) {
    const Eigen::VectorXd grad = linear + 2.0 * p.lambda * (q - M * y);
    Eigen::VectorXd z = y + step * grad;
    for (int g = 0; g < p.n; ++g) {
      const auto [offset, count] = p.origin_span[(size_t)g];
      if (count == 0) continue;
      y.segment(offset, count) = project_simplex(z.segment(offset, count), p.d(g));
    }
    const double obj = reposition_objective(p, y);
    if (obj > best_obj + tolerance * std::max(1.0, std::abs(best_obj))) {
      best_obj = obj;
      best_y = y;
      stall = 0;
    } else {
      if (obj > best_obj) {
        best_obj = obj;
        best_y = y;
      }
      if (++stall >= 64) break;
    }
  }
  res.y = best_y;
  res.objective = best_obj;
  res.iterations = it;
  res.converged = it < max_iterations;
  return res;
}

RepositionPlan round_to_integer(const Eigen::VectorXd& y, const RepositionProblem& p) {
  if ((int)y.size() != p.n_directions())
    throw std::invalid_argument("round_to_integer: length mismatch");
  RepositionPlan plan;
  plan.y = Eigen::VectorXi::Zero(y.size());
  for (int g = 0; g < p.n; ++g) {
    const auto [offset, count] = p.origin_span[(size_t)g];
    if (count == 0) continue;
    const long long total = (long long)std::llround(p.d(g));
    long long floor_sum = 0;
    std::vector<std::pair<double, int>> fracs;  // (-remainder, index) for stable sort
    for (int j = offset; j < offset + count; ++j) {
      const double val = std::max(0.0, y(j));
      long long f = (long long)std::floor(val + 1e-9);
      if (f > total) f = total;
      plan.y(j) = (int)f;
      floor_sum += f;
      fracs.emplace_back(-(val - (double)f), j);
    }
    long long remainder = total - floor_sum;
    std::stable_sort(fracs.begin(), fracs.end());  // largest fraction first, lowest index on ties
    size_t idx = 0;
    while (remainder > 0) {
      plan.y(fracs[idx % fracs.size()].second) += 1;
      --remainder;
      ++idx;
    }
    while (remainder < 0) {  // guard against overshoot from clamping
      for (int j = offset; j < offset + count && remainder < 0; ++j)
        if (plan.y(j) > 0) {
          plan.y(j) -= 1;
          ++remainder;
        }
    }
  }
  return plan;
}

JointAction plan_to_joint_action(const RepositionPlan& plan, const RepositionProblem& p,
                                 const GridWorld& world, const std::vector<AgentRef>& agents,
                                 Rng& rng) {
  // Agents grouped by grid, then shuffled within each grid.
  std::vector<std::vector<int>> agent_idx((size_t)p.n);
  for (size_t i = 0; i < agents.size(); ++i)
    agent_idx[(size_t)agents[i].grid].push_back((int)i);

  JointAction actions(agents.size(), kStayAction);
  for (int g = 0; g < p.n; ++g) {
    const auto [offset, count] = p.origin_span[(size_t)g];
    long long planned = 0;
    for (int j = offset; j < offset + count; ++j) planned += plan.y(j);
    if (planned != (long long)agent_idx[(size_t)g].size())
      throw std::invalid_argument("plan_to_joint_action: plan does not match agent counts at grid " +
                                  std::to_string(g));
    rng.shuffle(agent_idx[(size_t)g]);
    size_t next = 0;
    for (int j = offset; j < offset + count; ++j) {
      const int dest = p.directions[(size_t)j].second;
      const int dir = world.direction_of(g, dest);
      for (int m = 0; m < plan.y(j); ++m) actions[(size_t)agent_idx[(size_t)g][next++]] = dir;
    }
  }
  return actions;
}

OracleResult brute_force_oracle(const RepositionProblem& p, uint64_t cap) {
  // Enumeration size: product over origins of C(d + k - 1, k - 1).
  long double est = 1.0L;
  for (int g = 0; g < p.n; ++g) {
    const auto [offset, count] = p.origin_span[(size_t)g];
    if (count == 0) continue;
    const long long d = (long long)std::llround(p.d(g));
    long double ways = 1.0L;
    for (long long i = 1; i <= d; ++i) ways = ways * (long double)(count - 1 + i) / (long double)i;
    est *= ways;
    if (est > (long double)cap)
      throw std::invalid_argument("brute_force_oracle: instance too large to enumerate");
  }

  std::vector<int> origins;
  for (int g = 0; g < p.n; ++g)
    if (p.origin_span[(size_t)g].second > 0) origins.push_back(g);

  OracleResult best;
  best.objective = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(p.n_directions());

  // Depth-first over per-origin compositions.
  std::function<void(size_t)> recurse = [&](size_t oi) {
    if (oi == origins.size()) {
      const double obj = reposition_objective(p, y);
      if (obj > best.objective) {
        best.objective = obj;
        best.y = y.cast<int>();
      }
      return;
    }
    const int g = origins[oi];
    const auto [offset, count] = p.origin_span[(size_t)g];
    const int d = (int)std::llround(p.d(g));
    std::function<void(int, int)> fill = [&](int j, int left) {
      if (j == offset + count - 1) {
        y(j) = (double)left;
        recurse(oi + 1);
        y(j) = 0.0;
        return;
      }
      for (int take = 0; take <= left; ++take) {
        y(j) = (double)take;
        fill(j + 1, left - take);
      }
      y(j) = 0.0;
    };
    fill(offset, d);
  };
  recurse(0);
  if (best.y.size() == 0) best.y = Eigen::VectorXi::Zero(p.n_directions());
  return best;
}

void save_plan_csv(const RepositionPlan& plan, const RepositionProblem& p, int tick,
                   const std::string& path, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write plan csv: " + path);
  if (!append) out << "tick,from,to,count\n";
  for (int j = 0; j < p.n_directions(); ++j) {
    if (plan.y(j) == 0) continue;
    out << tick << ',' << p.directions[(size_t)j].first << ',' << p.directions[(size_t)j].second
        << ',' << plan.y(j) << "\n";
  }
}

}  // namespace fleet
