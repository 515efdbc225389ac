#include "fleet/baselines.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fleet {

JointAction simulation_policy(const std::vector<AgentRef>& agents) {
  return JointAction(agents.size(), kStayAction);
}

JointAction diffusion_policy(const GridWorld& world, const std::vector<AgentRef>& agents,
                             Rng& rng) {
  JointAction actions(agents.size(), kStayAction);
  for (size_t i = 0; i < agents.size(); ++i) {
    const GeoContext geo = geographic_context(world, agents[i].grid);
    int options[kActionCount];
    int count = 0;
    for (int k = 0; k < kActionCount; ++k)
      if (geo.allows(k)) options[count++] = k;
    actions[i] = options[rng.uniform_int((uint64_t)count)];
  }
  return actions;
}

namespace {

// Shared sampler: weights over the 7 directions, zeros excluded; all-zero
// falls back to uniform over the allowed set.
int sample_direction(const std::vector<double>& weights, const GeoContext& geo, Rng& rng) {
  double total = 0.0;
  for (int k = 0; k < kActionCount; ++k) total += weights[(size_t)k];
  if (total > 0.0) {
    double u = rng.uniform_real() * total;
    for (int k = 0; k < kActionCount; ++k) {
      u -= weights[(size_t)k];
      if (weights[(size_t)k] > 0.0 && u < 0.0) return k;
    }
    for (int k = kActionCount - 1; k >= 0; --k)
      if (weights[(size_t)k] > 0.0) return k;
  }
  int options[kActionCount];
  int count = 0;
  for (int k = 0; k < kActionCount; ++k)
    if (geo.allows(k)) options[count++] = k;
  return options[rng.uniform_int((uint64_t)count)];
}

}  // namespace

JointAction rule_based_policy(const GridWorld& world, const GlobalState& state,
                              const std::vector<AgentRef>& agents,
                              const Eigen::MatrixXd& v_rule, Rng& rng) {
  if ((v_rule.array() < 0.0).any())
    throw std::invalid_argument("rule_based_policy: negative value table entries");
  JointAction actions(agents.size(), kStayAction);
  const int next_t = state.t + 1;
  if (next_t >= state.horizon) return actions;  // last tick: stay
  for (size_t i = 0; i < agents.size(); ++i) {
    const int g = agents[i].grid;
    const GeoContext geo = geographic_context(world, g);
    std::vector<double> w((size_t)kActionCount, 0.0);
    for (int k = 0; k < kActionCount; ++k) {
      if (!geo.allows(k)) continue;
      const int dest = k == kStayAction ? g : world.neighbor(g, k);
      w[(size_t)k] = v_rule(next_t, dest);
    }
    actions[i] = sample_direction(w, geo, rng);
  }
  return actions;
}

ValueIterLearner::ValueIterLearner(int horizon, int n_grids, double gamma)
    : v_(Eigen::MatrixXd::Zero(horizon, n_grids)),
      visits_(Eigen::MatrixXi::Zero(horizon, n_grids)),
      gamma_(gamma) {}

ValueIterLearner::ValueIterLearner(Eigen::MatrixXd initial, double gamma)
    : v_(std::move(initial)),
      visits_(Eigen::MatrixXi::Zero(v_.rows(), v_.cols())),
      gamma_(gamma) {}

JointAction ValueIterLearner::act(const GridWorld& world, const GlobalState& state,
                                  const std::vector<AgentRef>& agents, Rng& rng) const {
  JointAction actions(agents.size(), kStayAction);
  const int next_t = state.t + 1;
  if (next_t >= state.horizon) return actions;
  for (size_t i = 0; i < agents.size(); ++i) {
    const int g = agents[i].grid;
    const GeoContext geo = geographic_context(world, g);
    const double own = v_(next_t, g);
    std::vector<double> w((size_t)kActionCount, 0.0);
    for (int k = 0; k < kActionCount; ++k) {
      if (!geo.allows(k)) continue;
      const int dest = k == kStayAction ? g : world.neighbor(g, k);
      if (k != kStayAction && v_(next_t, dest) < own) continue;  // collaborative mask
      w[(size_t)k] = std::max(0.0, v_(next_t, dest));
    }
    actions[i] = sample_direction(w, geo, rng);
  }
  return actions;
}

void ValueIterLearner::update_from_episode(const GridWorld& world, const EpisodeLog& log) {
  for (int t = (int)log.ticks.size() - 1; t >= 0; --t) {
    const TickRecord& rec = log.ticks[(size_t)t];
    for (int g = 0; g < log.n_grids; ++g) {
      for (int k : rec.actions_by_grid[(size_t)g]) {
        const int dest = k == kStayAction ? g : world.neighbor(g, k);
        double target = rec.rewards(g);
        if (rec.t + 1 < log.horizon) target += gamma_ * v_(rec.t + 1, dest);
        const int n = ++visits_(rec.t, g);
        v_(rec.t, g) += (target - v_(rec.t, g)) / (double)n;
      }
    }
  }
}

TabularQ::TabularQ(int horizon, int n_grids)
    : q_((size_t)horizon, Eigen::MatrixXd::Zero(n_grids, kActionCount)) {}

int TabularQ::greedy_action(const GridWorld& world, int t, int grid) const {
  const GeoContext geo = geographic_context(world, grid);
  int best = kStayAction;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kActionCount; ++k) {
    if (!geo.allows(k)) continue;
    const double v = q_[(size_t)t](grid, k);
    if (v > best_v) {
      best_v = v;
      best = k;
    }
  }
  return best;
}

JointAction TabularQ::act_eps_greedy(const GridWorld& world, const GlobalState& state,
                                     const std::vector<AgentRef>& agents, double epsilon,
                                     Rng& rng) const {
  JointAction actions(agents.size(), kStayAction);
  for (size_t i = 0; i < agents.size(); ++i) {
    const int g = agents[i].grid;
    if (rng.bernoulli(epsilon)) {
      const GeoContext geo = geographic_context(world, g);
      int options[kActionCount];
      int count = 0;
      for (int k = 0; k < kActionCount; ++k)
        if (geo.allows(k)) options[count++] = k;
      actions[i] = options[rng.uniform_int((uint64_t)count)];
    } else {
      actions[i] = greedy_action(world, state.t, g);
    }
  }
  return actions;
}

void TabularQ::q_update(const GridWorld& world, const TabularTransition& tr, double alpha,
                        double gamma) {
  double target = tr.reward;
  if (!tr.terminal) {
    const GeoContext geo = geographic_context(world, tr.dest);
    double best = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < kActionCount; ++k)
      if (geo.allows(k)) best = std::max(best, q_[(size_t)(tr.t + 1)](tr.dest, k));
    target += gamma * best;
  }
  double& q = q_[(size_t)tr.t](tr.grid, tr.action);
  q += alpha * (target - q);
}

void TabularQ::sarsa_update(const TabularTransition& tr, int next_action, double alpha,
                            double gamma) {
  double target = tr.reward;
  if (!tr.terminal) target += gamma * q_[(size_t)(tr.t + 1)](tr.dest, next_action);
  double& q = q_[(size_t)tr.t](tr.grid, tr.action);
  q += alpha * (target - q);
}

void TabularQ::save_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write table: " + path);
  out << "t,grid,direction,value\n";
  char buf[96];
  for (int t = 0; t < horizon(); ++t)
    for (int g = 0; g < n_grids(); ++g)
      for (int k = 0; k < kActionCount; ++k) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g\n", t, g, k, q_[(size_t)t](g, k));
        out << buf;
      }
}

TabularQ TabularQ::load_csv(const std::string& path, int horizon, int n_grids) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read table: " + path);
  TabularQ table(horizon, n_grids);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    const int t = std::stoi(cell);
    std::getline(ls, cell, ',');
    const int g = std::stoi(cell);
    std::getline(ls, cell, ',');
    const int k = std::stoi(cell);
    std::getline(ls, cell, ',');
    table.at(t, g, k) = std::stod(cell);
  }
  return table;
}

void save_value_table_csv(const Eigen::MatrixXd& table, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write table: " + path);
  out << "t,grid,value\n";
  char buf[96];
  for (Eigen::Index t = 0; t < table.rows(); ++t)
    for (Eigen::Index g = 0; g < table.cols(); ++g) {
      std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g\n", (long long)t, (long long)g,
                    table(t, g));
      out << buf;
    }
}

Eigen::MatrixXd load_value_table_csv(const std::string& path, int horizon, int n_grids) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read table: " + path);
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(horizon, n_grids);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    const int t = std::stoi(cell);
    std::getline(ls, cell, ',');
    const int g = std::stoi(cell);
    std::getline(ls, cell, ',');
    table(t, g) = std::stod(cell);
  }
  return table;
}

}  // namespace fleet
