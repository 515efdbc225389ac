#include "fleet/cdqn.hpp"

#include <algorithm>
#include <iostream>
#include <limits>
#include <stdexcept>

namespace fleet {

CollabContext collaborative_context_q(const Eigen::VectorXd& values, const GridWorld& world,
                                      int grid, double cost) {
  CollabContext ctx;
  const double own = values(grid);
  for (int k = 0; k < kHexDirections; ++k) {
    const int dest = world.neighbor(grid, k);
    ctx.bits[(size_t)k] = (dest >= 0 && values(dest) >= own + cost) ? 1 : 0;
  }
  ctx.bits[kStayAction] = 1;
  return ctx;
}

Eigen::VectorXd centralized_q(const Mlp& net, const Eigen::VectorXd& state_vec, int n_grids) {
  const int base = (int)state_vec.size();
  Eigen::MatrixXd inputs = Eigen::MatrixXd::Zero(n_grids, base + n_grids);
  for (int j = 0; j < n_grids; ++j) {
    inputs.row(j).segment(0, base) = state_vec.transpose();
    inputs(j, base + j) = 1.0;
  }
  return net.apply(inputs).col(0);
}

Eigen::VectorXd agent_action_values(const Eigen::VectorXd& centralized, const GridWorld& world,
                                    int grid) {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(kActionCount);
  for (int k = 0; k < kHexDirections; ++k) {
    const int dest = world.neighbor(grid, k);
    if (dest >= 0) q(k) = centralized(dest);
  }
  q(kStayAction) = centralized(grid);
  return q;
}

namespace {

// argmax over surviving directions, lowest index winning ties.
int masked_argmax(const Eigen::VectorXd& values, const std::array<uint8_t, kActionCount>& mask) {
  int best = -1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kActionCount; ++k) {
    if (!mask[(size_t)k]) continue;
    if (values(k) > best_v) {
      best_v = values(k);
      best = k;
    }
  }
  return best;
}

struct GridDecision {
  std::array<uint8_t, kActionCount> mask{};
  int greedy = kStayAction;
  int n_valid = 0;
  std::array<int, kActionCount> valid{};
};

}  // namespace

JointAction cdqn_epsilon_greedy(const Mlp& net, const GlobalState& state,
                                const std::vector<AgentRef>& agents, const GridWorld& world,
                                double epsilon, double collab_cost, double count_norm, Rng& rng) {
  const int n = world.n_grids();
  const Eigen::VectorXd values = centralized_q(net, state.vector(count_norm), n);
  std::vector<GridDecision> by_grid((size_t)n);
  std::vector<uint8_t> ready((size_t)n, 0);

  JointAction actions(agents.size(), kStayAction);
  for (size_t i = 0; i < agents.size(); ++i) {
    const int g = agents[i].grid;
    if (!ready[(size_t)g]) {
      const GeoContext geo = geographic_context(world, g);
      const CollabContext collab = collaborative_context_q(values, world, g, collab_cost);
      GridDecision d;
      for (int k = 0; k < kActionCount; ++k)
        d.mask[(size_t)k] = (uint8_t)(geo.bits[(size_t)k] & collab.bits[(size_t)k]);
      const Eigen::VectorXd q = agent_action_values(values, world, g);
      d.greedy = masked_argmax(q, d.mask);
      for (int k = 0; k < kActionCount; ++k)
        if (d.mask[(size_t)k]) d.valid[(size_t)d.n_valid++] = k;
      by_grid[(size_t)g] = d;
      ready[(size_t)g] = 1;
    }
    const GridDecision& d = by_grid[(size_t)g];
    if (epsilon > 0.0 && rng.bernoulli(epsilon))
      actions[i] = d.valid[(size_t)rng.uniform_int((uint64_t)d.n_valid)];
    else
      actions[i] = d.greedy;
  }
  return actions;
}

JointAction idqn_epsilon_greedy(const Mlp& net, const GlobalState& state,
                                const std::vector<AgentRef>& agents, const GridWorld& world,
                                double epsilon, double count_norm, Rng& rng) {
  const int n = world.n_grids();
  std::vector<GridDecision> by_grid((size_t)n);
  std::vector<uint8_t> ready((size_t)n, 0);

  JointAction actions(agents.size(), kStayAction);
  for (size_t i = 0; i < agents.size(); ++i) {
    const int g = agents[i].grid;
    if (!ready[(size_t)g]) {
      const GeoContext geo = geographic_context(world, g);
      GridDecision d;
      d.mask = geo.bits;
      const Eigen::VectorXd q = net.apply_one(agent_state_vector(state, g, count_norm));
      d.greedy = masked_argmax(q, d.mask);
      for (int k = 0; k < kActionCount; ++k)
        if (d.mask[(size_t)k]) d.valid[(size_t)d.n_valid++] = k;
      by_grid[(size_t)g] = d;
      ready[(size_t)g] = 1;
    }
    const GridDecision& d = by_grid[(size_t)g];
    if (epsilon > 0.0 && rng.bernoulli(epsilon))
      actions[i] = d.valid[(size_t)rng.uniform_int((uint64_t)d.n_valid)];
    else
      actions[i] = d.greedy;
  }
  return actions;
}

CdqnTrainer::CdqnTrainer(const GridWorld& world, const DqnHyper& hyper, int horizon,
                         double count_norm, bool cost_enabled, double cost)
    : world_(world),
      hyper_(hyper),
      count_norm_(count_norm),
      cost_enabled_(cost_enabled),
      cost_(cost),
      memory_(hyper.replay_capacity) {
  std::vector<int> widths;
  widths.push_back(agent_state_dim(world.n_grids(), horizon));
  for (int h : hyper.hidden) widths.push_back(h);
  widths.push_back(1);
  net_ = Mlp(widths, Activation::Relu, Activation::ReluPlusOne, hyper.net_seed);
  target_ = net_;
  adam_ = AdamState::for_net(net_, hyper.lr);
}

EpisodeMetrics CdqnTrainer::train_episode(Env& env, uint64_t env_seed, int episode_index,
                                          Rng& policy_rng, Rng& update_rng) {
  const double eps = hyper_.eps.at(episode_index);
  // With costs the mask threshold carries the cost; stored rewards do not.
  const double mask_cost = cost_enabled_ ? cost_ : 0.0;
  auto act = [&](const GlobalState& s, const std::vector<AgentRef>& agents) {
    return cdqn_epsilon_greedy(net_, s, agents, world_, eps, mask_cost, count_norm_, policy_rng);
  };
  auto sink = [&](const TickOutcome& tick) {
    for (const PendingAgent& a : *tick.agents) {
      Transition tr;
      tr.t = tick.t;
      tr.grid = a.grid;
      tr.action = a.action;
      tr.dest = a.dest;
      tr.reward = (*tick.rewards)(a.dest);
      tr.terminal = tick.terminal;
      tr.s_idx = tick.s_idx;
      tr.s_next_idx = tick.s_next_idx;
      memory_.push(tr);
    }
  };
  EpisodeMetrics m = rollout_episode(env, env_seed, store_, count_norm_, act, sink);
  update_batches(update_rng);
  target_ = net_;
  return m;
}

void CdqnTrainer::update_batches(Rng& rng) {
  if (memory_.size() == 0) {
    std::cerr << "cdqn: replay memory empty, skipping updates\n";
    return;
  }
  const int n = world_.n_grids();
  const int base = (int)store_.at(0).size();
  const int b = hyper_.batch_size;
  for (int u = 0; u < hyper_.updates_per_episode; ++u) {
    std::vector<const Transition*> batch;
    batch.reserve((size_t)b);
    for (int i = 0; i < b; ++i) batch.push_back(&memory_.sample(rng));

    // Bootstrap values: target net over every neighbor of each destination.
    std::vector<int> row_of((size_t)b, -1);
    int rows = 0;
    for (int i = 0; i < b; ++i)
      if (!batch[(size_t)i]->terminal) rows += (int)world_.neighborhood(batch[(size_t)i]->dest).size();
    Eigen::MatrixXd boot_in = Eigen::MatrixXd::Zero(rows, base + n);
    std::vector<std::pair<int, int>> span((size_t)b, {0, 0});
    int r = 0;
    for (int i = 0; i < b; ++i) {
      const Transition& tr = *batch[(size_t)i];
      if (tr.terminal) continue;
      const auto ner = world_.neighborhood(tr.dest);
      span[(size_t)i] = {r, (int)ner.size()};
      for (int p : ner) {
        boot_in.row(r).segment(0, base) = store_.at(tr.s_next_idx).transpose();
        boot_in(r, base + p) = 1.0;
        ++r;
      }
    }
    Eigen::VectorXd boot = rows > 0 ? Eigen::VectorXd(target_.apply(boot_in).col(0))
                                    : Eigen::VectorXd();

    Eigen::MatrixXd inputs = Eigen::MatrixXd::Zero(b, base + n);
    Eigen::VectorXd targets(b);
    for (int i = 0; i < b; ++i) {
      const Transition& tr = *batch[(size_t)i];
      inputs.row(i).segment(0, base) = store_.at(tr.s_idx).transpose();
      inputs(i, base + tr.dest) = 1.0;
      double y = tr.reward;
      if (!tr.terminal) {
        double best = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < span[(size_t)i].second; ++j)
          best = std::max(best, boot(span[(size_t)i].first + j));
        y += hyper_.gamma * best;
      }
      targets(i) = y;
    }

    const Eigen::MatrixXd& out = net_.forward(inputs);
    Eigen::MatrixXd dy = 2.0 * (out.col(0) - targets) / (double)b;
    last_loss_ = (out.col(0) - targets).squaredNorm() / (double)b;
    MlpGradients grads = net_.backward(dy);
    adam_step(adam_, net_, grads);
  }
}

JointAction CdqnTrainer::eval_actions(const GlobalState& state,
                                      const std::vector<AgentRef>& agents, Rng& rng) const {
  return cdqn_epsilon_greedy(net_, state, agents, world_, hyper_.eval_eps,
                             cost_enabled_ ? cost_ : 0.0, count_norm_, rng);
}

IdqnTrainer::IdqnTrainer(const GridWorld& world, const DqnHyper& hyper, int horizon,
                         double count_norm, bool cost_enabled, double cost)
    : world_(world),
      hyper_(hyper),
      count_norm_(count_norm),
      cost_enabled_(cost_enabled),
      cost_(cost),
      memory_(hyper.replay_capacity) {
  std::vector<int> widths;
  widths.push_back(agent_state_dim(world.n_grids(), horizon));
  for (int h : hyper.hidden) widths.push_back(h);
  widths.push_back(kActionCount);
  net_ = Mlp(widths, Activation::Elu, Activation::Identity, hyper.net_seed);
  target_ = net_;
  adam_ = AdamState::for_net(net_, hyper.lr);
}

EpisodeMetrics IdqnTrainer::train_episode(Env& env, uint64_t env_seed, int episode_index,
                                          Rng& policy_rng, Rng& update_rng) {
  const double eps = hyper_.eps.at(episode_index);
  auto act = [&](const GlobalState& s, const std::vector<AgentRef>& agents) {
    return idqn_epsilon_greedy(net_, s, agents, world_, eps, count_norm_, policy_rng);
  };
  auto sink = [&](const TickOutcome& tick) {
    for (const PendingAgent& a : *tick.agents) {
      Transition tr;
      tr.t = tick.t;
      tr.grid = a.grid;
      tr.action = a.action;
      tr.dest = a.dest;
      tr.reward = (*tick.rewards)(a.dest) - (cost_enabled_ && a.moved ? cost_ : 0.0);
      tr.terminal = tick.terminal;
      tr.s_idx = tick.s_idx;
      tr.s_next_idx = tick.s_next_idx;
      memory_.push(tr);
    }
  };
  EpisodeMetrics m = rollout_episode(env, env_seed, store_, count_norm_, act, sink);
  update_batches(update_rng);
  target_ = net_;
  return m;
}

void IdqnTrainer::update_batches(Rng& rng) {
  if (memory_.size() == 0) {
    std::cerr << "idqn: replay memory empty, skipping updates\n";
    return;
  }
  const int n = world_.n_grids();
  const int base = (int)store_.at(0).size();
  const int b = hyper_.batch_size;
  for (int u = 0; u < hyper_.updates_per_episode; ++u) {
    std::vector<const Transition*> batch;
    batch.reserve((size_t)b);
    for (int i = 0; i < b; ++i) batch.push_back(&memory_.sample(rng));

    Eigen::MatrixXd boot_in = Eigen::MatrixXd::Zero(b, base + n);
    for (int i = 0; i < b; ++i) {
      const Transition& tr = *batch[(size_t)i];
      if (tr.terminal) continue;
      boot_in.row(i).segment(0, base) = store_.at(tr.s_next_idx).transpose();
      boot_in(i, base + tr.dest) = 1.0;
    }
    const Eigen::MatrixXd boot = target_.apply(boot_in);

    Eigen::MatrixXd inputs = Eigen::MatrixXd::Zero(b, base + n);
    Eigen::VectorXd targets(b);
    for (int i = 0; i < b; ++i) {
      const Transition& tr = *batch[(size_t)i];
      inputs.row(i).segment(0, base) = store_.at(tr.s_idx).transpose();
      inputs(i, base + tr.grid) = 1.0;
      double y = tr.reward;
      if (!tr.terminal) {
        const GeoContext geo = geographic_context(world_, tr.dest);
        double best = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < kActionCount; ++k)
          if (geo.allows(k)) best = std::max(best, boot(i, k));
        y += hyper_.gamma * best;
      }
      targets(i) = y;
    }

    const Eigen::MatrixXd& out = net_.forward(inputs);
    Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(b, kActionCount);
    double loss = 0.0;
    for (int i = 0; i < b; ++i) {
      const int a = batch[(size_t)i]->action;
      const double diff = out(i, a) - targets(i);
      dy(i, a) = 2.0 * diff / (double)b;
      loss += diff * diff;
    }
    last_loss_ = loss / (double)b;
    MlpGradients grads = net_.backward(dy);
    adam_step(adam_, net_, grads);
  }
}

JointAction IdqnTrainer::eval_actions(const GlobalState& state,
                                      const std::vector<AgentRef>& agents, Rng& rng) const {
  return idqn_epsilon_greedy(net_, state, agents, world_, hyper_.eval_eps, count_norm_, rng);
}

}  // namespace fleet
