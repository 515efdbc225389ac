#include "fleet/ca2c.hpp"

#include <cassert>
#include <cmath>
#include <iostream>
#include <stdexcept>

namespace fleet {

MaskedPolicy masked_policy(const Eigen::VectorXd& logits,
                           const std::array<uint8_t, kActionCount>& mask) {
  MaskedPolicy mp;
  mp.mask = mask;
  mp.probs = Eigen::VectorXd::Zero(kActionCount);
  double norm = 0.0;
  for (int k = 0; k < kActionCount; ++k) {
    if (!mask[(size_t)k]) continue;
    mp.probs(k) = logits(k);
    norm += logits(k);
  }
  assert(norm > 0.0 && "stay always survives and logits are positive");
  mp.probs /= norm;
  return mp;
}

JointAction ca2c_policy_forward(const Mlp& value_net, const Mlp& policy_net,
                                const GlobalState& state, const std::vector<AgentRef>& agents,
                                const GridWorld& world, double count_norm, bool drop_collab,
                                bool drop_geo, Rng& rng, std::vector<MaskedPolicy>* policy_by_grid,
                                Eigen::VectorXd* values_out) {
  const int n = world.n_grids();
  const Eigen::VectorXd svec = state.vector(count_norm);
  const Eigen::VectorXd values = centralized_q(value_net, svec, n);
  if (values_out) *values_out = values;
  if (policy_by_grid) policy_by_grid->assign((size_t)n, MaskedPolicy{});

  std::vector<uint8_t> ready((size_t)n, 0);
  std::vector<MaskedPolicy> local((size_t)n);
  const int base = (int)svec.size();

  JointAction actions(agents.size(), kStayAction);
  for (size_t i = 0; i < agents.size(); ++i) {
    const int g = agents[i].grid;
    if (!ready[(size_t)g]) {
      std::array<uint8_t, kActionCount> mask;
      mask.fill(1);
      if (!drop_geo) {
        const GeoContext geo = geographic_context(world, g);
        for (int k = 0; k < kActionCount; ++k) mask[(size_t)k] &= geo.bits[(size_t)k];
      }
      if (!drop_collab) {
        const CollabContext collab = collaborative_context_q(values, world, g, 0.0);
        // Off-map directions carry no value entry; only constrain the
        // on-map ones so a geo-dropped variant can still roam.
        for (int k = 0; k < kHexDirections; ++k)
          if (world.neighbor(g, k) >= 0) mask[(size_t)k] &= collab.bits[(size_t)k];
      }
      Eigen::VectorXd input = Eigen::VectorXd::Zero(base + n);
      input.segment(0, base) = svec;
      input(base + g) = 1.0;
      const Eigen::VectorXd logits = policy_net.apply_one(input);
      local[(size_t)g] = masked_policy(logits, mask);
      ready[(size_t)g] = 1;
      if (policy_by_grid) (*policy_by_grid)[(size_t)g] = local[(size_t)g];
    }
    const Eigen::VectorXd& p = local[(size_t)g].probs;
    double u = rng.uniform_real();
    int chosen = kStayAction;
    for (int k = 0; k < kActionCount; ++k) {
      if (p(k) <= 0.0) continue;
      u -= p(k);
      if (u < 0.0) {
        chosen = k;
        break;
      }
    }
    actions[i] = chosen;
  }
  return actions;
}

double value_target(const Eigen::VectorXd& probs, const Eigen::VectorXd& rewards,
                    const Eigen::VectorXd& next_values, double gamma) {
  if (probs.size() != rewards.size() || probs.size() != next_values.size())
    throw std::invalid_argument("value_target: length mismatch");
  double target = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    if (probs(k) <= 0.0) continue;
    target += probs(k) * (rewards(k) + gamma * next_values(k));
  }
  return target;
}

double advantage(double reward, double gamma, double v_next, double v_now) {
  return reward + gamma * v_next - v_now;
}

Eigen::VectorXd masked_logprob_grad(const Eigen::VectorXd& logits,
                                    const std::array<uint8_t, kActionCount>& mask, int action,
                                    double adv) {
  double norm = 0.0;
  for (int k = 0; k < kActionCount; ++k)
    if (mask[(size_t)k]) norm += logits(k);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(kActionCount);
  for (int k = 0; k < kActionCount; ++k) {
    double g = 0.0;
    if (k == action) g += 1.0 / logits(k);
    if (mask[(size_t)k]) g -= 1.0 / norm;
    grad(k) = adv * g;
  }
  return grad;
}

double warm_start_value(Mlp& net, const Eigen::MatrixXd& table, double lr, double tolerance,
                        int max_epochs, int batch_size, uint64_t seed) {
  const int horizon = (int)table.rows();
  const int n = (int)table.cols();
  const int dim = agent_state_dim(n, horizon);
  if (net.input_dim() != dim)
    throw std::invalid_argument("warm_start_value: net input dim does not match table shape");

  const int rows = horizon * n;
  Eigen::MatrixXd inputs = Eigen::MatrixXd::Zero(rows, dim);
  Eigen::VectorXd targets(rows);
  for (int t = 0; t < horizon; ++t)
    for (int g = 0; g < n; ++g) {
      const int r = t * n + g;
      inputs(r, 2 * n + t) = 1.0;
      inputs(r, 2 * n + horizon + g) = 1.0;
      targets(r) = table(t, g);
    }

  AdamState adam = AdamState::for_net(net, lr);
  Rng rng(substream(seed, {0x77617265ULL}));
  double mse = std::numeric_limits<double>::infinity();
  const int b = std::min(batch_size, rows);
  for (int epoch = 0; epoch < max_epochs; ++epoch) {
    const int steps = (rows + b - 1) / b;
    for (int s = 0; s < steps; ++s) {
      Eigen::MatrixXd bx(b, dim);
      Eigen::VectorXd by(b);
      for (int i = 0; i < b; ++i) {
        const int r = (int)rng.uniform_int((uint64_t)rows);
        bx.row(i) = inputs.row(r);
        by(i) = targets(r);
      }
      const Eigen::MatrixXd& out = net.forward(bx);
      Eigen::MatrixXd dy = 2.0 * (out.col(0) - by) / (double)b;
      MlpGradients grads = net.backward(dy);
      adam_step(adam, net, grads);
    }
    mse = (net.apply(inputs).col(0) - targets).squaredNorm() / (double)rows;
    if (mse < tolerance) return mse;
  }
  std::cerr << "warm_start_value: tolerance " << tolerance << " not reached (mse " << mse
            << "), proceeding\n";
  return mse;
}

Ca2cTrainer::Ca2cTrainer(const GridWorld& world, const Ca2cHyper& hyper, int horizon,
                         double count_norm, bool cost_enabled, double cost)
    : world_(world),
      hyper_(hyper),
      count_norm_(count_norm),
      cost_enabled_(cost_enabled),
      cost_(cost) {
  std::vector<int> vw, pw;
  vw.push_back(agent_state_dim(world.n_grids(), horizon));
  pw.push_back(agent_state_dim(world.n_grids(), horizon));
  for (int h : hyper.hidden) {
    vw.push_back(h);
    pw.push_back(h);
  }
  vw.push_back(1);
  pw.push_back(kActionCount);
  value_net_ = Mlp(vw, Activation::Relu, Activation::Identity, hyper.net_seed);
  policy_net_ = Mlp(pw, Activation::Relu, Activation::ReluPlusOne, hyper.net_seed + 1);
  value_target_ = value_net_;
  adam_v_ = AdamState::for_net(value_net_, hyper.lr);
  adam_p_ = AdamState::for_net(policy_net_, hyper.lr);
}

void Ca2cTrainer::warm_start(const Eigen::MatrixXd& v_table) {
  warm_start_value(value_net_, v_table, 3e-3, 1e-2, 1500, 512, hyper_.net_seed + 2);
  value_target_ = value_net_;
  adam_v_ = AdamState::for_net(value_net_, hyper_.lr);
}

EpisodeMetrics Ca2cTrainer::train_episode(Env& env, uint64_t env_seed, Rng& policy_rng,
                                          Rng& update_rng) {
  value_samples_.clear();
  policy_samples_.clear();
  store_ = StateStore{};

  const int n = world_.n_grids();
  std::vector<MaskedPolicy> policy_by_grid;
  Eigen::VectorXd values_now;
  // Per-tick caches keyed by the state index pending finalization.
  std::vector<MaskedPolicy> pending_policy;
  Eigen::VectorXd pending_values;

  auto act = [&](const GlobalState& s, const std::vector<AgentRef>& agents) {
    JointAction a = ca2c_policy_forward(value_net_, policy_net_, s, agents, world_, count_norm_,
                                        hyper_.drop_collab, hyper_.drop_geo, policy_rng,
                                        &policy_by_grid, &values_now);
    pending_policy = policy_by_grid;
    pending_values = values_now;
    return a;
  };

  auto sink = [&](const TickOutcome& tick) {
    Eigen::VectorXd next_values = Eigen::VectorXd::Zero(n);
    if (!tick.terminal)
      next_values = centralized_q(value_target_, *tick.next_state_vec, n);
    for (const PendingAgent& a : *tick.agents) {
      const MaskedPolicy& mp = pending_policy[(size_t)a.grid];
      // Expected target over the agent's own actions; candidate moves use
      // the realized per-grid rewards and the target net's next values.
      Eigen::VectorXd r_k = Eigen::VectorXd::Zero(kActionCount);
      Eigen::VectorXd v_k = Eigen::VectorXd::Zero(kActionCount);
      for (int k = 0; k < kActionCount; ++k) {
        if (mp.probs(k) <= 0.0) continue;
        int dest = a.grid;
        if (k != kStayAction) {
          const int nb = world_.neighbor(a.grid, k);
          if (nb >= 0) dest = nb;  // off-map moves execute as stay
        }
        r_k(k) = (*tick.rewards)(dest) - (cost_enabled_ && dest != a.grid ? cost_ : 0.0);
        v_k(k) = tick.terminal ? 0.0 : next_values(dest);
      }
      const double target = value_target(mp.probs, r_k, v_k, tick.terminal ? 0.0 : hyper_.gamma);

      const double r_real =
          (*tick.rewards)(a.dest) - (cost_enabled_ && a.moved ? cost_ : 0.0);
      const double v_next = tick.terminal ? 0.0 : next_values(a.dest);
      const double adv = advantage(r_real, tick.terminal ? 0.0 : hyper_.gamma, v_next,
                                   pending_values(a.grid));

      value_samples_.push_back(ValueSample{tick.s_idx, a.grid, target});
      policy_samples_.push_back(PolicySample{tick.s_idx, a.grid, a.action, adv, mp.mask});
    }
  };

  // The sink runs one tick behind act; keep the caches for the pending
  // tick alive across iterations.
  std::vector<std::vector<MaskedPolicy>> policy_hist;
  std::vector<Eigen::VectorXd> values_hist;
  auto act_hist = [&](const GlobalState& s, const std::vector<AgentRef>& agents) {
    JointAction a = act(s, agents);
    policy_hist.push_back(pending_policy);
    values_hist.push_back(pending_values);
    return a;
  };
  size_t consumed = 0;
  auto sink_hist = [&](const TickOutcome& tick) {
    pending_policy = policy_hist[consumed];
    pending_values = values_hist[consumed];
    ++consumed;
    sink(tick);
  };

  EpisodeMetrics m = rollout_episode(env, env_seed, store_, count_norm_, act_hist, sink_hist,
                                     hyper_.drop_geo);
  update_value(update_rng);
  update_policy(update_rng);
  value_target_ = value_net_;
  return m;
}

void Ca2cTrainer::update_value(Rng& rng) {
  if (value_samples_.empty()) {
    std::cerr << "ca2c: no value samples, skipping updates\n";
    return;
  }
  const int n = world_.n_grids();
  const int base = (int)store_.at(0).size();
  const int b = std::min<int>(hyper_.batch_size, (int)value_samples_.size());
  for (int u = 0; u < hyper_.m1; ++u) {
    Eigen::MatrixXd inputs = Eigen::MatrixXd::Zero(b, base + n);
    Eigen::VectorXd targets(b);
    for (int i = 0; i < b; ++i) {
      const ValueSample& s = value_samples_[(size_t)rng.uniform_int(value_samples_.size())];
      inputs.row(i).segment(0, base) = store_.at(s.s_idx).transpose();
      inputs(i, base + s.grid) = 1.0;
      targets(i) = s.target;
    }
    const Eigen::MatrixXd& out = value_net_.forward(inputs);
    last_value_loss_ = (out.col(0) - targets).squaredNorm() / (double)b;
    if (last_value_loss_ > hyper_.divergence_guard)
      throw std::runtime_error("ca2c: value loss diverged");
    Eigen::MatrixXd dy = 2.0 * (out.col(0) - targets) / (double)b;
    MlpGradients grads = value_net_.backward(dy);
    adam_step(adam_v_, value_net_, grads);
  }
}

void Ca2cTrainer::update_policy(Rng& rng) {
  if (policy_samples_.empty()) return;
  const int n = world_.n_grids();
  const int base = (int)store_.at(0).size();
  const int b = std::min<int>(hyper_.batch_size, (int)policy_samples_.size());
  for (int u = 0; u < hyper_.m2; ++u) {
    Eigen::MatrixXd inputs = Eigen::MatrixXd::Zero(b, base + n);
    std::vector<const PolicySample*> batch((size_t)b);
    for (int i = 0; i < b; ++i) {
      batch[(size_t)i] = &policy_samples_[(size_t)rng.uniform_int(policy_samples_.size())];
      inputs.row(i).segment(0, base) = store_.at(batch[(size_t)i]->s_idx).transpose();
      inputs(i, base + batch[(size_t)i]->grid) = 1.0;
    }
    const Eigen::MatrixXd& logits = policy_net_.forward(inputs);
    Eigen::MatrixXd dy = Eigen::MatrixXd::Zero(b, kActionCount);
    for (int i = 0; i < b; ++i) {
      const PolicySample& s = *batch[(size_t)i];
      // Ascent on adv * log prob(action): loss gradient is the negative.
      dy.row(i) =
          -masked_logprob_grad(logits.row(i).transpose(), s.mask, s.action, s.adv).transpose() /
          (double)b;
    }
    MlpGradients grads = policy_net_.backward(dy);
    adam_step(adam_p_, policy_net_, grads);
  }
}

JointAction Ca2cTrainer::eval_actions(const GlobalState& state,
                                      const std::vector<AgentRef>& agents, Rng& rng) const {
  return ca2c_policy_forward(value_net_, policy_net_, state, agents, world_, count_norm_,
                             hyper_.drop_collab, hyper_.drop_geo, rng);
}

}  // namespace fleet
