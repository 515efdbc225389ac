#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "fleet/hexgrid.hpp"
#include "fleet/nn.hpp"
#include "fleet/rng.hpp"
#include "fleet/simcore.hpp"

namespace fleet {

// Binary mask over the 7 directions keeping moves toward grids whose
// centralized value is at least the current grid's (plus the reposition
// cost when enabled). Stay always survives.
struct CollabContext {
  std::array<uint8_t, kActionCount> bits{};
  bool allows(int k) const { return bits[(size_t)k] != 0; }
};

CollabContext collaborative_context_q(const Eigen::VectorXd& values, const GridWorld& world,
                                      int grid, double cost = 0.0);

// Evaluates net([state, one_hot(j)]) for every grid j; one scalar per
// destination grid. Any agent's action value toward grid j is read off
// entry j.
Eigen::VectorXd centralized_q(const Mlp& net, const Eigen::VectorXd& state_vec, int n_grids);

// Agent-level 7-vector of action values from the centralized table;
// geographically invalid directions are zero.
Eigen::VectorXd agent_action_values(const Eigen::VectorXd& centralized, const GridWorld& world,
                                    int grid);

struct EpsSchedule {
  double start = 0.5;
  double end = 0.1;
  int anneal_episodes = 15;
  double at(int episode) const {
    if (anneal_episodes <= 1) return end;
    const double frac = std::min(1.0, (double)episode / (double)(anneal_episodes - 1));
    return start + (end - start) * frac;
  }
};

JointAction cdqn_epsilon_greedy(const Mlp& net, const GlobalState& state,
                                const std::vector<AgentRef>& agents, const GridWorld& world,
                                double epsilon, double collab_cost, double count_norm, Rng& rng);

JointAction idqn_epsilon_greedy(const Mlp& net, const GlobalState& state,
                                const std::vector<AgentRef>& agents, const GridWorld& world,
                                double epsilon, double count_norm, Rng& rng);

// Append-only store of per-tick state vectors shared by transitions.
class StateStore {
 public:
  int add(Eigen::VectorXd s) {
    states_.push_back(std::move(s));
    return (int)states_.size() - 1;
  }
  const Eigen::VectorXd& at(int i) const { return states_[(size_t)i]; }
  size_t size() const { return states_.size(); }

 private:
  std::vector<Eigen::VectorXd> states_;
};

struct Transition {
  int t = 0;
  int grid = 0;
  int action = 0;
  int dest = 0;
  double reward = 0.0;
  bool terminal = false;
  int s_idx = -1;
  int s_next_idx = -1;
};

// Fixed-capacity FIFO ring with uniform sampling.
class ReplayMemory {
 public:
  explicit ReplayMemory(size_t capacity) : capacity_(capacity) { buf_.reserve(capacity); }
  void push(const Transition& tr) {
    if (buf_.size() < capacity_) {
      buf_.push_back(tr);
    } else {
      buf_[next_] = tr;
      next_ = (next_ + 1) % capacity_;
    }
  }
  size_t size() const { return buf_.size(); }
  size_t capacity() const { return capacity_; }
  const Transition& sample(Rng& rng) const { return buf_[(size_t)rng.uniform_int(buf_.size())]; }
  const Transition& at(size_t i) const { return buf_[i]; }

 private:
  std::vector<Transition> buf_;
  size_t capacity_;
  size_t next_ = 0;
};

// One finalized tick handed to a rollout sink: the agents that acted at
// tick t together with the per-grid rewards their arrivals realized.
struct PendingAgent {
  int grid = 0;
  int action = 0;
  int dest = 0;
  bool moved = false;
};

struct TickOutcome {
  int t = 0;
  int s_idx = -1;
  int s_next_idx = -1;  // -1 at the terminal tick
  bool terminal = false;
  const std::vector<PendingAgent>* agents = nullptr;
  const Eigen::VectorXd* rewards = nullptr;           // per-grid, zero vector at terminal
  const Eigen::VectorXd* next_state_vec = nullptr;    // normalized, null at terminal
};

// Drives one episode. `act(state, agents)` returns a joint action;
// `sink(TickOutcome)` receives each tick once its rewards are realized
// (one step later; the terminal tick realizes zero collection).
template <typename ActFn, typename SinkFn>
EpisodeMetrics rollout_episode(Env& env, uint64_t env_seed, StateStore& store, double count_norm,
                               ActFn&& act, SinkFn&& sink, bool coerce_invalid_to_stay = false) {
  GlobalState state = env.reset(env_seed);
  int s_idx = store.add(state.vector(count_norm));
  std::vector<PendingAgent> pending;
  int pending_t = -1, pending_s = -1;

  const Eigen::VectorXd zero_rewards = Eigen::VectorXd::Zero(env.world().n_grids());
  while (!env.done()) {
    const auto agents = env.agents();
    JointAction actions = act(state, agents);
    std::vector<PendingAgent> current;
    current.reserve(agents.size());
    for (size_t i = 0; i < agents.size(); ++i) {
      const int g = agents[i].grid;
      const int k = actions[i];
      const int dest = (k == kStayAction || env.world().neighbor(g, k) < 0)
                           ? g
                           : env.world().neighbor(g, k);
      current.push_back(PendingAgent{g, k, dest, dest != g});
    }
    StepOutcome outcome = env.step(actions, coerce_invalid_to_stay);
    if (pending_t >= 0) {
      TickOutcome tick{pending_t, pending_s, s_idx,          false,
                       &pending,  &outcome.rewards, &store.at(s_idx)};
      sink(tick);
    }
    pending = std::move(current);
    pending_t = state.t;
    pending_s = s_idx;
    if (!outcome.done) {
      state = outcome.next_state;
      s_idx = store.add(state.vector(count_norm));
    } else {
      TickOutcome tick{pending_t, pending_s, -1, true, &pending, &zero_rewards, nullptr};
      sink(tick);
    }
  }
  return metrics(env.log(), env.config().cost_enabled, env.config().reposition_cost);
}

struct DqnHyper {
  std::vector<int> hidden{128, 64, 32};
  double gamma = 0.9;
  double lr = 1e-3;
  int batch_size = 3000;
  int updates_per_episode = 4000;  // M1
  size_t replay_capacity = 200000;
  EpsSchedule eps;
  double eval_eps = 0.1;
  uint64_t net_seed = 7;
};

// Shared-net contextual DQN: centralized per-grid action values, context
// masking at decision time, replay training against a per-episode target
// net. With costs enabled the cost enters the collaborative mask, not the
// stored rewards.
class CdqnTrainer {
 public:
  CdqnTrainer(const GridWorld& world, const DqnHyper& hyper, int horizon, double count_norm,
              bool cost_enabled, double cost);

  EpisodeMetrics train_episode(Env& env, uint64_t env_seed, int episode_index, Rng& policy_rng,
                               Rng& update_rng);
  JointAction eval_actions(const GlobalState& state, const std::vector<AgentRef>& agents,
                           Rng& rng) const;

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  const Mlp& target_net() const { return target_; }
  const ReplayMemory& memory() const { return memory_; }
  double last_loss() const { return last_loss_; }

 private:
  void update_batches(Rng& rng);

  const GridWorld& world_;
  DqnHyper hyper_;
  double count_norm_;
  bool cost_enabled_;
  double cost_;
  Mlp net_, target_;
  AdamState adam_;
  ReplayMemory memory_;
  StateStore store_;
  double last_loss_ = 0.0;
};

// Independent DQN: per-direction action values from the shared net, ELU
// hidden units, geographic masking only; reposition cost enters stored
// rewards when enabled.
class IdqnTrainer {
 public:
  IdqnTrainer(const GridWorld& world, const DqnHyper& hyper, int horizon, double count_norm,
              bool cost_enabled, double cost);

  EpisodeMetrics train_episode(Env& env, uint64_t env_seed, int episode_index, Rng& policy_rng,
                               Rng& update_rng);
  JointAction eval_actions(const GlobalState& state, const std::vector<AgentRef>& agents,
                           Rng& rng) const;

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }

 private:
  void update_batches(Rng& rng);

  const GridWorld& world_;
  DqnHyper hyper_;
  double count_norm_;
  bool cost_enabled_;
  double cost_;
  Mlp net_, target_;
  AdamState adam_;
  ReplayMemory memory_;
  StateStore store_;
  double last_loss_ = 0.0;
};

}  // namespace fleet
