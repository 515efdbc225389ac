#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "fleet/cdqn.hpp"
#include "fleet/hexgrid.hpp"
#include "fleet/nn.hpp"
#include "fleet/rng.hpp"
#include "fleet/simcore.hpp"

namespace fleet {

// Masked action distribution for one grid: positive logits times the
// collaborative and geographic bits, L1-normalized.
struct MaskedPolicy {
  Eigen::VectorXd probs;                      // 7-vector, zero on masked actions
  std::array<uint8_t, kActionCount> mask{};   // C*G bits as used
};

MaskedPolicy masked_policy(const Eigen::VectorXd& logits,
                           const std::array<uint8_t, kActionCount>& mask);

// Alg. "policy forward": centralized state values, per-grid contexts,
// masked probabilities, sampled joint action. Per-grid outputs are
// reported through the optional pointers.
JointAction ca2c_policy_forward(const Mlp& value_net, const Mlp& policy_net,
                                const GlobalState& state, const std::vector<AgentRef>& agents,
                                const GridWorld& world, double count_norm, bool drop_collab,
                                bool drop_geo, Rng& rng,
                                std::vector<MaskedPolicy>* policy_by_grid = nullptr,
                                Eigen::VectorXd* values_out = nullptr);

// Expected one-step target: sum over actions of prob * (reward + gamma *
// next value). Vectors must share one length; probabilities of masked
// actions are zero.
double value_target(const Eigen::VectorXd& probs, const Eigen::VectorXd& rewards,
                    const Eigen::VectorXd& next_values, double gamma);

double advantage(double reward, double gamma, double v_next, double v_now);

// d/d(logits) of adv * log prob(action) under the masked distribution.
// The sampled action is always unmasked and logits are strictly positive.
Eigen::VectorXd masked_logprob_grad(const Eigen::VectorXd& logits,
                                    const std::array<uint8_t, kActionCount>& mask, int action,
                                    double adv);

struct Ca2cHyper {
  std::vector<int> hidden{128, 64, 32};
  double gamma = 0.9;
  double lr = 1e-3;
  int batch_size = 3000;
  int m1 = 4000;  // value batches per episode
  int m2 = 4000;  // policy batches per episode
  uint64_t net_seed = 9;
  bool drop_collab = false;
  bool drop_geo = false;
  double divergence_guard = 1e6;
};

// Regresses the net onto table(t, grid) over inputs holding only the time
// and grid one-hots. Returns the final mean-squared error; warns (without
// throwing) when the tolerance is not reached within max_epochs.
double warm_start_value(Mlp& net, const Eigen::MatrixXd& table, double lr = 1e-3,
                        double tolerance = 1e-2, int max_epochs = 400, int batch_size = 512,
                        uint64_t seed = 11);

// Two-stage contextual actor-critic: collect one episode with expected
// value targets and advantages computed from realized per-grid rewards,
// then run M1 value batches and M2 policy batches. The value target net
// refreshes at episode end.
class Ca2cTrainer {
 public:
  Ca2cTrainer(const GridWorld& world, const Ca2cHyper& hyper, int horizon, double count_norm,
              bool cost_enabled, double cost);

  void warm_start(const Eigen::MatrixXd& v_table);
  EpisodeMetrics train_episode(Env& env, uint64_t env_seed, Rng& policy_rng, Rng& update_rng);
  JointAction eval_actions(const GlobalState& state, const std::vector<AgentRef>& agents,
                           Rng& rng) const;

  const Mlp& value_net() const { return value_net_; }
  Mlp& value_net() { return value_net_; }
  const Mlp& policy_net() const { return policy_net_; }
  Mlp& policy_net() { return policy_net_; }
  double last_value_loss() const { return last_value_loss_; }

 private:
  struct ValueSample {
    int s_idx;
    int grid;
    double target;
  };
  struct PolicySample {
    int s_idx;
    int grid;
    int action;
    double adv;
    std::array<uint8_t, kActionCount> mask;
  };

  void update_value(Rng& rng);
  void update_policy(Rng& rng);

  const GridWorld& world_;
  Ca2cHyper hyper_;
  double count_norm_;
  bool cost_enabled_;
  double cost_;
  Mlp value_net_, value_target_, policy_net_;
  AdamState adam_v_, adam_p_;
  StateStore store_;
  std::vector<ValueSample> value_samples_;
  std::vector<PolicySample> policy_samples_;
  double last_value_loss_ = 0.0;
};

}  // namespace fleet
