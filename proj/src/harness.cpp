#include "fleet/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "fleet/baselines.hpp"
#include "fleet/ca2c.hpp"
#include "fleet/cdqn.hpp"
#include "fleet/lp_realloc.hpp"
#include "fleet/nn.hpp"

namespace fleet {

namespace {

using nlohmann::json;

constexpr uint64_t kTagPolicyRng = 0xac7104ULL;
constexpr uint64_t kTagUpdateRng = 0x0bda7eULL;

uint64_t fnv1a(const std::string& text) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

int worker_count() {
  const char* env = std::getenv("FLEETSIM_WORKERS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n > 0 ? n : 1;
}

template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
  }
  fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------
// config json

json hotspots_to_json(const std::vector<HotspotRule>& hs) {
  json arr = json::array();
  for (const auto& h : hs)
    arr.push_back({{"grids", h.grids},
                   {"from", h.tick_begin},
                   {"to", h.tick_end},
                   {"multiplier", h.multiplier}});
  return arr;
}

std::vector<HotspotRule> hotspots_from_json(const json& arr) {
  std::vector<HotspotRule> out;
  for (const auto& j : arr) {
    HotspotRule h;
    h.grids = j.at("grids").get<std::vector<int>>();
    h.tick_begin = j.at("from").get<int>();
    h.tick_end = j.at("to").get<int>();
    h.multiplier = j.at("multiplier").get<double>();
    out.push_back(h);
  }
  return out;
}

json pairs_to_json(const std::vector<std::pair<int, double>>& ps) {
  json arr = json::array();
  for (const auto& [g, v] : ps) arr.push_back({{"grid", g}, {"value", v}});
  return arr;
}

std::vector<std::pair<int, double>> pairs_from_json(const json& arr) {
  std::vector<std::pair<int, double>> out;
  for (const auto& j : arr) out.emplace_back(j.at("grid").get<int>(), j.at("value").get<double>());
  return out;
}

json scenario_json(const ExperimentConfig& c) {
  json j;
  j["world"] = {{"rows", c.world.rows},
                {"cols", c.world.cols},
                {"invalid", c.world.invalid},
                {"map_file", c.world.map_file}};
  j["demand"] = {{"kind", c.demand.kind},
                 {"base_rate", c.demand.base_rate},
                 {"hotspots", hotspots_to_json(c.demand.hotspots)},
                 {"price_mean", c.demand.price_mean},
                 {"price_spread", c.demand.price_spread},
                 {"price_overrides", pairs_to_json(c.demand.price_overrides)},
                 {"duration_pmf", c.demand.duration_pmf},
                 {"destination_weights", pairs_to_json(c.demand.destination_weights)},
                 {"deterministic", c.demand.deterministic},
                 {"replay_csv", c.demand.replay_csv}};
  j["sim"] = {{"fleet", c.sim.fleet},
              {"fleet_scale", c.sim.fleet_scale},
              {"horizon", c.sim.horizon},
              {"cost_enabled", c.sim.cost_enabled},
              {"reposition_cost", c.sim.reposition_cost},
              {"reward_mode", c.sim.reward_mode},
              {"online_rate", c.sim.online_rate},
              {"offline_rate", c.sim.offline_rate},
              {"count_norm", c.sim.count_norm},
              {"initial_placement", c.sim.initial_placement}};
  j["run"] = {{"replicates", c.run.replicates},
              {"train_episodes", c.run.train_episodes},
              {"eval_episodes", c.run.eval_episodes},
              {"fit_episodes", c.run.fit_episodes},
              {"train_seed", c.run.train_seed},
              {"eval_seed", c.run.eval_seed},
              {"fit_seed", c.run.fit_seed}};
  return j;
}

}  // namespace

GridWorld WorldConfig::build() const {
  if (!map_file.empty()) return GridWorld::from_map_file(map_file);
  return GridWorld::build(rows, cols, invalid);
}

DemandModel DemandConfig::build(const GridWorld& world, int horizon) const {
  if (kind == "replay") {
    if (replay_csv.empty()) throw std::invalid_argument("replay demand needs replay_csv");
    return DemandModel::replay_from_csv(replay_csv, world, horizon);
  }
  if (kind != "parametric") throw std::invalid_argument("unknown demand kind: " + kind);
  DemandModel m = DemandModel::uniform(world, horizon, base_rate, price_mean, price_spread,
                                       duration_pmf);
  m.hotspots = hotspots;
  m.deterministic = deterministic;
  for (const auto& [g, mean] : price_overrides) {
    if (g < 0 || g >= world.n_grids()) throw std::invalid_argument("price override grid range");
    m.price_mean(g) = mean;
  }
  if (!destination_weights.empty()) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(world.n_grids());
    for (int g : world.valid_ids()) w(g) = 1.0;
    for (const auto& [g, weight] : destination_weights) {
      if (g < 0 || g >= world.n_grids() || weight < 0.0)
        throw std::invalid_argument("destination weight malformed");
      if (world.valid(g)) w(g) = weight;
    }
    const double total = w.sum();
    if (total <= 0.0) throw std::invalid_argument("destination weights sum to zero");
    m.destination.setZero();
    for (int g : world.valid_ids())
      for (int j : world.valid_ids()) m.destination(g, j) = w(j) / total;
  }
  m.validate(world);
  return m;
}

SimConfig SimSettings::build() const {
  SimConfig cfg;
  cfg.fleet = fleet;
  cfg.fleet_scale = fleet_scale;
  cfg.horizon = horizon;
  cfg.cost_enabled = cost_enabled;
  cfg.reposition_cost = reposition_cost;
  if (reward_mode == "averaged")
    cfg.reward_mode = RewardMode::Averaged;
  else if (reward_mode == "raw")
    cfg.reward_mode = RewardMode::Raw;
  else
    throw std::invalid_argument("reward_mode must be averaged or raw");
  cfg.online_rate = online_rate;
  cfg.offline_rate = offline_rate;
  cfg.count_norm = count_norm;
  cfg.initial_placement = initial_placement;
  return cfg;
}

const std::vector<std::string>& method_registry() {
  static const std::vector<std::string> names{"Simulation", "Diffusion",  "Rule-based",
                                              "Value-Iter", "T-Q",        "T-SARSA",
                                              "DQN",        "cDQN",       "cA2C",
                                              "LP-cA2C"};
  return names;
}

void ExperimentConfig::validate() const {
  if (std::find(method_registry().begin(), method_registry().end(), method.name) ==
      method_registry().end()) {
    std::string msg = "unknown method '" + method.name + "'; registry:";
    for (const auto& m : method_registry()) msg += " " + m;
    throw std::invalid_argument(msg);
  }
  if (run.replicates < 1) throw std::invalid_argument("replicates must be >= 1");
  if (run.eval_episodes < 1) throw std::invalid_argument("eval_episodes must be >= 1");
  if (run.fit_episodes < 1) throw std::invalid_argument("fit_episodes must be >= 1");
  if (method.context_drop != "none" && method.context_drop != "collab" &&
      method.context_drop != "collab+geo")
    throw std::invalid_argument("context_drop must be none, collab, or collab+geo");

  // Training and evaluation must draw from disjoint seed streams.
  std::set<uint64_t> train, eval;
  for (int r = 0; r < run.replicates; ++r) {
    for (int e = 0; e < run.train_episodes; ++e)
      train.insert(substream(run.train_seed, {(uint64_t)r, (uint64_t)e}));
    for (int e = 0; e < run.eval_episodes; ++e)
      eval.insert(substream(run.eval_seed, {(uint64_t)r, (uint64_t)e}));
  }
  for (uint64_t s : eval)
    if (train.count(s))
      throw std::invalid_argument("train and eval seed streams overlap; pick distinct seeds");
  if (run.train_seed == run.eval_seed)
    throw std::invalid_argument("train_seed and eval_seed must differ");
}

std::string ExperimentConfig::scenario_hash() const {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                (unsigned long long)fnv1a(scenario_json(*this).dump()));
  return buf;
}

std::string ExperimentConfig::to_json_text() const {
  json j = scenario_json(*this);
  j["method"] = {{"name", method.name},
                 {"label", method.label},
                 {"gamma", method.gamma},
                 {"hidden", method.hidden},
                 {"batch_size", method.batch_size},
                 {"m1", method.m1},
                 {"m2", method.m2},
                 {"learning_rate", method.learning_rate},
                 {"eps_start", method.eps_start},
                 {"eps_end", method.eps_end},
                 {"eps_anneal_episodes", method.eps_anneal_episodes},
                 {"eval_eps", method.eval_eps},
                 {"replay_capacity", method.replay_capacity},
                 {"alpha", method.alpha},
                 {"lp_lambda", method.lp_lambda},
                 {"lp_grouped", method.lp_grouped},
                 {"lp_true_demand", method.lp_true_demand},
                 {"context_drop", method.context_drop},
                 {"net_seed", method.net_seed}};
  j["run"]["out_dir"] = run.out_dir;
  j["run"]["write_logs"] = run.write_logs;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  const json j = json::parse(text);
  ExperimentConfig c;
  if (j.contains("world")) {
    const json& w = j.at("world");
    c.world.rows = w.value("rows", c.world.rows);
    c.world.cols = w.value("cols", c.world.cols);
    c.world.invalid = w.value("invalid", c.world.invalid);
    c.world.map_file = w.value("map_file", c.world.map_file);
  }
  if (j.contains("demand")) {
    const json& d = j.at("demand");
    c.demand.kind = d.value("kind", c.demand.kind);
    c.demand.base_rate = d.value("base_rate", c.demand.base_rate);
    if (d.contains("hotspots")) c.demand.hotspots = hotspots_from_json(d.at("hotspots"));
    c.demand.price_mean = d.value("price_mean", c.demand.price_mean);
    c.demand.price_spread = d.value("price_spread", c.demand.price_spread);
    if (d.contains("price_overrides"))
      c.demand.price_overrides = pairs_from_json(d.at("price_overrides"));
    c.demand.duration_pmf = d.value("duration_pmf", c.demand.duration_pmf);
    if (d.contains("destination_weights"))
      c.demand.destination_weights = pairs_from_json(d.at("destination_weights"));
    c.demand.deterministic = d.value("deterministic", c.demand.deterministic);
    c.demand.replay_csv = d.value("replay_csv", c.demand.replay_csv);
  }
  if (j.contains("sim")) {
    const json& s = j.at("sim");
    c.sim.fleet = s.value("fleet", c.sim.fleet);
    c.sim.fleet_scale = s.value("fleet_scale", c.sim.fleet_scale);
    c.sim.horizon = s.value("horizon", c.sim.horizon);
    c.sim.cost_enabled = s.value("cost_enabled", c.sim.cost_enabled);
    c.sim.reposition_cost = s.value("reposition_cost", c.sim.reposition_cost);
    c.sim.reward_mode = s.value("reward_mode", c.sim.reward_mode);
    c.sim.online_rate = s.value("online_rate", c.sim.online_rate);
    c.sim.offline_rate = s.value("offline_rate", c.sim.offline_rate);
    c.sim.count_norm = s.value("count_norm", c.sim.count_norm);
    c.sim.initial_placement = s.value("initial_placement", c.sim.initial_placement);
  }
  if (j.contains("method")) {
    const json& m = j.at("method");
    c.method.name = m.value("name", c.method.name);
    c.method.label = m.value("label", c.method.label);
    c.method.gamma = m.value("gamma", c.method.gamma);
    c.method.hidden = m.value("hidden", c.method.hidden);
    c.method.batch_size = m.value("batch_size", c.method.batch_size);
    c.method.m1 = m.value("m1", c.method.m1);
    c.method.m2 = m.value("m2", c.method.m2);
    c.method.learning_rate = m.value("learning_rate", c.method.learning_rate);
    c.method.eps_start = m.value("eps_start", c.method.eps_start);
    c.method.eps_end = m.value("eps_end", c.method.eps_end);
    c.method.eps_anneal_episodes = m.value("eps_anneal_episodes", c.method.eps_anneal_episodes);
    c.method.eval_eps = m.value("eval_eps", c.method.eval_eps);
    c.method.replay_capacity = m.value("replay_capacity", c.method.replay_capacity);
    c.method.alpha = m.value("alpha", c.method.alpha);
    c.method.lp_lambda = m.value("lp_lambda", c.method.lp_lambda);
    c.method.lp_grouped = m.value("lp_grouped", c.method.lp_grouped);
    c.method.lp_true_demand = m.value("lp_true_demand", c.method.lp_true_demand);
    c.method.context_drop = m.value("context_drop", c.method.context_drop);
    c.method.net_seed = m.value("net_seed", c.method.net_seed);
  }
  if (j.contains("run")) {
    const json& r = j.at("run");
    c.run.replicates = r.value("replicates", c.run.replicates);
    c.run.train_episodes = r.value("train_episodes", c.run.train_episodes);
    c.run.eval_episodes = r.value("eval_episodes", c.run.eval_episodes);
    c.run.fit_episodes = r.value("fit_episodes", c.run.fit_episodes);
    c.run.train_seed = r.value("train_seed", c.run.train_seed);
    c.run.eval_seed = r.value("eval_seed", c.run.eval_seed);
    c.run.fit_seed = r.value("fit_seed", c.run.fit_seed);
    c.run.out_dir = r.value("out_dir", c.run.out_dir);
    c.run.write_logs = r.value("write_logs", c.run.write_logs);
  }
  return c;
}

void ExperimentConfig::save(const std::string& path) const { atomic_write(path, to_json_text()); }

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

// ---------------------------------------------------------------------------
// training and evaluation internals

namespace {

struct FitData {
  MeanTables means;
  double count_norm = 1.0;
};

struct TrainedPolicy {
  std::string method;
  std::optional<Mlp> q_net;
  std::optional<Mlp> value_net;
  std::optional<Mlp> policy_net;
  std::optional<Eigen::MatrixXd> v_table;
  std::optional<TabularQ> q_table;
};

EpisodeRow make_row(const ExperimentConfig& cfg, const std::string& phase, int replicate,
                    int episode, uint64_t env_seed, const EpisodeMetrics& m,
                    const std::string& scenario) {
  EpisodeRow row;
  row.method = cfg.method.display_name();
  row.replicate = replicate;
  row.phase = phase;
  row.episode = episode;
  row.env_seed = env_seed;
  row.gmv = m.gmv;
  row.orr = m.orr;
  row.served = m.served_orders;
  row.generated = m.generated_orders;
  row.repositions = m.repositions;
  row.scenario = scenario;
  return row;
}

FitData prepare_fit(const ExperimentConfig& cfg, const GridWorld& world,
                    const DemandModel& demand) {
  Env env(world, cfg.sim.build(), demand);
  std::vector<EpisodeLog> logs;
  double max_count = 1.0;
  for (int e = 0; e < cfg.run.fit_episodes; ++e) {
    env.reset(substream(cfg.run.fit_seed, {(uint64_t)e}));
    while (!env.done()) env.step(simulation_policy(env.agents()));
    logs.push_back(env.log());
    for (const auto& rec : env.log().ticks) {
      max_count = std::max(max_count, rec.vehicle_count.maxCoeff());
      max_count = std::max(max_count, rec.order_count.maxCoeff());
    }
  }
  FitData fit;
  fit.means = fit_mean_tables(logs);
  fit.count_norm = cfg.sim.count_norm > 0.0 ? cfg.sim.count_norm : max_count;
  return fit;
}

DqnHyper dqn_hyper(const MethodConfig& m) {
  DqnHyper h;
  h.hidden = m.hidden;
  h.gamma = m.gamma;
  h.lr = m.learning_rate;
  h.batch_size = m.batch_size;
  h.updates_per_episode = m.m1;
  h.replay_capacity = m.replay_capacity;
  h.eps = EpsSchedule{m.eps_start, m.eps_end, m.eps_anneal_episodes};
  h.eval_eps = m.eval_eps;
  h.net_seed = m.net_seed;
  return h;
}

Ca2cHyper ca2c_hyper(const MethodConfig& m) {
  Ca2cHyper h;
  h.hidden = m.hidden;
  h.gamma = m.gamma;
  h.lr = m.learning_rate;
  h.batch_size = m.batch_size;
  h.m1 = m.m1;
  h.m2 = m.m2;
  h.net_seed = m.net_seed;
  h.drop_collab = m.context_drop != "none";
  h.drop_geo = m.context_drop == "collab+geo";
  return h;
}

// Evaluation-time joint-action source for any trained method.
struct EvalActor {
  const ExperimentConfig* cfg = nullptr;
  const GridWorld* world = nullptr;
  const DemandModel* demand = nullptr;
  const FitData* fit = nullptr;
  const TrainedPolicy* trained = nullptr;
  Rng* rng = nullptr;

  JointAction operator()(const GlobalState& state, const std::vector<AgentRef>& agents) const {
    const std::string& name = cfg->method.name;
    if (name == "Simulation") return simulation_policy(agents);
    if (name == "Diffusion") return diffusion_policy(*world, agents, *rng);
    if (name == "Rule-based")
      return rule_based_policy(*world, state, agents, *trained->v_table, *rng);
    if (name == "Value-Iter") {
      ValueIterLearner learner(*trained->v_table, cfg->method.gamma);
      return learner.act(*world, state, agents, *rng);
    }
    if (name == "T-Q" || name == "T-SARSA")
      return trained->q_table->act_eps_greedy(*world, state, agents, cfg->method.eval_eps, *rng);
    if (name == "DQN")
      return idqn_epsilon_greedy(*trained->q_net, state, agents, *world, cfg->method.eval_eps,
                                 fit->count_norm, *rng);
    if (name == "cDQN")
      return cdqn_epsilon_greedy(*trained->q_net, state, agents, *world, cfg->method.eval_eps,
                                 cfg->sim.cost_enabled ? cfg->sim.reposition_cost : 0.0,
                                 fit->count_norm, *rng);
    if (name == "cA2C")
      return ca2c_policy_forward(*trained->value_net, *trained->policy_net, state, agents, *world,
                                 fit->count_norm, cfg->method.context_drop != "none",
                                 cfg->method.context_drop == "collab+geo", *rng);
    if (name == "LP-cA2C") {
      const int n = world->n_grids();
      const Eigen::VectorXd v =
          centralized_q(*trained->value_net, state.vector(fit->count_norm), n);
      Eigen::VectorXd o = Eigen::VectorXd::Zero(n);
      if (state.t + 1 < state.horizon) {
        if (cfg->method.lp_true_demand && !demand->is_replay) {
          for (int g : world->valid_ids()) o(g) = demand->rate(state.t + 1, g);
        } else {
          o = fit->means.order_mean.row(state.t + 1).transpose();
        }
      }
      const double cost = cfg->sim.cost_enabled ? cfg->sim.reposition_cost : 0.0;
      const RepositionProblem problem =
          cfg->method.lp_grouped
              ? build_problem(v, state.vehicle_count, o, *world, cost, cfg->method.lp_lambda)
              : build_problem_ungrouped(v, state.vehicle_count, o, *world, cost,
                                        cfg->method.lp_lambda);
      const RelaxResult relax = solve_relaxation(problem);
      const RepositionPlan plan = round_to_integer(relax.y, problem);
      return plan_to_joint_action(plan, problem, *world, agents, *rng);
    }
    throw std::logic_error("no evaluation actor for method " + name);
  }
};

TrainedPolicy train_replicate(const ExperimentConfig& cfg, const GridWorld& world,
                              const DemandModel& demand, const FitData& fit, int replicate,
                              const std::string& scenario, std::vector<EpisodeRow>* rows) {
  const std::string& name = cfg.method.name;
  TrainedPolicy out;
  out.method = name;
  SimConfig sim = cfg.sim.build();
  sim.count_norm = fit.count_norm;
  Env env(world, sim, demand);

  auto env_seed = [&](int episode) {
    return substream(cfg.run.train_seed, {(uint64_t)replicate, (uint64_t)episode});
  };
  auto record = [&](int episode, uint64_t seed, const EpisodeMetrics& m) {
    if (rows) rows->push_back(make_row(cfg, "train", replicate, episode, seed, m, scenario));
  };
  Rng policy_rng(substream(cfg.run.train_seed, {(uint64_t)replicate, kTagPolicyRng}));
  Rng update_rng(substream(cfg.run.train_seed, {(uint64_t)replicate, kTagUpdateRng}));
  MethodConfig method = cfg.method;
  method.net_seed = cfg.method.net_seed + (uint64_t)replicate;

  if (name == "Simulation" || name == "Diffusion") {
    return out;
  }
  if (name == "Rule-based") {
    out.v_table = fit.means.v_rule;
    return out;
  }
  if (name == "Value-Iter") {
    ValueIterLearner learner(fit.means.v_rule, method.gamma);
    for (int e = 0; e < cfg.run.train_episodes; ++e) {
      const uint64_t seed = env_seed(e);
      env.reset(seed);
      while (!env.done())
        env.step(learner.act(world, env.state(), env.agents(), policy_rng));
      learner.update_from_episode(world, env.log());
      record(e, seed, metrics(env.log(), sim.cost_enabled, sim.reposition_cost));
    }
    out.v_table = learner.table();
    return out;
  }
  if (name == "T-Q" || name == "T-SARSA") {
    const bool sarsa = name == "T-SARSA";
    TabularQ table(sim.horizon, world.n_grids());
    EpsSchedule eps{method.eps_start, method.eps_end, method.eps_anneal_episodes};
    for (int e = 0; e < cfg.run.train_episodes; ++e) {
      const uint64_t seed = env_seed(e);
      StateStore store;
      std::vector<TabularTransition> transitions;
      auto act = [&](const GlobalState& s, const std::vector<AgentRef>& agents) {
        return table.act_eps_greedy(world, s, agents, eps.at(e), policy_rng);
      };
      auto sink = [&](const TickOutcome& tick) {
        for (const PendingAgent& a : *tick.agents) {
          const double r =
              (*tick.rewards)(a.dest) - (sim.cost_enabled && a.moved ? sim.reposition_cost : 0.0);
          transitions.push_back(TabularTransition{tick.t, a.grid, a.action, a.dest, r,
                                                  tick.terminal});
        }
      };
      const EpisodeMetrics m = rollout_episode(env, seed, store, fit.count_norm, act, sink);
      // Updates in experienced order; SARSA bootstraps on the action a
      // managed agent actually took at the destination next tick.
      for (const TabularTransition& tr : transitions) {
        if (sarsa) {
          int next_action = kStayAction;
          if (!tr.terminal) {
            const auto& acts = env.log().ticks[(size_t)(tr.t + 1)].actions_by_grid[(size_t)tr.dest];
            if (!acts.empty()) next_action = acts.front();
          }
          table.sarsa_update(tr, next_action, method.alpha, method.gamma);
        } else {
          table.q_update(world, tr, method.alpha, method.gamma);
        }
      }
      record(e, seed, m);
    }
    out.q_table = table;
    return out;
  }
  if (name == "DQN") {
    DqnHyper hyper = dqn_hyper(method);
    IdqnTrainer trainer(world, hyper, sim.horizon, fit.count_norm, sim.cost_enabled,
                        sim.reposition_cost);
    for (int e = 0; e < cfg.run.train_episodes; ++e) {
      const uint64_t seed = env_seed(e);
      record(e, seed, trainer.train_episode(env, seed, e, policy_rng, update_rng));
    }
    out.q_net = trainer.net();
    return out;
  }
  if (name == "cDQN") {
    DqnHyper hyper = dqn_hyper(method);
    CdqnTrainer trainer(world, hyper, sim.horizon, fit.count_norm, sim.cost_enabled,
                        sim.reposition_cost);
    for (int e = 0; e < cfg.run.train_episodes; ++e) {
      const uint64_t seed = env_seed(e);
      record(e, seed, trainer.train_episode(env, seed, e, policy_rng, update_rng));
    }
    out.q_net = trainer.net();
    return out;
  }
  if (name == "cA2C" || name == "LP-cA2C") {
    Ca2cHyper hyper = ca2c_hyper(method);
    Ca2cTrainer trainer(world, hyper, sim.horizon, fit.count_norm, sim.cost_enabled,
                        sim.reposition_cost);
    trainer.warm_start(fit.means.v_rule);
    for (int e = 0; e < cfg.run.train_episodes; ++e) {
      const uint64_t seed = env_seed(e);
      record(e, seed, trainer.train_episode(env, seed, policy_rng, update_rng));
    }
    out.value_net = trainer.value_net();
    out.policy_net = trainer.policy_net();
    return out;
  }
  throw std::logic_error("no trainer for method " + name);
}

std::vector<EpisodeRow> eval_replicate(const ExperimentConfig& cfg, const GridWorld& world,
                                       const DemandModel& demand, const FitData& fit,
                                       const TrainedPolicy& trained, int replicate,
                                       const std::string& scenario,
                                       std::vector<EpisodeLog>* logs_out) {
  SimConfig sim = cfg.sim.build();
  sim.count_norm = fit.count_norm;
  Env env(world, sim, demand);
  std::vector<EpisodeRow> rows;
  const bool coerce = cfg.method.context_drop == "collab+geo";
  for (int e = 0; e < cfg.run.eval_episodes; ++e) {
    const uint64_t seed = substream(cfg.run.eval_seed, {(uint64_t)replicate, (uint64_t)e});
    Rng rng(substream(cfg.run.eval_seed, {(uint64_t)replicate, (uint64_t)e, kTagPolicyRng}));
    EvalActor actor{&cfg, &world, &demand, &fit, &trained, &rng};
    env.reset(seed);
    while (!env.done()) env.step(actor(env.state(), env.agents()), coerce);
    rows.push_back(make_row(cfg, "eval", replicate, e, seed,
                            metrics(env.log(), sim.cost_enabled, sim.reposition_cost), scenario));
    if (logs_out) logs_out->push_back(env.log());
  }
  return rows;
}

void save_policy(const TrainedPolicy& p, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  if (p.q_net) p.q_net->save(dir + "/q_net.txt");
  if (p.value_net) p.value_net->save(dir + "/value_net.txt");
  if (p.policy_net) p.policy_net->save(dir + "/policy_net.txt");
  if (p.v_table) save_value_table_csv(*p.v_table, dir + "/v_table.csv");
  if (p.q_table) p.q_table->save_csv(dir + "/q_table.csv");
}

TrainedPolicy load_policy(const std::string& method, const std::string& dir, int horizon,
                          int n_grids) {
  namespace fs = std::filesystem;
  TrainedPolicy p;
  p.method = method;
  if (fs::exists(dir + "/q_net.txt")) p.q_net = Mlp::load(dir + "/q_net.txt");
  if (fs::exists(dir + "/value_net.txt")) p.value_net = Mlp::load(dir + "/value_net.txt");
  if (fs::exists(dir + "/policy_net.txt")) p.policy_net = Mlp::load(dir + "/policy_net.txt");
  if (fs::exists(dir + "/v_table.csv"))
    p.v_table = load_value_table_csv(dir + "/v_table.csv", horizon, n_grids);
  if (fs::exists(dir + "/q_table.csv"))
    p.q_table = TabularQ::load_csv(dir + "/q_table.csv", horizon, n_grids);
  return p;
}

std::string csv_header() {
  return "method,replicate,phase,episode,env_seed,gmv,orr,served,generated,repositions,roi,"
         "scenario\n";
}

// The roi cell stays empty unless a baseline run is paired in; standalone
// experiments have no baseline to measure gains against.
std::string row_csv(const EpisodeRow& r, const std::optional<double>& roi = std::nullopt) {
  std::ostringstream out;
  out << r.method << ',' << r.replicate << ',' << r.phase << ',' << r.episode << ',' << r.env_seed
      << ',' << fmt(r.gmv) << ',' << fmt(r.orr) << ',' << r.served << ',' << r.generated << ','
      << r.repositions << ',' << (roi ? fmt(*roi) : std::string()) << ',' << r.scenario << "\n";
  return out.str();
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const GridWorld world = config.world.build();
  const DemandModel demand = config.demand.build(world, config.sim.horizon);
  const std::string scenario = config.scenario_hash();
  const FitData fit = prepare_fit(config, world, demand);

  const int reps = config.run.replicates;
  std::vector<std::vector<EpisodeRow>> train_rows((size_t)reps), eval_rows((size_t)reps);
  std::vector<TrainedPolicy> trained((size_t)reps);
  std::vector<std::vector<EpisodeLog>> logs((size_t)reps);

  parallel_for(reps, [&](int r) {
    trained[(size_t)r] =
        train_replicate(config, world, demand, fit, r, scenario, &train_rows[(size_t)r]);
    eval_rows[(size_t)r] =
        eval_replicate(config, world, demand, fit, trained[(size_t)r], r, scenario,
                       config.run.write_logs ? &logs[(size_t)r] : nullptr);
  });

  ExperimentResult result;
  result.config = config;
  for (int r = 0; r < reps; ++r)
    for (const auto& row : train_rows[(size_t)r]) result.rows.push_back(row);
  for (int r = 0; r < reps; ++r)
    for (const auto& row : eval_rows[(size_t)r]) result.rows.push_back(row);

  result.gmv_by_replicate.resize((size_t)reps);
  result.orr_by_replicate.resize((size_t)reps);
  result.repositions_by_replicate.resize((size_t)reps);
  for (int r = 0; r < reps; ++r) {
    double g = 0.0, o = 0.0, rp = 0.0;
    for (const auto& row : eval_rows[(size_t)r]) {
      g += row.gmv;
      o += row.orr;
      rp += (double)row.repositions;
    }
    const double n = (double)config.run.eval_episodes;
    result.gmv_by_replicate[(size_t)r] = g / n;
    result.orr_by_replicate[(size_t)r] = o / n;
    result.repositions_by_replicate[(size_t)r] = rp / n;
  }

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / (double)v.size();
  };
  auto std_of = [&](const std::vector<double>& v, double mean) {
    if (v.size() < 2) return 0.0;
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return std::sqrt(s / (double)(v.size() - 1));
  };
  AggregateRow agg;
  agg.method = config.method.display_name();
  agg.scenario = scenario;
  agg.replicates = reps;
  agg.gmv_mean = mean_of(result.gmv_by_replicate);
  agg.gmv_std = std_of(result.gmv_by_replicate, agg.gmv_mean);
  agg.orr_mean = mean_of(result.orr_by_replicate);
  agg.orr_std = std_of(result.orr_by_replicate, agg.orr_mean);
  agg.repositions_mean = mean_of(result.repositions_by_replicate);
  result.aggregate = agg;

  if (!config.run.out_dir.empty()) {
    const std::string dir = config.run.out_dir + "/" + config.method.display_name();
    std::string episodes = csv_header();
    for (const auto& row : result.rows) episodes += row_csv(row);
    atomic_write(dir + "/episodes.csv", episodes);
    std::ostringstream agg_csv;
    agg_csv << "method,scenario,replicates,gmv_mean,gmv_std,orr_mean,orr_std,repositions_mean\n"
            << agg.method << ',' << agg.scenario << ',' << agg.replicates << ','
            << fmt(agg.gmv_mean) << ',' << fmt(agg.gmv_std) << ',' << fmt(agg.orr_mean) << ','
            << fmt(agg.orr_std) << ',' << fmt(agg.repositions_mean) << "\n";
    atomic_write(dir + "/aggregate.csv", agg_csv.str());
    atomic_write(dir + "/config.json", config.to_json_text());
    save_value_table_csv(fit.means.v_rule, dir + "/v_rule.csv");
    save_value_table_csv(fit.means.order_mean, dir + "/order_mean.csv");
    for (int r = 0; r < reps; ++r)
      save_policy(trained[(size_t)r], dir + "/rep" + std::to_string(r));
    if (config.run.write_logs)
      for (int r = 0; r < reps; ++r)
        for (size_t e = 0; e < logs[(size_t)r].size(); ++e)
          logs[(size_t)r][e].save(dir + "/rep" + std::to_string(r) + "/eval_episode_" +
                                  std::to_string(e) + ".jsonl");
  }
  return result;
}

void train_only(const ExperimentConfig& config) {
  config.validate();
  if (config.run.out_dir.empty()) throw std::invalid_argument("train_only needs run.out_dir");
  const GridWorld world = config.world.build();
  const DemandModel demand = config.demand.build(world, config.sim.horizon);
  const std::string scenario = config.scenario_hash();
  const FitData fit = prepare_fit(config, world, demand);

  const int reps = config.run.replicates;
  std::vector<std::vector<EpisodeRow>> train_rows((size_t)reps);
  std::vector<TrainedPolicy> trained((size_t)reps);
  parallel_for(reps, [&](int r) {
    trained[(size_t)r] =
        train_replicate(config, world, demand, fit, r, scenario, &train_rows[(size_t)r]);
  });

  const std::string dir = config.run.out_dir + "/" + config.method.display_name();
  std::string episodes = csv_header();
  for (int r = 0; r < reps; ++r)
    for (const auto& row : train_rows[(size_t)r]) episodes += row_csv(row);
  atomic_write(dir + "/episodes.csv", episodes);
  atomic_write(dir + "/config.json", config.to_json_text());
  save_value_table_csv(fit.means.v_rule, dir + "/v_rule.csv");
  save_value_table_csv(fit.means.order_mean, dir + "/order_mean.csv");
  for (int r = 0; r < reps; ++r) save_policy(trained[(size_t)r], dir + "/rep" + std::to_string(r));
}

ExperimentResult evaluate_trained(const ExperimentConfig& config,
                                  const std::string& artifacts_dir) {
  config.validate();
  const GridWorld world = config.world.build();
  const DemandModel demand = config.demand.build(world, config.sim.horizon);
  const std::string scenario = config.scenario_hash();

  // Refuse artifacts trained on a different scenario.
  namespace fs = std::filesystem;
  const std::string saved_cfg = artifacts_dir + "/config.json";
  if (fs::exists(saved_cfg)) {
    const ExperimentConfig prior = ExperimentConfig::load(saved_cfg);
    if (prior.scenario_hash() != scenario)
      throw std::invalid_argument("artifacts were trained on scenario " + prior.scenario_hash() +
                                  ", this config is " + scenario);
  }

  const FitData fit = prepare_fit(config, world, demand);
  const int reps = config.run.replicates;
  std::vector<std::vector<EpisodeRow>> eval_rows((size_t)reps);
  parallel_for(reps, [&](int r) {
    const TrainedPolicy trained = load_policy(
        config.method.name, artifacts_dir + "/rep" + std::to_string(r), config.sim.horizon,
        world.n_grids());
    eval_rows[(size_t)r] =
        eval_replicate(config, world, demand, fit, trained, r, scenario, nullptr);
  });

  ExperimentResult result;
  result.config = config;
  result.gmv_by_replicate.resize((size_t)reps);
  result.orr_by_replicate.resize((size_t)reps);
  result.repositions_by_replicate.resize((size_t)reps);
  for (int r = 0; r < reps; ++r) {
    double g = 0.0, o = 0.0, rp = 0.0;
    for (const auto& row : eval_rows[(size_t)r]) {
      result.rows.push_back(row);
      g += row.gmv;
      o += row.orr;
      rp += (double)row.repositions;
    }
    const double n = (double)config.run.eval_episodes;
    result.gmv_by_replicate[(size_t)r] = g / n;
    result.orr_by_replicate[(size_t)r] = o / n;
    result.repositions_by_replicate[(size_t)r] = rp / n;
  }
  double gm = 0.0, om = 0.0, rm = 0.0;
  for (int r = 0; r < reps; ++r) {
    gm += result.gmv_by_replicate[(size_t)r];
    om += result.orr_by_replicate[(size_t)r];
    rm += result.repositions_by_replicate[(size_t)r];
  }
  result.aggregate.method = config.method.display_name();
  result.aggregate.scenario = scenario;
  result.aggregate.replicates = reps;
  result.aggregate.gmv_mean = gm / reps;
  result.aggregate.orr_mean = om / reps;
  result.aggregate.repositions_mean = rm / reps;
  double gs = 0.0, os = 0.0;
  if (reps > 1) {
    for (int r = 0; r < reps; ++r) {
      gs += std::pow(result.gmv_by_replicate[(size_t)r] - result.aggregate.gmv_mean, 2);
      os += std::pow(result.orr_by_replicate[(size_t)r] - result.aggregate.orr_mean, 2);
    }
    result.aggregate.gmv_std = std::sqrt(gs / (reps - 1));
    result.aggregate.orr_std = std::sqrt(os / (reps - 1));
  }

  if (!config.run.out_dir.empty()) {
    const std::string dir = config.run.out_dir + "/" + config.method.display_name();
    std::string episodes = csv_header();
    for (const auto& row : result.rows) episodes += row_csv(row);
    atomic_write(dir + "/eval_episodes.csv", episodes);
  }
  return result;
}

std::vector<ComparisonRow> compare(const ExperimentConfig& base,
                                   const std::vector<std::string>& methods) {
  std::vector<ExperimentConfig> configs;
  bool has_sim = false;
  for (const auto& name : methods)
    if (name == "Simulation") has_sim = true;
  if (!has_sim) {
    ExperimentConfig sim = base;
    sim.method = MethodConfig{};
    sim.method.name = "Simulation";
    sim.method.gamma = base.method.gamma;
    configs.push_back(sim);
  }
  for (const auto& name : methods) {
    ExperimentConfig c = base;
    c.method.name = name;
    c.method.label.clear();
    configs.push_back(c);
  }
  return compare_configs(configs);
}

std::vector<ComparisonRow> compare_configs(const std::vector<ExperimentConfig>& configs) {
  if (configs.empty()) throw std::invalid_argument("compare: no configs");
  const std::string scenario = configs.front().scenario_hash();
  for (const auto& c : configs)
    if (c.scenario_hash() != scenario)
      throw std::invalid_argument("compare: scenario mismatch between configs (" + scenario +
                                  " vs " + c.scenario_hash() + ")");
  int sim_index = -1;
  for (size_t i = 0; i < configs.size(); ++i)
    if (configs[i].method.name == "Simulation") sim_index = (int)i;
  if (sim_index < 0) throw std::invalid_argument("compare: a Simulation baseline is required");

  std::vector<ExperimentResult> results(configs.size());
  for (size_t i = 0; i < configs.size(); ++i) results[i] = run_experiment(configs[i]);

  const ExperimentResult& sim = results[(size_t)sim_index];
  std::vector<ComparisonRow> rows;
  for (const auto& res : results) {
    ComparisonRow row;
    row.method = res.config.method.display_name();
    const int reps = (int)res.gmv_by_replicate.size();
    std::vector<double> norm((size_t)reps);
    double roi_sum = 0.0;
    bool roi_ok = true;
    for (int r = 0; r < reps; ++r) {
      norm[(size_t)r] = 100.0 * res.gmv_by_replicate[(size_t)r] / sim.gmv_by_replicate[(size_t)r];
      if (res.repositions_by_replicate[(size_t)r] > 0.0)
        roi_sum += (res.gmv_by_replicate[(size_t)r] - sim.gmv_by_replicate[(size_t)r]) /
                   res.repositions_by_replicate[(size_t)r];
      else
        roi_ok = false;
    }
    double mean = 0.0;
    for (double x : norm) mean += x;
    mean /= (double)reps;
    double stdv = 0.0;
    if (reps > 1) {
      for (double x : norm) stdv += (x - mean) * (x - mean);
      stdv = std::sqrt(stdv / (double)(reps - 1));
    }
    row.norm_gmv_mean = res.config.method.name == "Simulation" ? 100.0 : mean;
    row.norm_gmv_std = stdv;
    row.orr_mean = res.aggregate.orr_mean;
    row.repositions_mean = res.aggregate.repositions_mean;
    if (roi_ok && res.config.method.name != "Simulation") row.roi = roi_sum / (double)reps;
    rows.push_back(row);
  }
  return rows;
}

void write_comparison_csv(const std::vector<ComparisonRow>& rows, const std::string& scenario,
                          const std::string& path) {
  std::string out = "method,norm_gmv_mean,norm_gmv_std,orr_mean,repositions_mean,roi,scenario\n";
  for (const auto& r : rows) {
    out += r.method + "," + fmt(r.norm_gmv_mean) + "," + fmt(r.norm_gmv_std) + "," +
           fmt(r.orr_mean) + "," + fmt(r.repositions_mean) + "," +
           (r.roi ? fmt(*r.roi) : std::string("")) + "," + scenario + "\n";
  }
  atomic_write(path, out);
}

ExperimentConfig desk_scenario() {
  ExperimentConfig c;
  c.world.rows = 5;
  c.world.cols = 5;
  c.sim.fleet = 130;
  c.sim.horizon = 144;
  c.sim.cost_enabled = true;
  c.sim.reposition_cost = 0.6;

  c.demand.base_rate = 0.35;
  c.demand.price_mean = 10.0;
  c.demand.price_spread = 4.0;
  c.demand.duration_pmf = {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0};
  // Two alternating hotspot neighborhoods on opposite corners of the map.
  const GridWorld w = GridWorld::build(5, 5);
  std::vector<int> spot_a = w.neighborhood(6);
  std::vector<int> spot_b = w.neighborhood(18);
  c.demand.hotspots.push_back(HotspotRule{spot_a, 18, 60, 12.0});
  c.demand.hotspots.push_back(HotspotRule{spot_b, 84, 126, 12.0});
  for (int g : spot_a) c.demand.price_overrides.emplace_back(g, 14.0);
  for (int g : spot_b) c.demand.price_overrides.emplace_back(g, 14.0);
  // Trip destinations skew away from the hotspots, so standing supply
  // drains out of them and management has to push it back.
  for (int g : spot_a) c.demand.destination_weights.emplace_back(g, 0.4);
  for (int g : spot_b) c.demand.destination_weights.emplace_back(g, 0.4);

  c.run.replicates = 3;
  c.run.train_episodes = 15;
  c.run.eval_episodes = 5;
  c.run.fit_episodes = 10;

  c.method.hidden = {64, 32, 16};
  c.method.batch_size = 256;
  c.method.m1 = 300;
  c.method.m2 = 300;
  c.method.alpha = 0.3;
  c.method.lp_lambda = 0.2;
  return c;
}

ExperimentConfig tiny_scenario() {
  ExperimentConfig c;
  c.world.rows = 3;
  c.world.cols = 3;
  c.sim.fleet = 20;
  c.sim.horizon = 24;
  c.demand.base_rate = 0.5;
  c.demand.price_mean = 8.0;
  c.demand.price_spread = 3.0;
  c.demand.hotspots.push_back(HotspotRule{{4, 1, 3}, 6, 18, 6.0});
  c.run.replicates = 2;
  c.run.train_episodes = 4;
  c.run.eval_episodes = 3;
  c.run.fit_episodes = 4;
  c.method.hidden = {24, 12};
  c.method.batch_size = 64;
  c.method.m1 = 40;
  c.method.m2 = 40;
  return c;
}

}  // namespace fleet
