#include "fleet/simcore.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace fleet {

namespace {

// Stream tags for per-episode substreams.
constexpr uint64_t kTagInit = 0x696e6974ULL;
constexpr uint64_t kTagOrders = 0x6f726472ULL;
constexpr uint64_t kTagAssign = 0x6173676eULL;
constexpr uint64_t kTagStatus = 0x73746174ULL;

}  // namespace

Eigen::VectorXd GlobalState::vector(double count_norm) const {
  const int n = n_grids();
  const double norm = count_norm > 0.0 ? count_norm : 1.0;
  Eigen::VectorXd out = Eigen::VectorXd::Zero(state_dim(n, horizon));
  out.segment(0, n) = vehicle_count / norm;
  out.segment(n, n) = order_count / norm;
  if (!terminal && t >= 0 && t < horizon) out(2 * n + t) = 1.0;
  return out;
}

Eigen::VectorXd agent_state_vector(const GlobalState& s, int grid, double count_norm) {
  const int n = s.n_grids();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(agent_state_dim(n, s.horizon));
  out.segment(0, state_dim(n, s.horizon)) = s.vector(count_norm);
  out(state_dim(n, s.horizon) + grid) = 1.0;
  return out;
}

void SimConfig::validate(const GridWorld& world) const {
  if (fleet < 0) throw std::invalid_argument("fleet must be >= 0");
  if (fleet_scale < 0.0) throw std::invalid_argument("fleet_scale must be >= 0");
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (reposition_cost < 0.0) throw std::invalid_argument("reposition cost must be >= 0");
  if (online_rate < 0.0 || online_rate > 1.0 || offline_rate < 0.0 || offline_rate > 1.0)
    throw std::invalid_argument("online/offline rates must be in [0,1]");
  if (!initial_placement.empty()) {
    if ((int)initial_placement.size() != world.n_grids())
      throw std::invalid_argument("initial_placement must have one entry per grid");
    for (int g = 0; g < world.n_grids(); ++g) {
      if (initial_placement[(size_t)g] < 0)
        throw std::invalid_argument("initial_placement entries must be >= 0");
      if (initial_placement[(size_t)g] > 0 && !world.valid(g))
        throw std::invalid_argument("initial_placement puts vehicles on an invalid grid");
    }
  }
}

MatchResult two_stage_match(const GridWorld& world, const std::vector<Order>& orders,
                            const std::vector<std::vector<int>>& available_by_grid, Rng rng) {
  const int n = world.n_grids();
  MatchResult res;
  res.leftover_by_grid.assign((size_t)n, {});
  // Per-grid vehicle queues in seeded-shuffled order.
  std::vector<std::vector<int>> queue((size_t)n);
  for (int g = 0; g < n; ++g) {
    queue[(size_t)g] = available_by_grid[(size_t)g];
    rng.shuffle(queue[(size_t)g]);
  }
  // Orders by descending price, creation order breaking ties.
  std::vector<int> order_idx(orders.size());
  std::iota(order_idx.begin(), order_idx.end(), 0);
  std::stable_sort(order_idx.begin(), order_idx.end(), [&orders](int a, int b) {
    return orders[(size_t)a].price > orders[(size_t)b].price;
  });

  auto take = [&queue](int g) {
    int id = queue[(size_t)g].back();
    queue[(size_t)g].pop_back();
    return id;
  };

  std::vector<int> unfilled;
  for (int oi : order_idx) {
    const int g = orders[(size_t)oi].origin;
    if (!queue[(size_t)g].empty())
      res.pairs.push_back(MatchPair{oi, take(g), g});
    else
      unfilled.push_back(oi);
  }
  for (int oi : unfilled) {
    const int g = orders[(size_t)oi].origin;
    std::vector<int> scan = world.neighbors(g);
    rng.shuffle(scan);
    for (int nb : scan) {
      if (!queue[(size_t)nb].empty()) {
        res.pairs.push_back(MatchPair{oi, take(nb), nb});
        break;
      }
    }
  }
  for (int g = 0; g < n; ++g) {
    res.leftover_by_grid[(size_t)g] = queue[(size_t)g];
    std::sort(res.leftover_by_grid[(size_t)g].begin(), res.leftover_by_grid[(size_t)g].end());
  }
  return res;
}

Env::Env(GridWorld world, SimConfig config, DemandModel demand)
    : world_(std::move(world)), config_(std::move(config)), demand_(std::move(demand)) {
  config_.validate(world_);
  demand_.validate(world_);
  if (demand_.horizon != config_.horizon)
    throw std::invalid_argument("demand horizon != sim horizon");
}

std::vector<std::vector<int>> Env::available_by_grid() const {
  std::vector<std::vector<int>> out((size_t)world_.n_grids());
  for (const auto& v : vehicles_)
    if (v.status == VehicleStatus::Available) out[(size_t)v.location].push_back(v.id);
  return out;
}

GlobalState Env::reset(uint64_t seed) {
  seed_ = seed;
  t_ = 0;
  started_ = true;
  orders_.clear();
  match_ = MatchResult{};
  agents_.clear();
  log_ = EpisodeLog{world_.n_grids(), config_.horizon, {}};

  const int fleet = (int)std::floor((double)config_.fleet * config_.fleet_scale);
  vehicles_.clear();
  Rng init(substream(seed_, {kTagInit}));
  if (!config_.initial_placement.empty()) {
    int id = 0;
    for (int g = 0; g < world_.n_grids(); ++g)
      for (int i = 0; i < config_.initial_placement[(size_t)g]; ++i)
        vehicles_.push_back(Vehicle{id++, g, VehicleStatus::Available, -1, -1});
  } else {
    const auto valid = world_.valid_ids();
    for (int id = 0; id < fleet; ++id) {
      const int g = valid[(size_t)init.uniform_int(valid.size())];
      vehicles_.push_back(Vehicle{id, g, VehicleStatus::Available, -1, -1});
    }
  }

  arrivals_ = Eigen::VectorXi::Zero(world_.n_grids());
  for (const auto& v : vehicles_)
    if (v.status == VehicleStatus::Available) arrivals_(v.location) += 1;

  generate_orders();
  run_pre_dispatch();
  return state_;
}

void Env::status_updates() {
  Rng rng(substream(seed_, {kTagStatus, (uint64_t)t_}));
  for (auto& v : vehicles_) {
    if (v.status == VehicleStatus::OnService && v.busy_until <= t_) {
      v.location = v.dropoff;
      v.status = VehicleStatus::Available;
      v.busy_until = -1;
      v.dropoff = -1;
    }
  }
  if (config_.offline_rate > 0.0 || config_.online_rate > 0.0) {
    for (auto& v : vehicles_) {
      if (v.status == VehicleStatus::Available) {
        if (rng.bernoulli(config_.offline_rate)) v.status = VehicleStatus::Offline;
      } else if (v.status == VehicleStatus::Offline) {
        if (rng.bernoulli(config_.online_rate)) v.status = VehicleStatus::Available;
      }
    }
  }
  arrivals_ = Eigen::VectorXi::Zero(world_.n_grids());
  for (const auto& v : vehicles_)
    if (v.status == VehicleStatus::Available) arrivals_(v.location) += 1;
}

void Env::generate_orders() {
  Rng rng(substream(seed_, {kTagOrders, (uint64_t)t_}));
  orders_ = sample_orders(demand_, t_, rng, world_);
}

void Env::run_pre_dispatch() {
  Rng rng(substream(seed_, {kTagAssign, (uint64_t)t_}));
  match_ = two_stage_match(world_, orders_, available_by_grid(), rng);

  agents_.clear();
  Eigen::VectorXd veh = Eigen::VectorXd::Zero(world_.n_grids());
  Eigen::VectorXd ord = Eigen::VectorXd::Zero(world_.n_grids());
  for (int g = 0; g < world_.n_grids(); ++g) {
    veh(g) = (double)match_.leftover_by_grid[(size_t)g].size();
    for (int id : match_.leftover_by_grid[(size_t)g]) agents_.push_back(AgentRef{id, g});
  }
  for (const auto& o : orders_) ord(o.origin) += 1.0;

  state_.t = t_;
  state_.horizon = config_.horizon;
  state_.terminal = false;
  state_.vehicle_count = veh;
  state_.order_count = ord;
}

Eigen::VectorXi Env::pre_dispatch_counts() const {
  Eigen::VectorXi out = Eigen::VectorXi::Zero(world_.n_grids());
  for (int g = 0; g < world_.n_grids(); ++g)
    out(g) = (int)match_.leftover_by_grid[(size_t)g].size();
  return out;
}

StepOutcome Env::step(const JointAction& joint_action, bool coerce_invalid_to_stay) {
  if (!started_ || state_.terminal) throw std::logic_error("step on a finished episode");
  if (joint_action.size() != agents_.size())
    throw std::invalid_argument("joint action length != agent count");

  const int n = world_.n_grids();
  StepOutcome out;
  out.arrivals = arrivals_;

  // Agent interaction: validate and apply repositions.
  std::vector<std::vector<int>> actions_by_grid((size_t)n);
  int repositions = 0;
  for (size_t i = 0; i < agents_.size(); ++i) {
    const AgentRef a = agents_[i];
    int k = joint_action[i];
    if (k < 0 || k >= kActionCount) {
      if (!coerce_invalid_to_stay)
        throw std::invalid_argument("agent " + std::to_string(i) + " (vehicle " +
                                    std::to_string(a.vehicle_id) + ") at grid " +
                                    std::to_string(a.grid) + ": direction out of range");
      k = kStayAction;
    }
    int dest = a.grid;
    if (k != kStayAction) {
      const int nb = world_.neighbor(a.grid, k);
      if (nb < 0) {
        if (!coerce_invalid_to_stay)
          throw std::invalid_argument("agent " + std::to_string(i) + " (vehicle " +
                                      std::to_string(a.vehicle_id) + ") at grid " +
                                      std::to_string(a.grid) + ": direction " + std::to_string(k) +
                                      " leaves the map");
        k = kStayAction;
      } else {
        dest = nb;
      }
    }
    actions_by_grid[(size_t)a.grid].push_back(k);
    if (dest != a.grid) {
      Vehicle& v = vehicles_[(size_t)a.vehicle_id];
      v.status = VehicleStatus::OnService;
      v.busy_until = t_ + 1;
      v.dropoff = dest;
      ++repositions;
    }
  }

  // Commit the assignment computed at pre-dispatch.
  Eigen::VectorXd collected = Eigen::VectorXd::Zero(n);
  double served_value = 0.0;
  for (const auto& mp : match_.pairs) {
    const Order& o = orders_[(size_t)mp.order_index];
    Vehicle& v = vehicles_[(size_t)mp.vehicle_id];
    collected(mp.vehicle_grid) += o.price;
    served_value += o.price;
    v.status = VehicleStatus::OnService;
    v.busy_until = t_ + std::max(1, o.duration);
    v.dropoff = o.destination;
  }
  double generated_value = 0.0;
  for (const auto& o : orders_) generated_value += o.price;

  Eigen::VectorXd rewards = Eigen::VectorXd::Zero(n);
  for (int g = 0; g < n; ++g) {
    if (collected(g) <= 0.0) continue;
    rewards(g) = config_.reward_mode == RewardMode::Averaged
                     ? collected(g) / (double)arrivals_(g)
                     : collected(g);
  }

  out.rewards = rewards;
  out.collected = collected;
  out.served_value = served_value;
  out.generated_value = generated_value;
  out.served_orders = (int)match_.pairs.size();
  out.generated_orders = (int)orders_.size();
  out.repositions = repositions;

  TickRecord rec;
  rec.t = t_;
  rec.vehicle_count = state_.vehicle_count;
  rec.order_count = state_.order_count;
  rec.arrivals = arrivals_;
  rec.rewards = rewards;
  rec.actions_by_grid = std::move(actions_by_grid);
  rec.served_value = served_value;
  rec.generated_value = generated_value;
  rec.served_orders = out.served_orders;
  rec.generated_orders = out.generated_orders;
  rec.repositions = repositions;
  log_.ticks.push_back(std::move(rec));

  // Advance the clock; unserved orders expire here.
  t_ += 1;
  if (t_ >= config_.horizon) {
    state_.t = t_;
    state_.terminal = true;
    state_.vehicle_count.setZero();
    state_.order_count.setZero();
    agents_.clear();
    orders_.clear();
    match_ = MatchResult{};
    out.done = true;
    out.next_state = state_;
    return out;
  }

  status_updates();
  generate_orders();
  run_pre_dispatch();
  out.next_state = state_;
  out.done = false;
  return out;
}

EpisodeMetrics metrics(const EpisodeLog& log, bool cost_enabled, double reposition_cost,
                       std::optional<double> baseline_gmv) {
  EpisodeMetrics m;
  for (const auto& rec : log.ticks) {
    m.served_value += rec.served_value;
    m.served_orders += rec.served_orders;
    m.generated_orders += rec.generated_orders;
    m.repositions += rec.repositions;
  }
  m.gmv = m.served_value - (cost_enabled ? reposition_cost * (double)m.repositions : 0.0);
  m.orr = m.generated_orders > 0 ? (double)m.served_orders / (double)m.generated_orders : 0.0;
  if (baseline_gmv && m.repositions > 0)
    m.roi = (m.gmv - *baseline_gmv) / (double)m.repositions;
  return m;
}

namespace {

nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

nlohmann::json veci_to_json(const Eigen::VectorXi& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
  Eigen::VectorXd v((Eigen::Index)a.size());
  for (size_t i = 0; i < a.size(); ++i) v((Eigen::Index)i) = a[i].get<double>();
  return v;
}

Eigen::VectorXi veci_from_json(const nlohmann::json& a) {
  Eigen::VectorXi v((Eigen::Index)a.size());
  for (size_t i = 0; i < a.size(); ++i) v((Eigen::Index)i) = a[i].get<int>();
  return v;
}

}  // namespace

std::string EpisodeLog::to_jsonl() const {
  std::ostringstream out;
  nlohmann::json header;
  header["n_grids"] = n_grids;
  header["horizon"] = horizon;
  out << header.dump() << "\n";
  for (const auto& rec : ticks) {
    nlohmann::json j;
    j["t"] = rec.t;
    j["veh"] = vec_to_json(rec.vehicle_count);
    j["ord"] = vec_to_json(rec.order_count);
    j["arr"] = veci_to_json(rec.arrivals);
    j["rew"] = vec_to_json(rec.rewards);
    j["act"] = rec.actions_by_grid;
    j["sv"] = rec.served_value;
    j["gv"] = rec.generated_value;
    j["so"] = rec.served_orders;
    j["go"] = rec.generated_orders;
    j["rp"] = rec.repositions;
    out << j.dump() << "\n";
  }
  return out.str();
}

EpisodeLog EpisodeLog::from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty episode log");
  nlohmann::json header = nlohmann::json::parse(line);
  EpisodeLog log;
  log.n_grids = header.at("n_grids").get<int>();
  log.horizon = header.at("horizon").get<int>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    TickRecord rec;
    rec.t = j.at("t").get<int>();
    rec.vehicle_count = vec_from_json(j.at("veh"));
    rec.order_count = vec_from_json(j.at("ord"));
    rec.arrivals = veci_from_json(j.at("arr"));
    rec.rewards = vec_from_json(j.at("rew"));
    rec.actions_by_grid = j.at("act").get<std::vector<std::vector<int>>>();
    rec.served_value = j.at("sv").get<double>();
    rec.generated_value = j.at("gv").get<double>();
    rec.served_orders = j.at("so").get<int>();
    rec.generated_orders = j.at("go").get<int>();
    rec.repositions = j.at("rp").get<int>();
    log.ticks.push_back(std::move(rec));
  }
  return log;
}

void EpisodeLog::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write episode log: " + path);
  out << to_jsonl();
}

EpisodeLog EpisodeLog::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read episode log: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_jsonl(ss.str());
}

}  // namespace fleet
