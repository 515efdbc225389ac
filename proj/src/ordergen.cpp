#include "fleet/ordergen.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fleet/simcore.hpp"

namespace fleet {

double DemandModel::rate(int t, int g) const {
  double r = base_rate(t, g);
  for (const auto& h : hotspots) {
    if (t < h.tick_begin || t >= h.tick_end) continue;
    for (int hg : h.grids) {
      if (hg == g) {
        r *= h.multiplier;
        break;
      }
    }
  }
  return r;
}

void DemandModel::validate(const GridWorld& world) const {
  if (n_grids != world.n_grids()) throw std::invalid_argument("demand model grid count mismatch");
  if (horizon < 1) throw std::invalid_argument("demand model horizon must be >= 1");
  if (is_replay) {
    if ((int)replay.size() != horizon) throw std::invalid_argument("replay table length != horizon");
    for (const auto& tick : replay)
      for (const auto& o : tick) {
        if (!world.valid(o.origin) || !world.valid(o.destination))
          throw std::invalid_argument("replay order on invalid grid");
        if (o.price < 0.0 || o.duration < 1) throw std::invalid_argument("replay order malformed");
      }
    return;
  }
  if (base_rate.rows() != horizon || base_rate.cols() != n_grids)
    throw std::invalid_argument("base_rate must be horizon x n_grids");
  if ((base_rate.array() < 0.0).any()) throw std::invalid_argument("base_rate must be nonnegative");
  if (price_mean.size() != n_grids || price_spread.size() != n_grids)
    throw std::invalid_argument("price stats must be per-grid");
  if (duration_pmf.empty()) throw std::invalid_argument("duration pmf empty");
  double psum = 0.0;
  for (double p : duration_pmf) {
    if (p < 0.0) throw std::invalid_argument("duration pmf negative");
    psum += p;
  }
  if (psum <= 0.0) throw std::invalid_argument("duration pmf sums to zero");
  if (destination.rows() != n_grids || destination.cols() != n_grids)
    throw std::invalid_argument("destination matrix must be n_grids x n_grids");
  for (int g = 0; g < n_grids; ++g) {
    if (!world.valid(g)) continue;
    double rsum = 0.0;
    for (int j = 0; j < n_grids; ++j) {
      const double p = destination(g, j);
      if (p < 0.0) throw std::invalid_argument("destination matrix negative entry");
      if (p > 0.0 && !world.valid(j))
        throw std::invalid_argument("destination mass on invalid grid");
      rsum += p;
    }
    if (std::abs(rsum - 1.0) > 1e-9)
      throw std::invalid_argument("destination matrix rows must sum to 1");
  }
}

DemandModel DemandModel::uniform(const GridWorld& world, int horizon, double rate,
                                 double price_mean, double price_spread,
                                 std::vector<double> duration_pmf) {
  DemandModel m;
  m.n_grids = world.n_grids();
  m.horizon = horizon;
  m.base_rate = Eigen::MatrixXd::Zero(horizon, m.n_grids);
  for (int g : world.valid_ids()) m.base_rate.col(g).setConstant(rate);
  m.price_mean = Eigen::VectorXd::Constant(m.n_grids, price_mean);
  m.price_spread = Eigen::VectorXd::Constant(m.n_grids, price_spread);
  m.duration_pmf = std::move(duration_pmf);
  m.destination = Eigen::MatrixXd::Zero(m.n_grids, m.n_grids);
  const auto valid = world.valid_ids();
  const double p = 1.0 / (double)valid.size();
  for (int g : valid)
    for (int j : valid) m.destination(g, j) = p;
  return m;
}

DemandModel DemandModel::replay_from_orders(std::vector<std::vector<Order>> per_tick,
                                            const GridWorld& world, int horizon) {
  DemandModel m;
  m.n_grids = world.n_grids();
  m.horizon = horizon;
  m.is_replay = true;
  per_tick.resize((size_t)horizon);
  m.replay = std::move(per_tick);
  m.validate(world);
  return m;
}

DemandModel DemandModel::replay_from_csv(const std::string& path, const GridWorld& world,
                                         int horizon) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open demand csv: " + path);
  std::vector<std::vector<Order>> per_tick((size_t)horizon);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("tick", 0) == 0) {  // optional header
      first = false;
      continue;
    }
    first = false;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw std::runtime_error("demand csv expects 6 columns: " + line);
    const int tick = std::stoi(cells[0]);
    const int grid = std::stoi(cells[1]);
    const int count = std::stoi(cells[2]);
    const double price = std::stod(cells[3]);
    const int duration = std::stoi(cells[4]);
    const int dest = std::stoi(cells[5]);
    if (tick < 0 || tick >= horizon) throw std::runtime_error("demand csv tick out of range");
    for (int i = 0; i < count; ++i)
      per_tick[(size_t)tick].push_back(Order{grid, dest, price, duration, tick});
  }
  return replay_from_orders(std::move(per_tick), world, horizon);
}

std::vector<Order> sample_orders(const DemandModel& model, int t, Rng& rng,
                                 const GridWorld& world) {
  if (t < 0 || t >= model.horizon) throw std::invalid_argument("sample_orders: tick out of range");
  if (model.is_replay) return model.replay[(size_t)t];

  std::vector<Order> out;
  for (int g = 0; g < model.n_grids; ++g) {
    if (!world.valid(g)) continue;
    const double lambda = model.rate(t, g);
    const int count = model.deterministic ? (int)std::llround(lambda) : rng.poisson(lambda);
    for (int i = 0; i < count; ++i) {
      Order o;
      o.origin = g;
      o.created_at = t;
      const double spread = model.price_spread(g);
      o.price = std::max(0.0, model.price_mean(g) + rng.uniform_real(-spread, spread));
      o.duration = 1 + rng.categorical(model.duration_pmf);
      // destination from the row CDF
      double u = rng.uniform_real();
      int dest = g;
      for (int j = 0; j < model.n_grids; ++j) {
        u -= model.destination(g, j);
        if (u < 0.0) {
          dest = j;
          break;
        }
      }
      o.destination = dest;
      out.push_back(o);
    }
  }
  return out;
}

MeanTables fit_mean_tables(const std::vector<EpisodeLog>& logs) {
  if (logs.empty()) throw std::invalid_argument("fit_mean_tables: no episode logs");
  const int n = logs.front().n_grids;
  const int horizon = logs.front().horizon;
  MeanTables tables;
  tables.v_rule = Eigen::MatrixXd::Zero(horizon, n);
  tables.order_mean = Eigen::MatrixXd::Zero(horizon, n);
  for (const auto& log : logs) {
    if (log.n_grids != n || log.horizon != horizon || (int)log.ticks.size() != horizon)
      throw std::invalid_argument("fit_mean_tables: inconsistent or incomplete episode log");
    for (const auto& rec : log.ticks) {
      tables.v_rule.row(rec.t) += rec.rewards.transpose();
      tables.order_mean.row(rec.t) += rec.order_count.transpose();
    }
  }
  tables.v_rule /= (double)logs.size();
  tables.order_mean /= (double)logs.size();
  return tables;
}

}  // namespace fleet
