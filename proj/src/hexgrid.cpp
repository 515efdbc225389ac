#include "fleet/hexgrid.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace fleet {

namespace {

// Global direction order, shared by every grid. Axial unit steps; the
// reverse of direction k is (k + 3) % 6.
constexpr int kDq[kHexDirections] = {+1, +1, 0, -1, -1, 0};
constexpr int kDr[kHexDirections] = {0, -1, -1, 0, +1, +1};

// odd-q offset <-> axial conversion.
AxialCoord offset_to_axial(int col, int row) {
  return AxialCoord{col, row - (col - (col & 1)) / 2};
}

}  // namespace

GridWorld GridWorld::build(int rows, int cols, const std::vector<int>& invalid_ids) {
  if (rows < 1 || cols < 1) throw std::invalid_argument("grid dimensions must be positive");
  const int n = rows * cols;
  GridWorld w;
  w.rows_ = rows;
  w.cols_ = cols;
  w.valid_.assign((size_t)n, 1);
  for (int g : invalid_ids) {
    if (g < 0 || g >= n) throw std::invalid_argument("invalid_ids entry out of range");
    w.valid_[(size_t)g] = 0;
  }
  w.n_valid_ = 0;
  for (uint8_t v : w.valid_) w.n_valid_ += v;
  if (w.n_valid_ == 0) throw std::invalid_argument("all grids invalid");

  w.axial_.resize((size_t)n);
  std::unordered_map<int64_t, int> by_axial;
  by_axial.reserve((size_t)n);
  auto key = [](int q, int r) { return ((int64_t)q << 32) ^ (uint32_t)r; };
  for (int row = 0; row < rows; ++row) {
    for (int col = 0; col < cols; ++col) {
      const int id = row * cols + col;
      w.axial_[(size_t)id] = offset_to_axial(col, row);
      by_axial[key(w.axial_[(size_t)id].q, w.axial_[(size_t)id].r)] = id;
    }
  }

  w.neighbor_table_.assign((size_t)n, {-1, -1, -1, -1, -1, -1});
  w.neighbors_of_.assign((size_t)n, {});
  for (int g = 0; g < n; ++g) {
    if (!w.valid_[(size_t)g]) continue;
    const AxialCoord a = w.axial_[(size_t)g];
    for (int k = 0; k < kHexDirections; ++k) {
      auto it = by_axial.find(key(a.q + kDq[k], a.r + kDr[k]));
      if (it == by_axial.end()) continue;
      if (!w.valid_[(size_t)it->second]) continue;
      w.neighbor_table_[(size_t)g][(size_t)k] = it->second;
      w.neighbors_of_[(size_t)g].push_back(it->second);
    }
  }
  return w;
}

GridWorld GridWorld::from_map_text(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    lines.push_back(line);
  }
  if (lines.empty()) throw std::invalid_argument("empty map");
  const int rows = (int)lines.size();
  const int cols = (int)lines[0].size();
  std::vector<int> invalid;
  for (int r = 0; r < rows; ++r) {
    if ((int)lines[(size_t)r].size() != cols)
      throw std::invalid_argument("map rows have unequal length");
    for (int c = 0; c < cols; ++c) {
      const char ch = lines[(size_t)r][(size_t)c];
      if (ch == '#')
        invalid.push_back(r * cols + c);
      else if (ch != '.')
        throw std::invalid_argument("map characters must be '.' or '#'");
    }
  }
  return build(rows, cols, invalid);
}

GridWorld GridWorld::from_map_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open map file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_map_text(ss.str());
}

std::vector<int> GridWorld::neighborhood(int g) const {
  std::vector<int> out;
  out.reserve(kActionCount);
  out.push_back(g);
  for (int nb : neighbors_of_[(size_t)g]) out.push_back(nb);
  return out;
}

int GridWorld::direction_of(int from, int to) const {
  if (from == to) return kStayAction;
  for (int k = 0; k < kHexDirections; ++k)
    if (neighbor_table_[(size_t)from][(size_t)k] == to) return k;
  return -1;
}

std::vector<int> GridWorld::valid_ids() const {
  std::vector<int> out;
  out.reserve((size_t)n_valid_);
  for (int g = 0; g < n_grids(); ++g)
    if (valid_[(size_t)g]) out.push_back(g);
  return out;
}

GeoContext geographic_context(const GridWorld& world, int g) {
  if (!world.valid(g)) throw std::invalid_argument("geographic_context: invalid grid id");
  GeoContext ctx;
  for (int k = 0; k < kHexDirections; ++k)
    ctx.bits[(size_t)k] = world.neighbor(g, k) >= 0 ? 1 : 0;
  ctx.bits[kStayAction] = 1;
  return ctx;
}

Eigen::MatrixXd adjacency_matrix(const GridWorld& world) {
  const int n = world.n_grids();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int g = 0; g < n; ++g) {
    if (!world.valid(g)) continue;
    d(g, g) = 1.0;
    for (int nb : world.neighbors(g)) d(g, nb) = 1.0;
  }
  return d;
}

Eigen::VectorXd one_hot(const GridWorld& world, int g) {
  if (!world.valid(g)) throw std::invalid_argument("one_hot: invalid grid id");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(world.n_grids());
  v(g) = 1.0;
  return v;
}

}  // namespace fleet
