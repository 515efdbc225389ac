#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace fleet {

inline constexpr int kHexDirections = 6;
inline constexpr int kStayAction = 6;
inline constexpr int kActionCount = 7;

struct AxialCoord {
  int q = 0;
  int r = 0;
};

// Binary validity over the 7 move directions of one grid. Index 6 is the
// stay action and is always set.
struct GeoContext {
  std::array<uint8_t, kActionCount> bits{};
  bool allows(int k) const { return bits[(size_t)k] != 0; }
};

// Hexagonal grid-world over an odd-q offset rectangle. Grid ids are
// row-major (id = row * cols + col); cells can be marked invalid and are
// then excluded from every neighborhood. Immutable after construction.
class GridWorld {
 public:
  static GridWorld build(int rows, int cols, const std::vector<int>& invalid_ids = {});
  // One line per row, '.' valid, '#' invalid.
  static GridWorld from_map_text(const std::string& text);
  static GridWorld from_map_file(const std::string& path);

  int n_grids() const { return rows_ * cols_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int n_valid() const { return n_valid_; }
  bool valid(int g) const { return g >= 0 && g < n_grids() && valid_[(size_t)g]; }
  AxialCoord axial(int g) const { return axial_[(size_t)g]; }

  // Target of moving one step along direction k (0..5) from g, or -1 when
  // the move leaves the map or enters an invalid cell.
  int neighbor(int g, int k) const { return neighbor_table_[(size_t)g][(size_t)k]; }

  // Valid neighbors of g, self excluded, ordered by direction index.
  const std::vector<int>& neighbors(int g) const { return neighbors_of_[(size_t)g]; }

  // Ner(g): g itself followed by its valid neighbors.
  std::vector<int> neighborhood(int g) const;

  // Direction index that moves `from` onto `to`; kStayAction when equal;
  // -1 when not reachable in one step.
  int direction_of(int from, int to) const;

  std::vector<int> valid_ids() const;

 private:
  int rows_ = 0, cols_ = 0, n_valid_ = 0;
  std::vector<uint8_t> valid_;
  std::vector<AxialCoord> axial_;
  std::vector<std::array<int, kHexDirections>> neighbor_table_;
  std::vector<std::vector<int>> neighbors_of_;
};

GeoContext geographic_context(const GridWorld& world, int g);

// D[i][j] = 1 iff g_j is in Ner(g_i); unit diagonal on valid grids.
Eigen::MatrixXd adjacency_matrix(const GridWorld& world);

Eigen::VectorXd one_hot(const GridWorld& world, int g);

}  // namespace fleet
