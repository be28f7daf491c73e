#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

namespace disco {

// Exact linear sum assignment (Jonker-Volgenant class: shortest augmenting
// paths with dual potentials), O(n^3). cost is a dense n x n matrix in
// row-major order; returns the minimum total cost and fills row_to_col.
inline double solve_assignment(const std::vector<double>& cost, std::size_t n,
                               std::vector<int>& row_to_col) {
  if (n == 0) throw std::invalid_argument("solve_assignment: empty problem");
  if (cost.size() != n * n)
    throw std::invalid_argument("solve_assignment: cost matrix must be n*n");
  const double inf = std::numeric_limits<double>::infinity();

  // 1-indexed duals and column matching; p[j] = row matched to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);

  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = static_cast<int>(i);
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = static_cast<std::size_t>(p[j0]), j1 = 0;
      double delta = inf;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = static_cast<int>(j0);
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[static_cast<std::size_t>(p[j])] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      std::size_t j1 = static_cast<std::size_t>(way[j0]);
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  row_to_col.assign(n, -1);
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] == 0) continue;
    row_to_col[static_cast<std::size_t>(p[j] - 1)] = static_cast<int>(j - 1);
    total += cost[static_cast<std::size_t>(p[j] - 1) * n + (j - 1)];
  }
  return total;
}

}  // namespace disco
