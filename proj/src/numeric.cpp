#include "gm/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gm {

namespace {
constexpr double kNormFloor = 1e-12;
}

double norm2(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Vec l2_normalize(const Vec& v) {
  const double n = norm2(v);
  if (n < kNormFloor) return v;
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / n;
  return out;
}

double distance(const Vec& a, const Vec& b, Metric kind) {
  if (a.size() != b.size())
    throw std::invalid_argument("distance: dimension mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  if (a == b) return 0.0;
  switch (kind) {
    case Metric::kSquaredEuclidean: {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
      }
      return s;
    }
    case Metric::kCosine: {
      const double na = norm2(a);
      const double nb = norm2(b);
      if (na < kNormFloor || nb < kNormFloor)
        throw std::invalid_argument("distance: zero vector under cosine");
      const double c = dot(a, b) / (na * nb);
      return std::max(0.0, 1.0 - std::min(1.0, std::max(-1.0, c)));
    }
  }
  throw std::logic_error("distance: unknown metric");
}

Vec softmax(const Vec& logits) {
  Vec out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& x : out) x /= sum;
  return out;
}

namespace {

// Jonker-Volgenant style shortest augmenting path, O(n^3).
// Returns the minimum total cost and one optimal row->col map.
double solve_min_cost(const CostMatrix& m, std::vector<std::size_t>* out_map) {
  const std::size_t n = m.rows;
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based internal arrays; index 0 is the virtual root.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> way(n + 1, 0), match_col(n + 1, 0);

  for (std::size_t i = 1; i <= n; ++i) {
    match_col[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match_col[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = m.at(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  double total = 0.0;
  if (out_map) out_map->assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (match_col[j] == 0) continue;
    total += m.at(match_col[j] - 1, j - 1);
    if (out_map) (*out_map)[match_col[j] - 1] = j - 1;
  }
  return total;
}

CostMatrix submatrix(const CostMatrix& m, const std::vector<std::size_t>& rows,
                     const std::vector<std::size_t>& cols) {
  CostMatrix s;
  s.rows = rows.size();
  s.cols = cols.size();
  s.cells.resize(s.rows * s.cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c)
      s.at(r, c) = m.at(rows[r], cols[c]);
  return s;
}

}  // namespace

Assignment hungarian_assign(const CostMatrix& costs) {
  if (costs.rows != costs.cols || costs.rows == 0)
    throw std::invalid_argument("hungarian_assign: matrix must be square");
  const std::size_t n = costs.rows;

  Assignment result;
  result.total_cost = solve_min_cost(costs, nullptr);

  // Fix rows in order, choosing the smallest column that still admits an
  // optimal completion. Yields the lexicographically smallest minimizer.
  const double tol = 1e-9 * (1.0 + std::abs(result.total_cost));
  std::vector<std::size_t> free_cols(n);
  for (std::size_t c = 0; c < n; ++c) free_cols[c] = c;
  result.row_to_col.resize(n);
  double fixed_cost = 0.0;

  for (std::size_t r = 0; r < n; ++r) {
    std::vector<std::size_t> rest_rows;
    for (std::size_t rr = r + 1; rr < n; ++rr) rest_rows.push_back(rr);
    bool placed = false;
    for (std::size_t ci = 0; ci < free_cols.size(); ++ci) {
      const std::size_t c = free_cols[ci];
      std::vector<std::size_t> rest_cols;
      for (std::size_t cj = 0; cj < free_cols.size(); ++cj)
        if (cj != ci) rest_cols.push_back(free_cols[cj]);
      double completion = 0.0;
      if (!rest_rows.empty())
        completion = solve_min_cost(submatrix(costs, rest_rows, rest_cols),
                                    nullptr);
      if (fixed_cost + costs.at(r, c) + completion <= result.total_cost + tol) {
        result.row_to_col[r] = c;
        fixed_cost += costs.at(r, c);
        free_cols.erase(free_cols.begin() + static_cast<std::ptrdiff_t>(ci));
        placed = true;
        break;
      }
    }
    if (!placed)
      throw std::logic_error("hungarian_assign: failed to refine assignment");
  }
  return result;
}

}  // namespace gm
