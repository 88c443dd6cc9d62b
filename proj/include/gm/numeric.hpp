#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace gm {

// All feature vectors, embeddings and parameters are 64-bit reals.
using Vec = std::vector<double>;

enum class Metric {
  kSquaredEuclidean,
  kCosine,
};

// Returns v / ||v||2, or v unchanged when ||v||2 < 1e-12 (degenerate rule:
// a zero-initialized head must not crash the pipeline).
Vec l2_normalize(const Vec& v);

double norm2(const Vec& v);
double dot(const Vec& a, const Vec& b);

// Symmetric, nonnegative. Cosine distance is 1 - <a/||a||, b/||b||> in
// [0, 2]. Throws on dimension mismatch; cosine throws on zero vectors.
double distance(const Vec& a, const Vec& b, Metric kind);

// Numerically stable softmax (max subtraction). Output sums to 1.
Vec softmax(const Vec& logits);

// Dense nonnegative cost matrix, row-major.
struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> cells;  // rows * cols

  double at(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return cells[r * cols + c]; }
};

struct Assignment {
  std::vector<std::size_t> row_to_col;
  double total_cost = 0.0;
};

// Minimum-cost perfect matching on a square matrix (O(n^3) augmenting
// path). Among all minimizers the lexicographically smallest row->col map
// is returned so downstream metrics are reproducible. Throws on non-square
// input.
Assignment hungarian_assign(const CostMatrix& costs);

}  // namespace gm
