// Independent reference implementations used only by the test suites.
// These deliberately avoid the production code paths they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "gm/model.hpp"
#include "gm/numeric.hpp"

namespace oracle {

// Exhaustive minimum-cost assignment over all n! permutations. Returns the
// lexicographically smallest minimizer.
inline std::pair<std::vector<std::size_t>, double> brute_force_assignment(
    const gm::CostMatrix& m) {
  std::vector<std::size_t> perm(m.rows);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best_perm;
  double best = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) cost += m.at(r, perm[r]);
    if (cost < best - 1e-12) {
      best = cost;
      best_perm = perm;
    }
    // on ties std::next_permutation order already visits lexicographically
    // ascending maps first, so keep the first one seen
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best_perm, best};
}

// Exhaustive best-relabeling clustering accuracy for small label sets.
inline double brute_force_accuracy(const std::vector<int>& pred,
                                   const std::vector<int>& truth) {
  std::vector<int> pred_labels = pred;
  std::sort(pred_labels.begin(), pred_labels.end());
  pred_labels.erase(std::unique(pred_labels.begin(), pred_labels.end()),
                    pred_labels.end());
  std::vector<int> true_labels = truth;
  std::sort(true_labels.begin(), true_labels.end());
  true_labels.erase(std::unique(true_labels.begin(), true_labels.end()),
                    true_labels.end());

  // pad the smaller side with sentinels so the mapping is a bijection
  const std::size_t n = std::max(pred_labels.size(), true_labels.size());
  while (pred_labels.size() < n)
    pred_labels.push_back(-1000 - static_cast<int>(pred_labels.size()));
  while (true_labels.size() < n)
    true_labels.push_back(-2000 - static_cast<int>(true_labels.size()));

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::size_t best = 0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      for (std::size_t p = 0; p < n; ++p) {
        if (pred_labels[p] == pred[i] && true_labels[perm[p]] == truth[i])
          ++hits;
      }
    }
    best = std::max(best, hits);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return static_cast<double>(best) / static_cast<double>(pred.size());
}

// Greedy herding that recomputes the candidate mean from scratch at every
// step instead of keeping a running sum.
inline std::vector<std::size_t> rescan_herding(
    const std::vector<gm::Vec>& samples, const gm::EncoderParams& encoder,
    std::size_t m) {
  const std::size_t n = samples.size();
  std::vector<gm::Vec> emb(n);
  for (std::size_t i = 0; i < n; ++i) emb[i] = gm::encode(encoder, samples[i]);
  const std::size_t dim = emb[0].size();
  gm::Vec target(dim, 0.0);
  for (const gm::Vec& e : emb)
    for (std::size_t d = 0; d < dim; ++d) target[d] += e[d];
  for (double& v : target) v /= static_cast<double>(n);

  std::vector<std::size_t> chosen;
  std::vector<char> used(n, 0);
  const std::size_t take = std::min(m, n);
  while (chosen.size() < take) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_i = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      gm::Vec mean(dim, 0.0);
      for (std::size_t c : chosen)
        for (std::size_t d = 0; d < dim; ++d) mean[d] += emb[c][d];
      for (std::size_t d = 0; d < dim; ++d) mean[d] += emb[i][d];
      for (double& v : mean)
        v /= static_cast<double>(chosen.size() + 1);
      // compare squared distances: sqrt can collapse one-ulp differences
      // into false ties
      double dist = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = target[d] - mean[d];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        best_i = i;
      }
    }
    used[best_i] = 1;
    chosen.push_back(best_i);
  }
  return chosen;
}

// A 1-layer encoder whose embedding is just the (normalized) input. Handy
// for fixtures that want direct control of embeddings.
inline gm::EncoderParams identity_encoder(std::size_t dim) {
  gm::EncoderParams p;
  gm::Layer l;
  l.out = dim;
  l.in = dim;
  l.w.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) l.w[i * dim + i] = 1.0;
  l.b.assign(dim, 0.0);
  p.layers.push_back(std::move(l));
  return p;
}

}  // namespace oracle
