#include "gm/memory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gm {

std::size_t ExemplarStore::total_exemplars() const {
  std::size_t n = 0;
  for (const auto& [cls, list] : exemplars) n += list.size();
  return n;
}

int ExemplarStore::max_class_id() const {
  int m = -1;
  for (const auto& [cls, list] : exemplars) m = std::max(m, cls);
  return m;
}

void ExemplarStore::refresh_prototypes(const EncoderParams& encoder) {
  prototypes.clear();
  for (const auto& [cls, list] : exemplars) {
    if (list.empty()) continue;
    prototypes[cls] = compute_prototype(list, encoder, cls);
  }
}

std::vector<Vec> herd_exemplars(const std::vector<Vec>& samples,
                                const EncoderParams& encoder, std::size_t m) {
  if (samples.empty())
    throw std::invalid_argument("herd_exemplars: empty sample list");
  if (m < 1) throw std::invalid_argument("herd_exemplars: m must be >= 1");

  const std::size_t n = samples.size();
  std::vector<Vec> embeddings(n);
  for (std::size_t i = 0; i < n; ++i) embeddings[i] = encode(encoder, samples[i]);

  const std::size_t dim = embeddings[0].size();
  Vec class_mean(dim, 0.0);
  for (const Vec& e : embeddings)
    for (std::size_t d = 0; d < dim; ++d) class_mean[d] += e[d];
  for (double& v : class_mean) v /= static_cast<double>(n);

  const std::size_t take = std::min(m, n);
  std::vector<char> used(n, 0);
  Vec chosen_sum(dim, 0.0);
  std::vector<Vec> out;
  out.reserve(take);

  for (std::size_t step = 1; step <= take; ++step) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_idx = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      double dist2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double running =
            (chosen_sum[d] + embeddings[i][d]) / static_cast<double>(step);
        const double diff = class_mean[d] - running;
        dist2 += diff * diff;
      }
      if (dist2 < best) {  // strict < keeps the lowest index on ties
        best = dist2;
        best_idx = i;
      }
    }
    used[best_idx] = 1;
    for (std::size_t d = 0; d < dim; ++d)
      chosen_sum[d] += embeddings[best_idx][d];
    out.push_back(samples[best_idx]);
  }
  return out;
}

Prototype compute_prototype(const std::vector<Exemplar>& exemplars,
                            const EncoderParams& encoder, int class_id) {
  if (exemplars.empty())
    throw std::invalid_argument("compute_prototype: empty exemplar list");
  Vec mean;
  for (const Exemplar& e : exemplars) {
    const Vec z = encode(encoder, e.sample);
    if (mean.empty()) mean.assign(z.size(), 0.0);
    for (std::size_t d = 0; d < z.size(); ++d) mean[d] += z[d];
  }
  for (double& v : mean) v /= static_cast<double>(exemplars.size());

  Prototype p;
  p.class_id = class_id;
  p.support = exemplars.size();
  p.degenerate = norm2(mean) < 1e-12;
  p.mu = l2_normalize(mean);
  return p;
}

int classify_nearest_prototype(const ExemplarStore& store,
                               const EncoderParams& encoder, const Vec& x,
                               Metric metric) {
  if (store.prototypes.empty())
    throw std::invalid_argument("classify_nearest_prototype: empty store");
  const Vec z = encode(encoder, x);
  // a collapsed embedding is equidistant from everything; the tie rule
  // (lowest class id) decides
  const bool collapsed = metric == Metric::kCosine && norm2(z) < 1e-12;
  double best = std::numeric_limits<double>::infinity();
  int best_cls = -1;
  for (const auto& [cls, proto] : store.prototypes) {
    if (proto.degenerate) continue;
    if (collapsed) return cls;
    const double d = distance(proto.mu, z, metric);
    if (d < best) {  // map order ascending, so ties keep the lowest id
      best = d;
      best_cls = cls;
    }
  }
  if (best_cls < 0)
    throw std::runtime_error(
        "classify_nearest_prototype: all prototypes degenerate");
  return best_cls;
}

void rebalance_budget(ExemplarStore& store, const EncoderParams& encoder) {
  if (!store.exemplars.empty()) {
    const std::size_t quota = store.budget / store.exemplars.size();
    for (auto& [cls, list] : store.exemplars)
      if (list.size() > quota) list.resize(quota);
    std::erase_if(store.exemplars,
                  [](const auto& kv) { return kv.second.empty(); });
  }
  store.refresh_prototypes(encoder);
}

}  // namespace gm
