#include "gm/class_count.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <stdexcept>

#include "gm/metrics.hpp"
#include "gm/rng.hpp"

namespace gm {

namespace {

double sq_dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest_centroid(const Vec& p, const std::vector<Vec>& centroids) {
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_c = 0;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = sq_dist(p, centroids[c]);
    if (d < best) {
      best = d;
      best_c = c;
    }
  }
  return best_c;
}

}  // namespace

SemiKmeansResult semi_kmeans(const std::vector<Vec>& points,
                             const std::vector<AnchoredPoint>& anchored,
                             std::size_t k_total, std::uint64_t seed) {
  std::map<int, std::size_t> label_to_cluster;
  for (const AnchoredPoint& a : anchored) label_to_cluster.emplace(a.label, 0);
  std::size_t next = 0;
  for (auto& [label, idx] : label_to_cluster) idx = next++;
  const std::size_t n_anchored_clusters = label_to_cluster.size();
  if (k_total < n_anchored_clusters)
    throw std::invalid_argument(
        "semi_kmeans: k_total smaller than the anchored label count");

  const std::size_t dim = !points.empty()
                              ? points.front().size()
                              : (!anchored.empty() ? anchored.front().point.size()
                                                   : 0);
  if (dim == 0) throw std::invalid_argument("semi_kmeans: no data");

  SemiKmeansResult res;
  res.anchored_label_of_cluster.assign(n_anchored_clusters, 0);
  for (const auto& [label, idx] : label_to_cluster)
    res.anchored_label_of_cluster[idx] = label;
  res.anchored_assign.resize(anchored.size());
  for (std::size_t i = 0; i < anchored.size(); ++i)
    res.anchored_assign[i] =
        static_cast<int>(label_to_cluster.at(anchored[i].label));

  // anchored centroids from their own points
  res.centroids.assign(k_total, Vec(dim, 0.0));
  {
    std::vector<std::size_t> counts(n_anchored_clusters, 0);
    for (std::size_t i = 0; i < anchored.size(); ++i) {
      const std::size_t c = static_cast<std::size_t>(res.anchored_assign[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d)
        res.centroids[c][d] += anchored[i].point[d];
    }
    for (std::size_t c = 0; c < n_anchored_clusters; ++c)
      for (std::size_t d = 0; d < dim; ++d)
        res.centroids[c][d] /= static_cast<double>(counts[c]);
  }

  // free clusters: farthest-point seeding from what exists so far
  const std::size_t n_free_clusters = k_total - n_anchored_clusters;
  if (n_free_clusters > points.size())
    throw std::invalid_argument(
        "semi_kmeans: more free clusters than free points");
  Rng rng(seed);
  for (std::size_t f = 0; f < n_free_clusters; ++f) {
    const std::size_t have = n_anchored_clusters + f;
    std::size_t pick = 0;
    if (have == 0) {
      pick = static_cast<std::size_t>(rng.next_below(points.size()));
    } else {
      double best = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < have; ++c)
          nearest = std::min(nearest, sq_dist(points[i], res.centroids[c]));
        if (nearest > best) {
          best = nearest;
          pick = i;
        }
      }
    }
    res.centroids[have] = points[pick];
  }

  res.free_assign.assign(points.size(), -1);
  for (int iter = 0; iter < 100; ++iter) {
    res.iterations = iter + 1;
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int c = static_cast<int>(nearest_centroid(points[i], res.centroids));
      if (c != res.free_assign[i]) {
        res.free_assign[i] = c;
        changed = true;
      }
    }
    double wcss = 0.0;
    for (std::size_t i = 0; i < anchored.size(); ++i)
      wcss += sq_dist(anchored[i].point,
                      res.centroids[static_cast<std::size_t>(
                          res.anchored_assign[i])]);
    for (std::size_t i = 0; i < points.size(); ++i)
      wcss += sq_dist(points[i], res.centroids[static_cast<std::size_t>(
                                     res.free_assign[i])]);
    res.wcss_history.push_back(wcss);
    if (!changed && iter > 0) break;

    std::vector<Vec> sums(k_total, Vec(dim, 0.0));
    std::vector<std::size_t> counts(k_total, 0);
    for (std::size_t i = 0; i < anchored.size(); ++i) {
      const std::size_t c = static_cast<std::size_t>(res.anchored_assign[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += anchored[i].point[d];
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      const std::size_t c = static_cast<std::size_t>(res.free_assign[i]);
      ++counts[c];
      for (std::size_t d = 0; d < dim; ++d) sums[c][d] += points[i][d];
    }
    for (std::size_t c = 0; c < k_total; ++c) {
      if (counts[c] > 0) {
        for (std::size_t d = 0; d < dim; ++d)
          res.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);
      } else if (!points.empty()) {
        // re-seed an emptied free cluster at the point farthest from all
        // current centroids
        double best = -1.0;
        std::size_t pick = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
          double nearest = std::numeric_limits<double>::infinity();
          for (std::size_t c2 = 0; c2 < k_total; ++c2) {
            if (c2 == c || counts[c2] == 0) continue;
            nearest = std::min(nearest, sq_dist(points[i], res.centroids[c2]));
          }
          if (nearest > best) {
            best = nearest;
            pick = i;
          }
        }
        res.centroids[c] = points[pick];
        changed = true;
      }
    }
    if (!changed) break;
  }
  return res;
}

int estimate_novel_count(const std::vector<Vec>& batch_embeddings,
                         const ExemplarStore& store,
                         const EncoderParams& encoder,
                         std::pair<int, int> k_range, std::uint64_t seed) {
  if (k_range.first > k_range.second || k_range.first < 0)
    throw std::invalid_argument("estimate_novel_count: empty candidate range");

  std::vector<AnchoredPoint> anchored;
  for (const auto& [cls, list] : store.exemplars)
    for (const Exemplar& e : list)
      anchored.push_back({encode(encoder, e.sample), cls});
  if (anchored.empty())
    throw std::invalid_argument("estimate_novel_count: store has no exemplars");

  std::vector<int> truth;
  truth.reserve(anchored.size());
  for (const AnchoredPoint& a : anchored) truth.push_back(a.label);

  int best_k = k_range.first;
  double best_acc = -1.0;
  for (int k_novel = k_range.first; k_novel <= k_range.second; ++k_novel) {
    const std::size_t k_total =
        store.class_count() + static_cast<std::size_t>(k_novel);
    if (k_total - store.class_count() > batch_embeddings.size()) break;
    const SemiKmeansResult res =
        semi_kmeans(batch_embeddings, anchored, k_total,
                    derive_seed(seed, static_cast<std::uint64_t>(k_novel)));

    // Score: would each exemplar land back in its own cluster if assigned
    // freely against the converged centroids? Anchoring keeps Lloyd stable,
    // but a candidate count that merges novel data into a known cluster
    // drags that centroid away and loses its exemplars here.
    std::vector<int> reassigned;
    reassigned.reserve(anchored.size());
    for (const AnchoredPoint& a : anchored)
      reassigned.push_back(
          static_cast<int>(nearest_centroid(a.point, res.centroids)));
    const double acc = clustering_accuracy(reassigned, truth);
    if (acc > best_acc + 1e-12) {
      best_acc = acc;
      best_k = k_novel;
    }
  }
  return best_k;
}

}  // namespace gm
