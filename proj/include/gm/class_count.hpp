#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gm/memory.hpp"
#include "gm/numeric.hpp"

namespace gm {

struct AnchoredPoint {
  Vec point;
  int label = 0;
};

struct SemiKmeansResult {
  std::vector<int> free_assign;      // cluster index per free point
  std::vector<int> anchored_assign;  // cluster index per anchored point
  std::vector<Vec> centroids;        // k_total centroids
  std::vector<int> anchored_label_of_cluster;  // label per anchored cluster
  int iterations = 0;
  std::vector<double> wcss_history;  // after each assignment step
};

// Lloyd iteration where anchored points stay permanently in their labeled
// cluster. Free clusters are seeded farthest-point from the anchored
// centroids. Converges when assignments stabilize or after 100 iterations.
SemiKmeansResult semi_kmeans(const std::vector<Vec>& points,
                             const std::vector<AnchoredPoint>& anchored,
                             std::size_t k_total, std::uint64_t seed);

// Sweeps candidate novel-cluster counts; each candidate mixes the batch
// embeddings with the store's exemplar embeddings (anchored by label) and
// is scored by how accurately the converged centroids reclassify the
// exemplars. Ties resolve to the smallest candidate.
int estimate_novel_count(const std::vector<Vec>& batch_embeddings,
                         const ExemplarStore& store,
                         const EncoderParams& encoder,
                         std::pair<int, int> k_range, std::uint64_t seed);

}  // namespace gm
