#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "gm/memory.hpp"
#include "gm/model.hpp"
#include "gm/grow.hpp"
#include "gm/stream.hpp"

namespace gm {

struct MergeConfig {
  std::size_t sift_j = 15;      // neighbor index for the local density
  double sift_fraction = 0.5;   // share removed per pseudo-class
  double tau = 0.1;             // PLL temperature
  int epochs = 50;
  double alpha = 0.99;          // EMA coefficient
  bool mse_in_merging = false;
  bool sd_over_exemplars = true;  // false: distill over the novel batch
  double augment_sigma = 0.05;
  std::size_t batch_size = 32;
  std::size_t wta_k = 5;
};

// Per pseudo-class, removes the ceil(fraction * n) samples with the largest
// G_j (squared euclidean distance to the j-th same-class neighbor; j clamps
// to n-1). Ties remove the highest index first. Returns the kept indices
// per class, ascending; classes emptied by sifting are dropped.
std::map<int, std::vector<std::size_t>> sift_samples(
    const std::map<int, std::vector<Vec>>& embeddings_by_class, std::size_t j,
    double fraction);

// Raw sample plus its pseudo-label from the cluster head.
struct PseudoLabeled {
  Vec x;
  int pseudo_class = 0;  // cluster index, 0-based
};

// Folds the sifted novel samples into the store: one new class id per
// surviving pseudo-class, prototype from the sifted embedding mean,
// exemplars by herding, then a budget rebalance. Returns the new class ids
// in pseudo-class order.
std::vector<int> unify_categories(const std::vector<PseudoLabeled>& sifted,
                                  ExemplarStore& store,
                                  const EncoderParams& encoder,
                                  int source_timestep);

// Merging-phase training: w_bce*L_BCE over the novel batch plus
// w_sd*L_SD and w_pll*L_PLL over the store's exemplars. Prototypes are
// refreshed from exemplars at every epoch start.
std::vector<EpochLoss> run_merging(BranchPair& pair, ExemplarStore& store,
                                   const std::vector<Sample>& novel_batch,
                                   const MergeConfig& cfg,
                                   const LossWeights& weights, OptState& opt,
                                   Rng& rng);

// EMA-merges the static branch into the dynamic one; the static branch
// keeps the original pretrained parameters across all timesteps.
void unify_branches(BranchPair& pair, double alpha);

}  // namespace gm
