#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "gm/memory.hpp"
#include "gm/model.hpp"
#include "gm/stream.hpp"

namespace gm {

struct GrowConfig {
  double epsilon = 0.6;       // novelty threshold in the selected metric
  std::size_t wta_k = 5;      // top-k channels for the similarity hash
  int epochs = 50;
  double augment_sigma = 0.05;  // Gaussian noise scale for consistency pairs
  std::size_t batch_size = 32;
  Metric metric = Metric::kCosine;  // prototype / novelty metric
};

struct NoveltySplit {
  std::vector<Sample> novel;
  std::vector<Sample> known;
};

// A sample is novel when its distance to the nearest prototype exceeds
// epsilon. The partition is exhaustive and disjoint.
NoveltySplit detect_novelty(const std::vector<Sample>& batch,
                            const ExemplarStore& store,
                            const EncoderParams& dynamic, double epsilon,
                            Metric metric);

// 1 iff both vectors share the same set of top-k channels. Ties on the
// k-th value break toward the lowest index.
int wta_similarity(const Vec& z_i, const Vec& z_j, std::size_t k);

// The sorted index set of the k largest entries (the WTA hash).
std::vector<std::size_t> wta_top_channels(const Vec& z, std::size_t k);

struct EpochLoss {
  double bce = 0.0;
  double sd = 0.0;
  double pll = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

// One growing phase: per epoch, deterministically shuffle, rebuild the WTA
// similarity table from current dynamic embeddings, draw fresh augmentation
// noise, and descend on w_bce*L_BCE + w_sd*L_SD + w_mse*L_MSE minibatch by
// minibatch. The static branch is untouched. Requires >= 2 novel samples.
std::vector<EpochLoss> run_growing(BranchPair& pair,
                                   const std::vector<Sample>& novel,
                                   const GrowConfig& cfg,
                                   const LossWeights& weights, OptState& opt,
                                   Rng& rng);

}  // namespace gm
