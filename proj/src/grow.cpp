#include "gm/grow.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace gm {

NoveltySplit detect_novelty(const std::vector<Sample>& batch,
                            const ExemplarStore& store,
                            const EncoderParams& dynamic, double epsilon,
                            Metric metric) {
  if (store.prototypes.empty())
    throw std::invalid_argument("detect_novelty: store has no prototypes");
  NoveltySplit split;
  for (const Sample& s : batch) {
    const Vec z = encode(dynamic, s.x);
    double d_novel = std::numeric_limits<double>::infinity();
    // a collapsed (zero) embedding has no direction: nearest-prototype
    // distance stays infinite and the sample lands in the novel set
    if (!(metric == Metric::kCosine && norm2(z) < 1e-12)) {
      for (const auto& [cls, proto] : store.prototypes) {
        if (proto.degenerate) continue;
        d_novel = std::min(d_novel, distance(proto.mu, z, metric));
      }
    }
    if (d_novel > epsilon)
      split.novel.push_back(s);
    else
      split.known.push_back(s);
  }
  return split;
}

std::vector<std::size_t> wta_top_channels(const Vec& z, std::size_t k) {
  std::vector<std::size_t> idx(z.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&z](std::size_t a, std::size_t b) {
    return z[a] > z[b];  // stable keeps the lowest index on value ties
  });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

int wta_similarity(const Vec& z_i, const Vec& z_j, std::size_t k) {
  if (z_i.size() != z_j.size())
    throw std::invalid_argument("wta_similarity: dimension mismatch");
  if (k > z_i.size())
    throw std::invalid_argument("wta_similarity: k exceeds dimension");
  return wta_top_channels(z_i, k) == wta_top_channels(z_j, k) ? 1 : 0;
}

std::vector<EpochLoss> run_growing(BranchPair& pair,
                                   const std::vector<Sample>& novel,
                                   const GrowConfig& cfg,
                                   const LossWeights& weights, OptState& opt,
                                   Rng& rng) {
  if (novel.size() < 2)
    throw std::invalid_argument(
        "run_growing: fewer than 2 novel samples; pairwise clustering needs "
        "pairs (review the novelty threshold)");
  if (pair.head.k < 1)
    throw std::invalid_argument("run_growing: cluster head not sized");

  const std::size_t n = novel.size();
  const std::size_t batch_size = std::max<std::size_t>(2, cfg.batch_size);
  std::vector<EpochLoss> log;
  log.reserve(static_cast<std::size_t>(std::max(cfg.epochs, 0)));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.epoch = epoch;

    // similarity table from this epoch's embeddings
    std::vector<Vec> embeddings(n);
    for (std::size_t i = 0; i < n; ++i)
      embeddings[i] = encode(pair.dynamic_branch, novel[i].x);
    std::vector<std::vector<std::size_t>> channels(n);
    for (std::size_t i = 0; i < n; ++i)
      channels[i] = wta_top_channels(embeddings[i], cfg.wta_k);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    EpochLoss epoch_loss;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      if (end - start < 2) break;  // pairwise loss needs at least one pair

      LossContext ctx;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = novel[order[i]];
        ctx.bce_samples.push_back(s.x);
        ctx.sd_samples.push_back(s.x);
        Vec noisy = s.x;
        for (double& v : noisy) v += cfg.augment_sigma * rng.next_normal();
        ctx.mse_pairs.emplace_back(s.x, std::move(noisy));
      }
      const std::size_t m = ctx.bce_samples.size();
      ctx.similarity.assign(m, std::vector<double>(m, 0.0));
      for (std::size_t i = 0; i < m; ++i) {
        ctx.similarity[i][i] = 1.0;
        for (std::size_t j = i + 1; j < m; ++j) {
          const double s =
              channels[order[start + i]] == channels[order[start + j]] ? 1.0
                                                                       : 0.0;
          ctx.similarity[i][j] = s;
          ctx.similarity[j][i] = s;
        }
      }

      const LossValue value = total_loss(pair, ctx, weights);
      const ModelGrads grads = backward(pair, ctx, weights);
      sgd_step(opt, pair.dynamic_branch, pair.head, grads);

      epoch_loss.bce += value.bce;
      epoch_loss.sd += value.sd;
      epoch_loss.mse += value.mse;
      epoch_loss.total += value.total;
      ++steps;
    }
    if (steps > 0) {
      epoch_loss.bce /= static_cast<double>(steps);
      epoch_loss.sd /= static_cast<double>(steps);
      epoch_loss.mse /= static_cast<double>(steps);
      epoch_loss.total /= static_cast<double>(steps);
    }
    log.push_back(epoch_loss);
  }
  return log;
}

}  // namespace gm
