#include "gm/merge.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace gm {

std::map<int, std::vector<std::size_t>> sift_samples(
    const std::map<int, std::vector<Vec>>& embeddings_by_class, std::size_t j,
    double fraction) {
  if (j < 1) throw std::invalid_argument("sift_samples: j must be >= 1");
  if (fraction < 0.0 || fraction >= 1.0)
    throw std::invalid_argument("sift_samples: fraction must be in [0,1)");

  std::map<int, std::vector<std::size_t>> kept;
  for (const auto& [cls, embeddings] : embeddings_by_class) {
    const std::size_t n = embeddings.size();
    if (n == 0) continue;
    const std::size_t remove =
        static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));

    std::vector<double> g(n, 0.0);
    if (n > 1) {
      const std::size_t j_eff = std::min(j, n - 1);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> dists;
        dists.reserve(n - 1);
        for (std::size_t o = 0; o < n; ++o) {
          if (o == i) continue;
          dists.push_back(
              distance(embeddings[i], embeddings[o], Metric::kSquaredEuclidean));
        }
        std::nth_element(dists.begin(), dists.begin() + (j_eff - 1),
                         dists.end());
        g[i] = dists[j_eff - 1];
      }
    }

    // remove the largest G_j; ties drop the highest index first
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&g](std::size_t a, std::size_t b) {
      if (g[a] != g[b]) return g[a] > g[b];
      return a > b;
    });
    std::vector<char> removed(n, 0);
    for (std::size_t r = 0; r < remove && r < n; ++r) removed[order[r]] = 1;

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < n; ++i)
      if (!removed[i]) keep.push_back(i);
    if (keep.empty()) {
      std::cerr << "sift_samples: class " << cls
                << " emptied by sifting; dropping it\n";
      continue;
    }
    kept[cls] = std::move(keep);
  }
  return kept;
}

std::vector<int> unify_categories(const std::vector<PseudoLabeled>& sifted,
                                  ExemplarStore& store,
                                  const EncoderParams& encoder,
                                  int source_timestep) {
  if (sifted.empty())
    throw std::invalid_argument("unify_categories: no sifted samples");

  std::map<int, std::vector<Vec>> by_pseudo;
  for (const PseudoLabeled& p : sifted) by_pseudo[p.pseudo_class].push_back(p.x);

  std::vector<int> new_ids;
  int next_id = store.max_class_id() + 1;
  for (const auto& [pseudo, samples] : by_pseudo) {
    const int cls = next_id++;
    new_ids.push_back(cls);

    std::vector<Vec> exemplar_samples =
        herd_exemplars(samples, encoder, samples.size());
    std::vector<Exemplar>& list = store.exemplars[cls];
    list.reserve(exemplar_samples.size());
    for (Vec& x : exemplar_samples)
      list.push_back(Exemplar{std::move(x), cls, source_timestep});

    // prototype from the mean of all sifted embeddings of this class
    Vec mean;
    for (const Vec& x : samples) {
      const Vec z = encode(encoder, x);
      if (mean.empty()) mean.assign(z.size(), 0.0);
      for (std::size_t d = 0; d < z.size(); ++d) mean[d] += z[d];
    }
    for (double& v : mean) v /= static_cast<double>(samples.size());
    Prototype proto;
    proto.class_id = cls;
    proto.support = samples.size();
    proto.degenerate = norm2(mean) < 1e-12;
    proto.mu = l2_normalize(mean);
    store.prototypes[cls] = std::move(proto);
  }
  rebalance_budget(store, encoder);
  return new_ids;
}

std::vector<EpochLoss> run_merging(BranchPair& pair, ExemplarStore& store,
                                   const std::vector<Sample>& novel_batch,
                                   const MergeConfig& cfg,
                                   const LossWeights& weights, OptState& opt,
                                   Rng& rng) {
  if (store.class_count() < 1)
    throw std::invalid_argument("run_merging: store has no classes");

  std::map<int, std::vector<Vec>> exemplar_inputs;
  std::vector<Vec> exemplar_flat;
  for (const auto& [cls, list] : store.exemplars) {
    for (const Exemplar& e : list) {
      exemplar_inputs[cls].push_back(e.sample);
      exemplar_flat.push_back(e.sample);
    }
  }

  const bool use_bce = novel_batch.size() >= 2 && pair.head.k >= 1;
  const std::size_t n = novel_batch.size();
  const std::size_t batch_size = std::max<std::size_t>(2, cfg.batch_size);
  std::vector<EpochLoss> log;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.epoch = epoch;
    store.refresh_prototypes(pair.dynamic_branch);
    std::map<int, Vec> prototypes;
    for (const auto& [cls, proto] : store.prototypes)
      if (!proto.degenerate) prototypes[cls] = proto.mu;

    std::vector<std::vector<std::size_t>> channels;
    std::vector<std::size_t> order;
    if (use_bce) {
      channels.resize(n);
      for (std::size_t i = 0; i < n; ++i)
        channels[i] = wta_top_channels(
            encode(pair.dynamic_branch, novel_batch[i].x), cfg.wta_k);
      order.resize(n);
      std::iota(order.begin(), order.end(), 0);
      rng.shuffle(order);
    }

    EpochLoss epoch_loss;
    std::size_t steps = 0;
    const std::size_t n_steps =
        use_bce ? (n + batch_size - 1) / batch_size : 1;
    for (std::size_t step = 0; step < n_steps; ++step) {
      LossContext ctx;
      ctx.tau = cfg.tau;
      ctx.pll_exemplars = exemplar_inputs;
      ctx.pll_prototypes = prototypes;
      if (cfg.sd_over_exemplars) {
        ctx.sd_samples = exemplar_flat;
      } else {
        for (const Sample& s : novel_batch) ctx.sd_samples.push_back(s.x);
      }

      if (use_bce) {
        const std::size_t start = step * batch_size;
        const std::size_t end = std::min(n, start + batch_size);
        if (end - start >= 2) {
          for (std::size_t i = start; i < end; ++i)
            ctx.bce_samples.push_back(novel_batch[order[i]].x);
          const std::size_t m = ctx.bce_samples.size();
          ctx.similarity.assign(m, std::vector<double>(m, 0.0));
          for (std::size_t i = 0; i < m; ++i) {
            ctx.similarity[i][i] = 1.0;
            for (std::size_t jj = i + 1; jj < m; ++jj) {
              const double s = channels[order[start + i]] ==
                                       channels[order[start + jj]]
                                   ? 1.0
                                   : 0.0;
              ctx.similarity[i][jj] = s;
              ctx.similarity[jj][i] = s;
            }
          }
          if (cfg.mse_in_merging) {
            for (std::size_t i = start; i < end; ++i) {
              Vec noisy = novel_batch[order[i]].x;
              for (double& v : noisy)
                v += cfg.augment_sigma * rng.next_normal();
              ctx.mse_pairs.emplace_back(novel_batch[order[i]].x,
                                         std::move(noisy));
            }
          }
        }
      }

      const LossValue value = total_loss(pair, ctx, weights);
      const ModelGrads grads = backward(pair, ctx, weights);
      sgd_step(opt, pair.dynamic_branch, pair.head, grads);

      epoch_loss.bce += value.bce;
      epoch_loss.sd += value.sd;
      epoch_loss.pll += value.pll;
      epoch_loss.mse += value.mse;
      epoch_loss.total += value.total;
      ++steps;
    }
    if (steps > 0) {
      epoch_loss.bce /= static_cast<double>(steps);
      epoch_loss.sd /= static_cast<double>(steps);
      epoch_loss.pll /= static_cast<double>(steps);
      epoch_loss.mse /= static_cast<double>(steps);
      epoch_loss.total /= static_cast<double>(steps);
    }
    log.push_back(epoch_loss);
  }
  store.refresh_prototypes(pair.dynamic_branch);
  return log;
}

void unify_branches(BranchPair& pair, double alpha) {
  pair.dynamic_branch =
      ema_merge(pair.static_branch, pair.dynamic_branch, alpha);
}

}  // namespace gm
