#include "gm/runner.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include "gm/class_count.hpp"

namespace gm {

namespace {

// Stream tags for deriving per-stage seeds from the run seed. Checkpoint
// resume re-derives the same streams instead of persisting generator state.
enum SeedTag : std::uint64_t {
  kSeedInit = 1,
  kSeedPretrain = 2,
  kSeedEstimate = 3,
  kSeedHead = 4,
  kSeedGrow = 5,
  kSeedMerge = 6,
};

// Mean over classes of the mean pairwise embedding distance between
// same-class test samples. Only classes in `class_filter` contribute.
double mean_intra_class_distance(const EncoderParams& encoder,
                                 const std::vector<Sample>& test_set,
                                 const std::set<int>& class_filter) {
  std::map<int, std::vector<Vec>> by_class;
  for (const Sample& s : test_set)
    if (class_filter.count(s.label))
      by_class[s.label].push_back(encode(encoder, s.x));

  double sum = 0.0;
  std::size_t n_classes = 0;
  for (const auto& [cls, embeddings] : by_class) {
    if (embeddings.size() < 2) continue;
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < embeddings.size(); ++i)
      for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
        acc += std::sqrt(distance(embeddings[i], embeddings[j],
                                  Metric::kSquaredEuclidean));
        ++pairs;
      }
    sum += acc / static_cast<double>(pairs);
    ++n_classes;
  }
  return n_classes == 0 ? 0.0 : sum / static_cast<double>(n_classes);
}

OptState fresh_opt(const RunConfig& cfg, const EncoderParams& enc,
                   const ClusterHeadParams& head) {
  return make_opt_state(enc, head, cfg.learning_rate, cfg.momentum,
                        cfg.weight_decay, cfg.lr_decay_every,
                        cfg.lr_decay_factor);
}

int argmax_index(const Vec& v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

}  // namespace

std::vector<EpochLoss> pretrain_initial(BranchPair& pair,
                                        const std::vector<Sample>& train0,
                                        ExemplarStore& store,
                                        const RunConfig& cfg) {
  if (train0.empty())
    throw std::invalid_argument("pretrain_initial: empty initial dataset");
  std::map<int, std::vector<Vec>> by_class;
  for (const Sample& s : train0) {
    if (s.label == kUnlabeled)
      throw std::invalid_argument(
          "pretrain_initial: the initial dataset must be fully labeled "
          "(sample " + std::to_string(s.id) + " is not)");
    by_class[s.label].push_back(s.x);
  }

  Rng rng(derive_seed(cfg.seed, 0, kSeedPretrain));
  LossWeights weights;  // supervised PLL plus self-supervised consistency
  weights.bce = 0.0;
  weights.sd = 0.0;
  weights.pll = cfg.weights.pll;
  weights.mse = cfg.weights.mse;

  ClusterHeadParams no_head;
  OptState opt = fresh_opt(cfg, pair.dynamic_branch, no_head);

  const std::size_t n = train0.size();
  const std::size_t batch_size = std::max<std::size_t>(2, cfg.pretrain_batch_size);
  std::vector<EpochLoss> log;

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    opt.epoch = epoch;
    // class-mean prototypes under the current parameters
    std::map<int, Vec> prototypes;
    for (const auto& [cls, samples] : by_class) {
      Vec mean(cfg.embedding_dim, 0.0);
      for (const Vec& x : samples) {
        const Vec z = encode(pair.dynamic_branch, x);
        for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += z[d];
      }
      for (double& v : mean) v /= static_cast<double>(samples.size());
      prototypes[cls] = l2_normalize(mean);
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    EpochLoss epoch_loss;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += batch_size) {
      const std::size_t end = std::min(n, start + batch_size);
      LossContext ctx;
      ctx.tau = cfg.merge.tau;
      ctx.pll_prototypes = prototypes;
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = train0[order[i]];
        ctx.pll_exemplars[s.label].push_back(s.x);
        Vec noisy = s.x;
        for (double& v : noisy) v += cfg.grow.augment_sigma * rng.next_normal();
        ctx.mse_pairs.emplace_back(s.x, std::move(noisy));
      }
      const LossValue value = total_loss(pair, ctx, weights);
      const ModelGrads grads = backward(pair, ctx, weights);
      sgd_step(opt, pair.dynamic_branch, no_head, grads);
      epoch_loss.pll += value.pll;
      epoch_loss.mse += value.mse;
      epoch_loss.total += value.total;
      ++steps;
    }
    if (steps > 0) {
      epoch_loss.pll /= static_cast<double>(steps);
      epoch_loss.mse /= static_cast<double>(steps);
      epoch_loss.total /= static_cast<double>(steps);
    }
    log.push_back(epoch_loss);
  }

  // phi^0 feeds both branches
  pair.static_branch = pair.dynamic_branch;

  store.exemplars.clear();
  store.prototypes.clear();
  const std::size_t quota =
      std::max<std::size_t>(1, store.budget / by_class.size());
  for (const auto& [cls, samples] : by_class) {
    std::vector<Vec> herded =
        herd_exemplars(samples, pair.dynamic_branch, quota);
    std::vector<Exemplar>& list = store.exemplars[cls];
    for (Vec& x : herded) list.push_back(Exemplar{std::move(x), cls, 0});
  }
  rebalance_budget(store, pair.dynamic_branch);
  return log;
}

RunResult run_experiment(const RunConfig& cfg, const Checkpoint* resume_from) {
  const std::vector<Sample> samples =
      cfg.csv_path.empty()
          ? generate_synthetic(cfg.scenario.total_classes,
                               cfg.synthetic.per_class, cfg.synthetic.input_dim,
                               cfg.synthetic.separation, cfg.scenario.seed)
          : load_csv(cfg.csv_path);
  const Stream stream = build_stream(samples, cfg.scenario);
  const std::size_t input_dim = samples.front().x.size();
  const Metric metric = cfg.grow.metric;

  const bool out = !cfg.out_dir.empty();
  if (out) std::filesystem::create_directories(cfg.out_dir);

  RunResult result;
  BranchPair pair;
  ExemplarStore store;
  int start_t = 1;

  if (resume_from) {
    if (resume_from->seed != cfg.seed)
      throw std::invalid_argument(
          "run_experiment: checkpoint seed does not match the config seed");
    pair.static_branch = resume_from->static_branch;
    pair.dynamic_branch = resume_from->dynamic_branch;
    pair.head = resume_from->head;
    store = resume_from->store;
    store.budget = cfg.exemplar_budget;
    result.ledger = resume_from->ledger;
    start_t = resume_from->timestep + 1;
    for (const TimestepRecord& r : result.ledger.records)
      if (r.t == 0) result.pretrain_test_accuracy = r.acc_known;
  } else {
    Rng init_rng(derive_seed(cfg.seed, 0, kSeedInit));
    pair.dynamic_branch = make_encoder(input_dim, cfg.hidden_dims,
                                       cfg.embedding_dim, init_rng);
    pair.static_branch = pair.dynamic_branch;
    store.budget = cfg.exemplar_budget;

    pretrain_initial(pair, stream.batches.front().train, store, cfg);

    store.refresh_prototypes(pair.dynamic_branch);
    const TimestepAccuracy acc0 = evaluate_timestep(
        store, pair.dynamic_branch, stream.batches.front().test, {}, metric);
    result.pretrain_test_accuracy = acc0.acc_known;
    result.ledger.records.push_back(TimestepRecord{0, acc0.acc_known, {}});
  }

  const int timesteps = cfg.scenario.timesteps;
  for (int t = start_t; t <= timesteps; ++t) {
    try {
      const StreamBatch& batch = stream.batches[static_cast<std::size_t>(t)];

      std::set<int> known_classes, novel_at_t;
      for (const auto& [cls, intro] : stream.class_introduced_at) {
        if (intro < t) known_classes.insert(cls);
        if (intro == t) novel_at_t.insert(cls);
      }

      store.refresh_prototypes(pair.dynamic_branch);
      const NoveltySplit split = detect_novelty(
          batch.train, store, pair.dynamic_branch, cfg.grow.epsilon, metric);

      int novel_count = batch.novel_class_count;
      if (cfg.novel_count_mode == NovelCountMode::kEstimate) {
        if (split.novel.empty()) {
          novel_count = 0;
        } else {
          std::vector<Vec> embeddings;
          embeddings.reserve(split.novel.size());
          for (const Sample& s : split.novel)
            embeddings.push_back(encode(pair.dynamic_branch, s.x));
          const std::pair<int, int> range =
              cfg.estimate_range.value_or(std::make_pair(1, 10));
          novel_count = estimate_novel_count(
              embeddings, store, pair.dynamic_branch, range,
              derive_seed(cfg.seed, static_cast<std::uint64_t>(t),
                          kSeedEstimate));
        }
        result.ledger.estimated_counts.push_back(novel_count);
      }

      PhaseDiagnostics diag;
      diag.t = t;
      diag.detected_novel = split.novel.size();
      diag.detected_known = split.known.size();
      diag.novel_count_used = novel_count;
      diag.intra_before_grow = mean_intra_class_distance(
          pair.dynamic_branch, batch.test, known_classes);

      const bool can_grow = novel_count >= 1 && split.novel.size() >= 2;
      if (can_grow) {
        Rng head_rng(
            derive_seed(cfg.seed, static_cast<std::uint64_t>(t), kSeedHead));
        pair.head = make_head(static_cast<std::size_t>(novel_count),
                              cfg.embedding_dim, head_rng);
        OptState opt = fresh_opt(cfg, pair.dynamic_branch, pair.head);
        Rng grow_rng(
            derive_seed(cfg.seed, static_cast<std::uint64_t>(t), kSeedGrow));
        run_growing(pair, split.novel, cfg.grow, cfg.weights, opt, grow_rng);
      } else {
        pair.head = ClusterHeadParams{};
      }

      diag.intra_after_grow = mean_intra_class_distance(
          pair.dynamic_branch, batch.test, known_classes);

      if (!cfg.disable_merging) {
        std::vector<Sample> sifted_batch;
        if (can_grow) {
          // pseudo-labels from the trained head, then density sifting
          std::map<int, std::vector<Vec>> embeddings_by_pseudo;
          std::map<int, std::vector<const Sample*>> samples_by_pseudo;
          for (const Sample& s : split.novel) {
            const Vec z = encode(pair.dynamic_branch, s.x);
            const int pseudo = argmax_index(head_forward(pair.head, z));
            embeddings_by_pseudo[pseudo].push_back(z);
            samples_by_pseudo[pseudo].push_back(&s);
          }
          const auto kept = sift_samples(embeddings_by_pseudo, cfg.merge.sift_j,
                                         cfg.merge.sift_fraction);
          std::vector<PseudoLabeled> sifted;
          for (const auto& [pseudo, indices] : kept)
            for (std::size_t idx : indices) {
              sifted.push_back(
                  PseudoLabeled{samples_by_pseudo[pseudo][idx]->x, pseudo});
              sifted_batch.push_back(*samples_by_pseudo[pseudo][idx]);
            }
          diag.sifted_kept = sifted.size();
          if (!sifted.empty())
            unify_categories(sifted, store, pair.dynamic_branch, t);
        }
        OptState opt = fresh_opt(cfg, pair.dynamic_branch, pair.head);
        Rng merge_rng(
            derive_seed(cfg.seed, static_cast<std::uint64_t>(t), kSeedMerge));
        run_merging(pair, store, sifted_batch, cfg.merge, cfg.weights, opt,
                    merge_rng);
        unify_branches(pair, cfg.merge.alpha);
      }

      store.refresh_prototypes(pair.dynamic_branch);
      diag.intra_after_merge = mean_intra_class_distance(
          pair.dynamic_branch, batch.test, known_classes);
      result.diagnostics.push_back(diag);

      const TimestepAccuracy acc = evaluate_timestep(
          store, pair.dynamic_branch, batch.test, novel_at_t, metric);
      result.ledger.records.push_back(
          TimestepRecord{t, acc.acc_known, acc.acc_novel});

      if (out) {
        Checkpoint ckpt{1,    cfg.seed, t,     pair.static_branch,
                        pair.dynamic_branch, pair.head, store,
                        result.ledger};
        save_checkpoint(cfg.out_dir + "/checkpoint_t" + std::to_string(t) +
                            ".bin",
                        ckpt);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("timestep " + std::to_string(t) + ": " +
                               e.what());
    }
  }

  result.final_metrics = finalize(result.ledger);
  result.checkpoint =
      Checkpoint{1,    cfg.seed, timesteps, pair.static_branch,
                 pair.dynamic_branch, pair.head, store, result.ledger};

  if (out) {
    save_checkpoint(cfg.out_dir + "/checkpoint.bin", result.checkpoint);
    emit_report(result.ledger, result.final_metrics,
                scenario_kind_name(cfg.scenario.kind), cfg.seed, cfg.out_dir);
    std::ofstream echo(cfg.out_dir + "/config_resolved.json");
    echo << config_to_json(cfg);
  }
  return result;
}

}  // namespace gm
