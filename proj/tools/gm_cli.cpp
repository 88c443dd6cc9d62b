// Command-line front end: synthetic data generation, full experiment runs,
// novel-count estimation, the gradient verification harness, and checkpoint
// evaluation.

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "gm/class_count.hpp"
#include "gm/runner.hpp"

namespace {

int cmd_run(const std::string& config_path, std::uint64_t seed, bool has_seed,
            const std::string& out_dir, const std::string& resume_path) {
  gm::RunConfig cfg = gm::load_config(config_path);
  if (has_seed) cfg.seed = seed;
  if (!out_dir.empty()) cfg.out_dir = out_dir;

  gm::RunResult result;
  if (!resume_path.empty()) {
    const gm::Checkpoint ckpt = gm::load_checkpoint(resume_path);
    result = gm::run_experiment(cfg, &ckpt);
  } else {
    result = gm::run_experiment(cfg);
  }

  for (const gm::TimestepRecord& r : result.ledger.records) {
    std::printf("t=%d acc_known=%.6f", r.t, r.acc_known);
    if (r.acc_novel) std::printf(" acc_novel=%.6f", *r.acc_novel);
    std::printf("\n");
  }
  std::printf("m_f=%.6f", result.final_metrics.m_f);
  if (result.final_metrics.m_d)
    std::printf(" m_d=%.6f", *result.final_metrics.m_d);
  std::printf("\n");
  if (!cfg.out_dir.empty())
    std::printf("report written to %s\n", cfg.out_dir.c_str());
  return 0;
}

int cmd_gen_data(int classes, int per_class, int dim, double separation,
                 std::uint64_t seed, const std::string& out_file) {
  const auto samples =
      gm::generate_synthetic(classes, per_class, dim, separation, seed);
  gm::save_csv(out_file, samples);
  std::printf("wrote %zu samples (%d classes) to %s\n", samples.size(),
              classes, out_file.c_str());
  return 0;
}

int cmd_estimate_k(const std::string& config_path) {
  gm::RunConfig cfg = gm::load_config(config_path);
  cfg.novel_count_mode = gm::NovelCountMode::kEstimate;
  const gm::RunResult result = gm::run_experiment(cfg);
  for (std::size_t i = 0; i < result.ledger.estimated_counts.size(); ++i)
    std::printf("t=%zu estimated_novel_count=%d\n", i + 1,
                result.ledger.estimated_counts[i]);
  return 0;
}

// Random small models and batches for every loss term, individually and
// combined. Fails (nonzero exit) when any analytic gradient drifts from
// central finite differences.
int cmd_gradcheck(int trials, std::uint64_t seed) {
  constexpr double kTol = 1e-4;
  gm::Rng rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    gm::BranchPair pair;
    gm::LossContext ctx;
    // redraw configurations resting on a rectifier kink or clamp edge;
    // finite differences are unreliable there
    do {
      const std::size_t in_dim = 2 + rng.next_below(3);
      const std::size_t hidden = 3 + rng.next_below(4);
      const std::size_t out_dim = 2 + rng.next_below(3);
      const std::size_t k = 2 + rng.next_below(3);

      pair = gm::BranchPair{};
      pair.dynamic_branch = gm::make_encoder(in_dim, {hidden}, out_dim, rng);
      pair.static_branch = gm::make_encoder(in_dim, {hidden}, out_dim, rng);
      pair.head = gm::make_head(k, out_dim, rng);

      ctx = gm::LossContext{};
      ctx.tau = 0.5;
      const std::size_t n = 3 + rng.next_below(3);
      for (std::size_t i = 0; i < n; ++i) {
        gm::Vec x(in_dim);
        for (double& v : x) v = rng.next_normal();
        ctx.bce_samples.push_back(x);
        ctx.sd_samples.push_back(x);
        gm::Vec noisy = x;
        for (double& v : noisy) v += 0.1 * rng.next_normal();
        ctx.mse_pairs.emplace_back(x, noisy);
      }
      ctx.similarity.assign(n, std::vector<double>(n, 0.0));
      for (std::size_t i = 0; i < n; ++i) {
        ctx.similarity[i][i] = 1.0;
        for (std::size_t j = i + 1; j < n; ++j) {
          const double s = rng.next_below(2) ? 1.0 : 0.0;
          ctx.similarity[i][j] = ctx.similarity[j][i] = s;
        }
      }
      for (int cls = 0; cls < 2; ++cls) {
        gm::Vec proto(static_cast<std::size_t>(pair.head.dim));
        for (double& v : proto) v = rng.next_normal();
        ctx.pll_prototypes[cls] = gm::l2_normalize(proto);
        for (int e = 0; e < 2; ++e) {
          gm::Vec x(pair.dynamic_branch.input_dim());
          for (double& v : x) v = rng.next_normal();
          ctx.pll_exemplars[cls].push_back(x);
        }
      }
    } while (gm::gradcheck_margin(pair, ctx) < 1e-3);

    gm::LossWeights weights;
    weights.bce = 0.25 + rng.next_double();
    weights.sd = 0.25 + rng.next_double();
    weights.pll = 0.25 + rng.next_double();
    weights.mse = 0.25 + rng.next_double();

    const double err = gm::gradient_check(pair, ctx, weights);
    worst = std::max(worst, err);
    if (err >= kTol) {
      std::fprintf(stderr, "gradcheck FAILED at trial %d: rel err %.3e\n",
                   trial, err);
      return 1;
    }
  }
  std::printf("gradcheck passed: %d trials, worst relative error %.3e\n",
              trials, worst);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& test_csv) {
  const gm::Checkpoint ckpt = gm::load_checkpoint(ckpt_path);
  const auto samples = gm::load_csv(test_csv);

  gm::ExemplarStore store = ckpt.store;
  store.refresh_prototypes(ckpt.dynamic_branch);

  std::vector<gm::Sample> test;
  for (const gm::Sample& s : samples)
    if (s.split == gm::Split::kTest && s.label != gm::kUnlabeled)
      test.push_back(s);
  if (test.empty()) {
    std::fprintf(stderr, "eval: no labeled test samples in %s\n",
                 test_csv.c_str());
    return 1;
  }

  const gm::TimestepAccuracy acc = gm::evaluate_timestep(
      store, ckpt.dynamic_branch, test, {}, gm::Metric::kCosine);
  std::printf("samples=%zu classes_in_store=%zu clustering_accuracy=%.6f\n",
              test.size(), store.class_count(), acc.acc_known);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grow-and-Merge continuous category discovery"};
  app.require_subcommand(1);

  std::string config_path, out_dir, resume_path, out_file, ckpt_path, test_csv;
  std::uint64_t seed = 0;
  int classes = 10, per_class = 250, dim = 16, trials = 100;
  double separation = 8.0;

  auto* run = app.add_subcommand("run", "run a full experiment");
  run->add_option("--config", config_path, "config JSON path")->required();
  auto* seed_opt = run->add_option("--seed", seed, "override the run seed");
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--resume", resume_path, "checkpoint to resume from");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic CSV");
  gen->add_option("--classes", classes)->required();
  gen->add_option("--per-class", per_class)->required();
  gen->add_option("--dim", dim)->required();
  gen->add_option("--separation", separation)->required();
  gen->add_option("--seed", seed)->required();
  gen->add_option("--out", out_file)->required();

  auto* est = app.add_subcommand("estimate-k",
                                 "run with per-timestep novel-count estimation");
  est->add_option("--config", config_path)->required();

  auto* grad = app.add_subcommand("gradcheck",
                                  "verify analytic gradients against finite "
                                  "differences");
  grad->add_option("--trials", trials);
  grad->add_option("--seed", seed);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a CSV");
  eval->add_option("--checkpoint", ckpt_path)->required();
  eval->add_option("--test", test_csv)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, seed, seed_opt->count() > 0, out_dir,
                     resume_path);
    if (gen->parsed())
      return cmd_gen_data(classes, per_class, dim, separation, seed, out_file);
    if (est->parsed()) return cmd_estimate_k(config_path);
    if (grad->parsed()) return cmd_gradcheck(trials, seed ? seed : 20240901);
    if (eval->parsed()) return cmd_eval(ckpt_path, test_csv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
