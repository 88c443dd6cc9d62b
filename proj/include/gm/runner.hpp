#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gm/grow.hpp"
#include "gm/memory.hpp"
#include "gm/merge.hpp"
#include "gm/metrics.hpp"
#include "gm/model.hpp"
#include "gm/stream.hpp"

namespace gm {

enum class NovelCountMode { kGiven, kEstimate };

struct SyntheticDataConfig {
  int per_class = 250;
  int input_dim = 16;
  double separation = 8.0;
};

struct RunConfig {
  ScenarioSpec scenario;
  SyntheticDataConfig synthetic;   // used when csv_path is empty
  std::string csv_path;

  std::vector<std::size_t> hidden_dims = {64};
  std::size_t embedding_dim = 32;

  GrowConfig grow;
  MergeConfig merge;
  LossWeights weights;

  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int lr_decay_every = 60;
  double lr_decay_factor = 0.1;

  int pretrain_epochs = 50;
  std::size_t pretrain_batch_size = 32;

  std::size_t exemplar_budget = 200;
  NovelCountMode novel_count_mode = NovelCountMode::kGiven;
  std::optional<std::pair<int, int>> estimate_range;  // default 1..10

  // Skips the whole merging phase (no sifting, no category unification, no
  // PLL, no EMA). Used by the forgetting-ordering comparison.
  bool disable_merging = false;

  std::uint64_t seed = 1;
  std::string out_dir;
};

RunConfig load_config(const std::string& path);
RunConfig parse_config_json(const std::string& text);
std::string config_to_json(const RunConfig& cfg);

// Feature-geometry probe recorded around each phase: mean pairwise
// embedding distance within classes already known when the timestep began.
struct PhaseDiagnostics {
  int t = 0;
  double intra_before_grow = 0.0;
  double intra_after_grow = 0.0;
  double intra_after_merge = 0.0;
  std::size_t detected_novel = 0;
  std::size_t detected_known = 0;
  int novel_count_used = 0;
  std::size_t sifted_kept = 0;
};

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t seed = 0;
  int timestep = 0;  // last completed timestep
  EncoderParams static_branch;
  EncoderParams dynamic_branch;
  ClusterHeadParams head;
  ExemplarStore store;
  MetricsLedger ledger;
};

struct RunResult {
  MetricsLedger ledger;
  FinalMetrics final_metrics;
  Checkpoint checkpoint;
  std::vector<PhaseDiagnostics> diagnostics;
  double pretrain_test_accuracy = 0.0;
};

// Supervised pseudo-label training against per-class mean prototypes plus
// the noise-consistency term, then both branches are set to the trained
// parameters and the exemplar store is herded from the labeled data.
// Returns the per-epoch loss log.
std::vector<EpochLoss> pretrain_initial(BranchPair& pair,
                                        const std::vector<Sample>& train0,
                                        ExemplarStore& store,
                                        const RunConfig& cfg);

// Full timeline: pretrain, then per timestep grow -> sift -> unify ->
// merge -> EMA -> evaluate. Fully deterministic in (config, seed).
// `resume_from` continues after that checkpoint's timestep.
RunResult run_experiment(const RunConfig& cfg,
                         const Checkpoint* resume_from = nullptr);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// metrics.json plus a per-timestep CSV next to it.
void emit_report(const MetricsLedger& ledger, const FinalMetrics& final_metrics,
                 const std::string& scenario_name, std::uint64_t seed,
                 const std::string& dir);

std::string scenario_kind_name(ScenarioKind kind);

}  // namespace gm
