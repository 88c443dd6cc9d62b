#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gm/numeric.hpp"

namespace gm {

inline constexpr int kUnlabeled = -1;

enum class Split { kTrain, kTest };

struct Sample {
  std::int64_t id = 0;
  Vec x;
  int label = kUnlabeled;  // class id, or kUnlabeled
  Split split = Split::kTrain;
  int timestep = -1;  // -1 means "let build_stream assign"
};

enum class ScenarioKind { kCI, kDI, kMI, kSMI };

// Per-class-block data fractions per timestep, rows renormalized to sum 1.
// Row r describes the r-th class block; column t the share of that block's
// train data arriving at timestep t.
using MiTable = std::vector<std::vector<double>>;

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::kCI;
  int total_classes = 10;
  int timesteps = 3;                      // T, continuous steps after t=0
  std::vector<double> class_split;        // CI/MI/SMI class proportions
  std::vector<double> data_split;         // DI per-timestep data proportions
  MiTable mi_table;                       // MI/SMI data mixing table
  double labeled_fraction = 0.2;          // SMI only
  std::uint64_t seed = 0;
};

struct StreamBatch {
  int t = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;  // cumulative: all classes introduced at <= t
  int novel_class_count = 0;  // ground truth count of classes new at t
};

struct Stream {
  std::vector<StreamBatch> batches;        // index = timestep
  std::map<int, int> class_introduced_at;  // true class id -> timestep
};

// K isotropic unit-variance Gaussian clusters with means on a sphere of
// radius `separation` and pairwise mean distance >= separation (rejection
// sampled). 80/20 train/test per class, at least one test sample. Fully
// deterministic in the seed.
std::vector<Sample> generate_synthetic(int classes, int per_class,
                                       int input_dim, double separation,
                                       std::uint64_t seed);

// CSV rows: id,split,timestep,label,f0,...,f{D-1}. Header optional. A label
// of -1 maps to the unlabeled sentinel. Malformed rows and inconsistent
// dimensions raise errors naming the line.
std::vector<Sample> load_csv(const std::string& path);

void save_csv(const std::string& path, const std::vector<Sample>& samples);

ScenarioSpec default_scenario(ScenarioKind kind, int total_classes,
                              int timesteps);

// Deterministically assigns classes and data fractions to timesteps. Train
// labels are stripped at t >= 1 except for the SMI labeled fraction (chosen
// by ascending sample id). Test sets accumulate all seen classes.
Stream build_stream(const std::vector<Sample>& samples,
                    const ScenarioSpec& spec);

}  // namespace gm
