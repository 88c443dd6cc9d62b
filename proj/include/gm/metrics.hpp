#pragma once

#include <optional>
#include <set>
#include <vector>

#include "gm/memory.hpp"
#include "gm/stream.hpp"

namespace gm {

struct TimestepRecord {
  int t = 0;
  double acc_known = 0.0;
  std::optional<double> acc_novel;  // absent when t introduces no novel class
};

struct MetricsLedger {
  std::vector<TimestepRecord> records;
  std::vector<int> estimated_counts;  // one per t >= 1 when estimating
};

struct FinalMetrics {
  double m_f = 0.0;              // max_t>=1 (acc_known^0 - acc_known^t)
  std::optional<double> m_d;     // acc_novel at the final timestep
};

// Hungarian-matched clustering accuracy: the best one-to-one relabeling of
// predicted labels onto true labels, contingency padded to square.
double clustering_accuracy(const std::vector<int>& pred,
                           const std::vector<int>& truth);

// One joint optimal matching over the whole test set, then accuracy split
// over the known-category and novel-category subsets. A test class counts
// as novel exactly when it was introduced at timestep t.
struct TimestepAccuracy {
  double acc_known = 0.0;
  std::optional<double> acc_novel;
};

TimestepAccuracy evaluate_timestep(const ExemplarStore& store,
                                   const EncoderParams& encoder,
                                   const std::vector<Sample>& test_set,
                                   const std::set<int>& novel_at_t,
                                   Metric metric);

// m_f may be negative when accuracy improved over time. Requires the t=0
// record.
FinalMetrics finalize(const MetricsLedger& ledger);

}  // namespace gm
