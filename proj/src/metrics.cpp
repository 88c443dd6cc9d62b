#include "gm/metrics.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace gm {

namespace {

// Maximum-agreement matching between predicted and true label sets via the
// minimum-cost solver: cost = max_count - count keeps cells nonnegative.
// Returns pred label -> matched truth label (or none for padding columns).
std::map<int, int> best_matching(const std::vector<int>& pred,
                                 const std::vector<int>& truth) {
  std::vector<int> pred_labels = pred;
  std::sort(pred_labels.begin(), pred_labels.end());
  pred_labels.erase(std::unique(pred_labels.begin(), pred_labels.end()),
                    pred_labels.end());
  std::vector<int> true_labels = truth;
  std::sort(true_labels.begin(), true_labels.end());
  true_labels.erase(std::unique(true_labels.begin(), true_labels.end()),
                    true_labels.end());

  std::map<int, std::size_t> pred_idx, true_idx;
  for (std::size_t i = 0; i < pred_labels.size(); ++i)
    pred_idx[pred_labels[i]] = i;
  for (std::size_t i = 0; i < true_labels.size(); ++i)
    true_idx[true_labels[i]] = i;

  const std::size_t n = std::max(pred_labels.size(), true_labels.size());
  std::vector<double> counts(n * n, 0.0);
  double max_count = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double& cell = counts[pred_idx[pred[i]] * n + true_idx[truth[i]]];
    cell += 1.0;
    max_count = std::max(max_count, cell);
  }

  CostMatrix costs;
  costs.rows = n;
  costs.cols = n;
  costs.cells.resize(n * n);
  for (std::size_t i = 0; i < n * n; ++i)
    costs.cells[i] = max_count - counts[i];

  const Assignment a = hungarian_assign(costs);
  std::map<int, int> mapping;
  for (std::size_t r = 0; r < pred_labels.size(); ++r) {
    const std::size_t c = a.row_to_col[r];
    if (c < true_labels.size()) mapping[pred_labels[r]] = true_labels[c];
  }
  return mapping;
}

}  // namespace

double clustering_accuracy(const std::vector<int>& pred,
                           const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("clustering_accuracy: length mismatch");
  const std::map<int, int> mapping = best_matching(pred, truth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto it = mapping.find(pred[i]);
    if (it != mapping.end() && it->second == truth[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

TimestepAccuracy evaluate_timestep(const ExemplarStore& store,
                                   const EncoderParams& encoder,
                                   const std::vector<Sample>& test_set,
                                   const std::set<int>& novel_at_t,
                                   Metric metric) {
  if (test_set.empty())
    throw std::invalid_argument("evaluate_timestep: empty test set");

  std::vector<int> pred, truth;
  pred.reserve(test_set.size());
  truth.reserve(test_set.size());
  for (const Sample& s : test_set) {
    if (s.label == kUnlabeled)
      throw std::invalid_argument("evaluate_timestep: unlabeled test sample");
    pred.push_back(classify_nearest_prototype(store, encoder, s.x, metric));
    truth.push_back(s.label);
  }

  const std::map<int, int> mapping = best_matching(pred, truth);

  std::size_t known_hits = 0, known_total = 0;
  std::size_t novel_hits = 0, novel_total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto it = mapping.find(pred[i]);
    const bool hit = it != mapping.end() && it->second == truth[i];
    if (novel_at_t.count(truth[i])) {
      ++novel_total;
      if (hit) ++novel_hits;
    } else {
      ++known_total;
      if (hit) ++known_hits;
    }
  }

  TimestepAccuracy acc;
  acc.acc_known = known_total == 0
                      ? 0.0
                      : static_cast<double>(known_hits) /
                            static_cast<double>(known_total);
  if (novel_total > 0)
    acc.acc_novel = static_cast<double>(novel_hits) /
                    static_cast<double>(novel_total);
  return acc;
}

FinalMetrics finalize(const MetricsLedger& ledger) {
  const TimestepRecord* base = nullptr;
  for (const TimestepRecord& r : ledger.records)
    if (r.t == 0) base = &r;
  if (!base)
    throw std::invalid_argument("finalize: ledger is missing the t=0 record");

  FinalMetrics out;
  int final_t = 0;
  bool any_drop = false;
  double worst = 0.0;
  for (const TimestepRecord& r : ledger.records) {
    if (r.t >= 1) {
      const double drop = base->acc_known - r.acc_known;
      worst = any_drop ? std::max(worst, drop) : drop;
      any_drop = true;
    }
    if (r.t >= final_t) final_t = r.t;
  }
  out.m_f = any_drop ? worst : 0.0;
  for (const TimestepRecord& r : ledger.records)
    if (r.t == final_t && r.acc_novel) out.m_d = r.acc_novel;
  return out;
}

}  // namespace gm
