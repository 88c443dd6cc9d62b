#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "gm/model.hpp"
#include "gm/numeric.hpp"

namespace gm {

// A stored raw sample representing its class. Raw inputs (not embeddings)
// are kept so prototypes stay recomputable after the encoder changes.
struct Exemplar {
  Vec sample;
  int label = 0;
  int source_timestep = 0;
};

struct Prototype {
  int class_id = 0;
  Vec mu;                    // l2-normalized mean embedding
  std::size_t support = 0;   // contributing samples
  bool degenerate = false;   // mean embedding collapsed to zero
};

// Per-class exemplar lists under a global memory budget. Exemplar lists are
// kept in herding order, so truncation always keeps the best-ranked ones.
struct ExemplarStore {
  std::map<int, std::vector<Exemplar>> exemplars;
  std::map<int, Prototype> prototypes;
  std::size_t budget = 200;

  std::size_t total_exemplars() const;
  std::size_t class_count() const { return exemplars.size(); }
  int max_class_id() const;

  // Recomputes every prototype from the stored raw exemplars.
  void refresh_prototypes(const EncoderParams& encoder);
};

// Greedy herding: step i picks the sample whose inclusion keeps the running
// exemplar mean closest to the full class mean embedding. Ties go to the
// lowest input index. Returns min(m, |samples|) samples without repetition.
std::vector<Vec> herd_exemplars(const std::vector<Vec>& samples,
                                const EncoderParams& encoder, std::size_t m);

Prototype compute_prototype(const std::vector<Exemplar>& exemplars,
                            const EncoderParams& encoder, int class_id);

// Nearest prototype by the given metric; ties resolve to the lowest class
// id. Degenerate (zero-mean) prototypes are skipped.
int classify_nearest_prototype(const ExemplarStore& store,
                               const EncoderParams& encoder, const Vec& x,
                               Metric metric);

// Shrinks every class to floor(budget / K) exemplars (herding order keeps
// the head of each list) and recomputes prototypes.
void rebalance_budget(ExemplarStore& store, const EncoderParams& encoder);

}  // namespace gm
