#include "doctest.h"
#include "gm/metrics.hpp"
#include "gm/rng.hpp"
#include "oracles.hpp"

using gm::MetricsLedger;
using gm::Sample;
using gm::TimestepRecord;
using gm::Vec;

TEST_CASE("clustering_accuracy examples") {
  CHECK(gm::clustering_accuracy({0, 0, 1, 1}, {1, 1, 0, 0}) ==
        doctest::Approx(1.0));
  CHECK(gm::clustering_accuracy({0, 1, 1}, {0, 0, 1}) ==
        doctest::Approx(2.0 / 3.0));
  CHECK(gm::clustering_accuracy({4, 2, 9}, {4, 2, 9}) == doctest::Approx(1.0));
  CHECK_THROWS(gm::clustering_accuracy({0, 1}, {0}));
}

TEST_CASE("clustering_accuracy is invariant under relabeling") {
  gm::Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 5 + rng.next_below(20);
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.next_below(4));
      truth[i] = static_cast<int>(rng.next_below(4));
    }
    const double base = gm::clustering_accuracy(pred, truth);

    // random permutation of the predicted label names
    std::vector<int> names = {0, 1, 2, 3};
    rng.shuffle(names);
    std::vector<int> renamed(n);
    for (std::size_t i = 0; i < n; ++i)
      renamed[i] = names[static_cast<std::size_t>(pred[i])] + 100;
    CHECK(gm::clustering_accuracy(renamed, truth) == doctest::Approx(base));
  }
}

TEST_CASE("clustering_accuracy equals brute force for <= 6 labels") {
  gm::Rng rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng.next_below(15);
    const int k_pred = 1 + static_cast<int>(rng.next_below(6));
    const int k_true = 1 + static_cast<int>(rng.next_below(6));
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = static_cast<int>(rng.next_below(k_pred));
      truth[i] = static_cast<int>(rng.next_below(k_true));
    }
    const double got = gm::clustering_accuracy(pred, truth);
    const double want = oracle::brute_force_accuracy(pred, truth);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
  }
}

TEST_CASE("accuracy is 1 exactly for pure relabelings") {
  gm::Rng rng(41);
  std::vector<int> truth(30), pred(30);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = static_cast<int>(rng.next_below(3));
    pred[i] = 7 - truth[i];  // bijective rename
  }
  CHECK(gm::clustering_accuracy(pred, truth) == doctest::Approx(1.0));
  pred[0] = 99;  // break the bijection on one sample
  CHECK(gm::clustering_accuracy(pred, truth) < 1.0);
}

namespace {

// store + identity encoder where class prototypes sit on axes, and a test
// set whose samples are tight around them
struct EvalFixture {
  gm::ExemplarStore store;
  gm::EncoderParams encoder = oracle::identity_encoder(8);
  std::vector<Sample> test;
};

EvalFixture make_eval_fixture() {
  EvalFixture f;
  for (int cls = 0; cls < 8; ++cls) {
    Vec mu(8, 0.0);
    mu[static_cast<std::size_t>(cls)] = 1.0;
    gm::Prototype p;
    p.class_id = cls;
    p.mu = mu;
    p.support = 1;
    f.store.prototypes[cls] = p;
    f.store.exemplars[cls] = {gm::Exemplar{mu, cls, 0}};
  }
  std::int64_t id = 0;
  for (int cls = 0; cls < 8; ++cls) {
    Sample s;
    s.id = id++;
    s.label = cls;
    s.split = gm::Split::kTest;
    s.x.assign(8, 0.01);
    s.x[static_cast<std::size_t>(cls)] = 1.0;
    f.test.push_back(s);
  }
  return f;
}

}  // namespace

TEST_CASE("evaluate_timestep examples") {
  SUBCASE("perfect predictor") {
    EvalFixture f = make_eval_fixture();
    const auto acc = gm::evaluate_timestep(f.store, f.encoder, f.test,
                                           {4, 5, 6, 7}, gm::Metric::kCosine);
    CHECK(acc.acc_known == doctest::Approx(1.0));
    REQUIRE(acc.acc_novel.has_value());
    CHECK(*acc.acc_novel == doctest::Approx(1.0));
  }

  SUBCASE("no novel classes means no novel accuracy") {
    EvalFixture f = make_eval_fixture();
    const auto acc =
        gm::evaluate_timestep(f.store, f.encoder, f.test, {}, gm::Metric::kCosine);
    CHECK(acc.acc_known == doctest::Approx(1.0));
    CHECK_FALSE(acc.acc_novel.has_value());
  }

  SUBCASE("one mislabeled known sample under the joint matching") {
    EvalFixture f = make_eval_fixture();
    // push one known sample (class 0) onto class 1's prototype
    f.test[0].x.assign(8, 0.01);
    f.test[0].x[1] = 1.0;
    const auto acc = gm::evaluate_timestep(f.store, f.encoder, f.test,
                                           {4, 5, 6, 7}, gm::Metric::kCosine);
    CHECK(acc.acc_known == doctest::Approx(0.75));
    CHECK(*acc.acc_novel == doctest::Approx(1.0));
  }
}

TEST_CASE("finalize examples") {
  SUBCASE("max drop over later timesteps") {
    MetricsLedger ledger;
    ledger.records = {{0, 0.9, {}}, {1, 0.85, {}}, {2, 0.80, {}}, {3, 0.82, {}}};
    const auto m = gm::finalize(ledger);
    CHECK(m.m_f == doctest::Approx(0.10).epsilon(1e-12));
  }

  SUBCASE("negative forgetting when accuracy improves") {
    MetricsLedger ledger;
    ledger.records = {{0, 0.7, {}}, {1, 0.8, {}}};
    CHECK(gm::finalize(ledger).m_f == doctest::Approx(-0.10).epsilon(1e-12));
  }

  SUBCASE("discovery metric is the final novel accuracy") {
    MetricsLedger ledger;
    ledger.records = {{0, 0.9, {}}, {1, 0.8, 0.5}, {2, 0.8, 0.36}};
    const auto m = gm::finalize(ledger);
    REQUIRE(m.m_d.has_value());
    CHECK(*m.m_d == doctest::Approx(0.36));
  }

  SUBCASE("missing t=0 errors; t=0 only gives m_f = 0 and no m_d") {
    MetricsLedger missing;
    missing.records = {{1, 0.8, {}}};
    CHECK_THROWS(gm::finalize(missing));

    MetricsLedger only0;
    only0.records = {{0, 0.95, {}}};
    const auto m = gm::finalize(only0);
    CHECK(m.m_f == 0.0);
    CHECK_FALSE(m.m_d.has_value());
  }

  SUBCASE("m_f is zero when accuracy is constant, nonnegative when it sags") {
    MetricsLedger flat;
    flat.records = {{0, 0.9, {}}, {1, 0.9, {}}, {2, 0.9, {}}};
    CHECK(gm::finalize(flat).m_f == doctest::Approx(0.0));

    MetricsLedger sag;
    sag.records = {{0, 0.9, {}}, {1, 0.85, {}}, {2, 0.88, {}}};
    CHECK(gm::finalize(sag).m_f >= 0.0);
  }
}
