#include "doctest.h"
#include "gm/class_count.hpp"
#include "gm/rng.hpp"
#include "oracles.hpp"

using gm::AnchoredPoint;
using gm::Vec;

namespace {

// Tight Gaussian blob around a center.
std::vector<Vec> blob(gm::Rng& rng, const Vec& center, int n, double sigma) {
  std::vector<Vec> out;
  for (int i = 0; i < n; ++i) {
    Vec x = center;
    for (double& v : x) v += sigma * rng.next_normal();
    out.push_back(std::move(x));
  }
  return out;
}

Vec axis(std::size_t dim, std::size_t i, double scale) {
  Vec v(dim, 0.0);
  v[i] = scale;
  return v;
}

}  // namespace

TEST_CASE("semi_kmeans: all points anchored converges immediately") {
  std::vector<AnchoredPoint> anchored = {
      {{0.0, 0.0}, 5}, {{0.1, 0.0}, 5}, {{4.0, 4.0}, 9}, {{4.1, 4.0}, 9}};
  const auto res = gm::semi_kmeans({}, anchored, 2, 1);
  CHECK(res.iterations == 1);
  CHECK(res.anchored_assign == std::vector<int>{0, 0, 1, 1});
  CHECK(res.anchored_label_of_cluster == std::vector<int>{5, 9});
}

TEST_CASE("semi_kmeans recovers separable free clusters") {
  gm::Rng rng(3);
  const auto anchored_pts = blob(rng, axis(4, 0, 10.0), 10, 0.3);
  const auto free_a = blob(rng, axis(4, 1, 10.0), 15, 0.3);
  const auto free_b = blob(rng, axis(4, 2, 10.0), 15, 0.3);

  std::vector<AnchoredPoint> anchored;
  for (const Vec& p : anchored_pts) anchored.push_back({p, 0});
  std::vector<Vec> free_points = free_a;
  free_points.insert(free_points.end(), free_b.begin(), free_b.end());

  const auto res = gm::semi_kmeans(free_points, anchored, 3, 42);
  // purity 1.0: the first 15 all share one cluster, the rest the other
  const int c_a = res.free_assign[0];
  const int c_b = res.free_assign[15];
  CHECK(c_a != c_b);
  for (int i = 0; i < 15; ++i) CHECK(res.free_assign[i] == c_a);
  for (int i = 15; i < 30; ++i) CHECK(res.free_assign[i] == c_b);
}

TEST_CASE("semi_kmeans: no free clusters forces nearest anchored centroid") {
  std::vector<AnchoredPoint> anchored = {{{0.0, 0.0}, 1}, {{10.0, 0.0}, 2}};
  const std::vector<Vec> free_points = {{1.0, 0.0}, {9.0, 0.0}, {4.0, 0.0}};
  const auto res = gm::semi_kmeans(free_points, anchored, 2, 7);
  CHECK(res.free_assign[0] == 0);
  CHECK(res.free_assign[1] == 1);
  CHECK(res.free_assign[2] == 0);  // 4.0 starts closer to 0.0
}

TEST_CASE("semi_kmeans invariants") {
  gm::Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<AnchoredPoint> anchored;
    for (int cls = 0; cls < 2; ++cls)
      for (const Vec& p : blob(rng, axis(3, static_cast<std::size_t>(cls),
                                         8.0),
                               6, 0.5))
        anchored.push_back({p, cls});
    std::vector<Vec> free_points =
        blob(rng, axis(3, 2, 8.0), 10, 0.5);
    const std::size_t k_total = 3 + rng.next_below(2);

    const auto res = gm::semi_kmeans(free_points, anchored, k_total,
                                     1000 + trial);

    // anchored points never move
    for (std::size_t i = 0; i < anchored.size(); ++i)
      CHECK(res.anchored_assign[i] == (anchored[i].label == 0 ? 0 : 1));

    // Lloyd monotonicity
    for (std::size_t i = 1; i < res.wcss_history.size(); ++i)
      CHECK(res.wcss_history[i] <= res.wcss_history[i - 1] + 1e-9);
  }

  CHECK_THROWS(gm::semi_kmeans({}, {{{0.0, 0.0}, 1}, {{1.0, 1.0}, 2}}, 1, 0));
}

namespace {

// Store whose exemplars are tight blobs on separate axes; the identity
// encoder keeps embeddings equal to inputs (normalized).
gm::ExemplarStore axis_store(gm::Rng& rng, int classes, std::size_t dim) {
  gm::ExemplarStore store;
  store.budget = 200;
  for (int cls = 0; cls < classes; ++cls) {
    for (const Vec& p :
         blob(rng, axis(dim, static_cast<std::size_t>(cls), 10.0), 8, 0.3))
      store.exemplars[cls].push_back(gm::Exemplar{p, cls, 0});
  }
  return store;
}

}  // namespace

TEST_CASE("estimate_novel_count on separable fixtures") {
  gm::Rng rng(13);
  const std::size_t dim = 8;
  const gm::EncoderParams id = oracle::identity_encoder(dim);
  gm::ExemplarStore store = axis_store(rng, 3, dim);
  store.refresh_prototypes(id);

  SUBCASE("one true novel cluster in range 1..5") {
    std::vector<Vec> batch;
    for (const Vec& p : blob(rng, axis(dim, 5, 10.0), 30, 0.3)) {
      batch.push_back(gm::encode(id, p));
    }
    CHECK(gm::estimate_novel_count(batch, store, id, {1, 5}, 99) == 1);
  }

  SUBCASE("singleton range returns its value") {
    std::vector<Vec> batch;
    for (const Vec& p : blob(rng, axis(dim, 5, 10.0), 10, 0.3))
      batch.push_back(gm::encode(id, p));
    CHECK(gm::estimate_novel_count(batch, store, id, {3, 3}, 99) == 3);
  }

  SUBCASE("two well-separated novel clusters") {
    std::vector<Vec> batch;
    for (const Vec& p : blob(rng, axis(dim, 5, 10.0), 25, 0.3))
      batch.push_back(gm::encode(id, p));
    for (const Vec& p : blob(rng, axis(dim, 6, 10.0), 25, 0.3))
      batch.push_back(gm::encode(id, p));
    const int got = gm::estimate_novel_count(batch, store, id, {1, 6}, 99);
    CHECK(got >= 1);
    CHECK(got <= 3);  // small over-counts are tolerated, undercounts are not
  }
}
