#include <cmath>

#include "doctest.h"
#include "gm/model.hpp"
#include "oracles.hpp"

using gm::BranchPair;
using gm::ClusterHeadParams;
using gm::EncoderParams;
using gm::Layer;
using gm::LossContext;
using gm::LossWeights;
using gm::Vec;

namespace {

EncoderParams two_layer_fixture() {
  // 2 -> 2 -> 2 with hand-set weights for manual forward checks
  EncoderParams p;
  Layer l1;
  l1.out = 2;
  l1.in = 2;
  l1.w = {1.0, 0.5, -0.25, 2.0};
  l1.b = {0.1, -0.2};
  Layer l2;
  l2.out = 2;
  l2.in = 2;
  l2.w = {0.5, -1.0, 1.5, 0.25};
  l2.b = {0.0, 0.3};
  p.layers = {l1, l2};
  return p;
}

BranchPair random_pair(gm::Rng& rng, std::size_t in = 3, std::size_t hidden = 4,
                       std::size_t out = 3, std::size_t k = 2) {
  BranchPair pair;
  pair.dynamic_branch = gm::make_encoder(in, {hidden}, out, rng);
  pair.static_branch = gm::make_encoder(in, {hidden}, out, rng);
  pair.head = gm::make_head(k, out, rng);
  return pair;
}

LossContext random_context(gm::Rng& rng, std::size_t in, std::size_t out,
                           std::size_t n) {
  LossContext ctx;
  ctx.tau = 0.5;
  for (std::size_t i = 0; i < n; ++i) {
    Vec x(in);
    for (double& v : x) v = rng.next_normal();
    ctx.bce_samples.push_back(x);
    ctx.sd_samples.push_back(x);
    Vec noisy = x;
    for (double& v : noisy) v += 0.2 * rng.next_normal();
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
    Vec proto(out);
    for (double& v : proto) v = rng.next_normal();
    ctx.pll_prototypes[cls] = gm::l2_normalize(proto);
    for (int e = 0; e < 2; ++e) {
      Vec x(in);
      for (double& v : x) v = rng.next_normal();
      ctx.pll_exemplars[cls].push_back(x);
    }
  }
  return ctx;
}

}  // namespace

TEST_CASE("encode: identity layer normalizes") {
  const EncoderParams id = oracle::identity_encoder(2);
  const Vec z = gm::encode(id, {3.0, 4.0});
  CHECK(z[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(z[1] == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("encode: all-zero parameters give the zero vector") {
  EncoderParams p = oracle::identity_encoder(3);
  for (Layer& l : p.layers) {
    for (double& w : l.w) w = 0.0;
    for (double& b : l.b) b = 0.0;
  }
  const Vec z = gm::encode(p, {1.0, -2.0, 0.5});
  CHECK(z == Vec{0.0, 0.0, 0.0});
}

TEST_CASE("encode: two-layer forward matches a manual computation") {
  const EncoderParams p = two_layer_fixture();
  // x = [1, 0]: a1 = [1*1+0.5*0+0.1, -0.25*1+2*0-0.2] = [1.1, -0.45]
  // relu -> [1.1, 0]; a2 = [0.5*1.1+0, 1.5*1.1+0.3] = [0.55, 1.95]
  const double norm = std::sqrt(0.55 * 0.55 + 1.95 * 1.95);
  const Vec z = gm::encode(p, {1.0, 0.0});
  CHECK(z[0] == doctest::Approx(0.55 / norm).epsilon(1e-12));
  CHECK(z[1] == doctest::Approx(1.95 / norm).epsilon(1e-12));

  CHECK_THROWS(gm::encode(p, {1.0, 2.0, 3.0}));
}

TEST_CASE("head_forward examples") {
  ClusterHeadParams zero;
  zero.k = 2;
  zero.dim = 2;
  zero.w = {0, 0, 0, 0};
  zero.b = {0, 0};
  const Vec c = gm::head_forward(zero, {0.3, 0.7});
  CHECK(c[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(c[1] == doctest::Approx(0.5).epsilon(1e-12));

  ClusterHeadParams single;
  single.k = 1;
  single.dim = 2;
  single.w = {0.4, -0.2};
  single.b = {0.1};
  CHECK(gm::head_forward(single, {1.0, 1.0}) == Vec{1.0});

  ClusterHeadParams hand;
  hand.k = 2;
  hand.dim = 2;
  hand.w = {1.0, 0.0, 0.0, 1.0};
  hand.b = {0.5, 0.0};
  // logits for z=[1,0]: [1.5, 0.0]
  const Vec probs = gm::head_forward(hand, {1.0, 0.0});
  const Vec want = gm::softmax({1.5, 0.0});
  CHECK(probs[0] == doctest::Approx(want[0]).epsilon(1e-12));
  CHECK(probs[1] == doctest::Approx(want[1]).epsilon(1e-12));

  CHECK_THROWS(gm::head_forward(hand, {1.0, 0.0, 0.0}));
}

TEST_CASE("head_forward sums to one") {
  gm::Rng rng(3);
  ClusterHeadParams head = gm::make_head(4, 3, rng);
  for (int trial = 0; trial < 50; ++trial) {
    Vec z(3);
    for (double& v : z) v = rng.next_normal() * 4.0;
    const Vec c = gm::head_forward(head, z);
    double sum = 0.0;
    for (double v : c) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("loss_bce examples") {
  // perfect agreement: every term is -log(1 - 1e-7)
  const std::vector<Vec> c1 = {{1.0, 0.0}, {1.0, 0.0}};
  const std::vector<std::vector<double>> all_ones = {{1, 1}, {1, 1}};
  CHECK(gm::loss_bce(c1, all_ones) == doctest::Approx(0.0).epsilon(1e-5));

  // agree with selves, disagree across
  const std::vector<Vec> c2 = {{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<std::vector<double>> eye = {{1, 0}, {0, 1}};
  CHECK(gm::loss_bce(c2, eye) == doctest::Approx(0.0).epsilon(1e-5));

  const std::vector<Vec> c3 = {{0.5, 0.5}, {0.5, 0.5}};
  CHECK(gm::loss_bce(c3, all_ones) ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));

  const std::vector<std::vector<double>> misshapen = {{1.0}};
  CHECK_THROWS(gm::loss_bce(c3, misshapen));
}

TEST_CASE("loss_sd examples") {
  gm::Rng rng(9);
  BranchPair pair = random_pair(rng);
  pair.dynamic_branch = pair.static_branch;
  std::vector<Vec> batch = {{0.5, -1.0, 2.0}, {1.0, 1.0, 1.0}};
  CHECK(gm::loss_sd(pair, batch) == doctest::Approx(0.0).epsilon(1e-15));

  // orthogonal unit embeddings are squared-distance 2 apart
  BranchPair ortho;
  ortho.static_branch = oracle::identity_encoder(2);
  ortho.dynamic_branch = oracle::identity_encoder(2);
  // swap rows in the dynamic branch so [1,0] maps to [0,1]
  ortho.dynamic_branch.layers[0].w = {0.0, 1.0, 1.0, 0.0};
  CHECK(gm::loss_sd(ortho, {{1.0, 0.0}}) == doctest::Approx(2.0).epsilon(1e-12));

  CHECK_THROWS(gm::loss_sd(pair, {}));
}

TEST_CASE("loss_pll examples") {
  const EncoderParams id = oracle::identity_encoder(2);

  // one class: softmax over a single prototype is exactly 1
  std::map<int, std::vector<Vec>> one_class = {{0, {{1.0, 0.0}, {0.0, 1.0}}}};
  std::map<int, Vec> one_proto = {{0, {1.0, 0.0}}};
  CHECK(gm::loss_pll(id, one_class, one_proto, 0.1) == doctest::Approx(0.0));

  // two orthogonal prototypes, exemplar embedding equal to mu_1
  std::map<int, std::vector<Vec>> ex = {{0, {{1.0, 0.0}}}};
  std::map<int, Vec> protos = {{0, {1.0, 0.0}}, {1, {0.0, 1.0}}};
  CHECK_THROWS(gm::loss_pll(id, {{0, {}}}, protos, 1.0));  // empty class list
  const double tau1 = gm::loss_pll(id, ex, protos, 1.0);
  CHECK(tau1 == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-9));
  const double tau01 = gm::loss_pll(id, ex, protos, 0.1);
  CHECK(tau01 == doctest::Approx(std::log(1.0 + std::exp(-10.0))).epsilon(1e-6));
  CHECK(tau01 == doctest::Approx(4.54e-5).epsilon(1e-2));
}

TEST_CASE("loss_mse_consistency examples") {
  const EncoderParams id = oracle::identity_encoder(2);
  CHECK(gm::loss_mse_consistency(id, {{{1.0, 0.0}, {1.0, 0.0}}}) ==
        doctest::Approx(0.0));
  CHECK(gm::loss_mse_consistency(id, {{{1.0, 0.0}, {0.0, 1.0}}}) ==
        doctest::Approx(2.0).epsilon(1e-12));
  CHECK(gm::loss_mse_consistency(
            id, {{{1.0, 0.0}, {1.0, 0.0}}, {{1.0, 0.0}, {0.0, 1.0}}}) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("losses are finite and nonnegative on random inputs") {
  gm::Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    BranchPair pair = random_pair(rng);
    LossContext ctx = random_context(rng, 3, 3, 4);
    const gm::LossValue v = gm::total_loss(pair, ctx, LossWeights{});
    for (double x : {v.bce, v.sd, v.pll, v.mse, v.total}) {
      CHECK(std::isfinite(x));
      CHECK(x >= 0.0);
    }
  }
}

TEST_CASE("backward: zero weights give zero gradients") {
  gm::Rng rng(33);
  BranchPair pair = random_pair(rng);
  LossContext ctx = random_context(rng, 3, 3, 3);
  LossWeights off{0.0, 0.0, 0.0, 0.0};
  const gm::ModelGrads g = gm::backward(pair, ctx, off);
  for (const Layer& l : g.encoder.layers) {
    for (double w : l.w) CHECK(w == 0.0);
    for (double b : l.b) CHECK(b == 0.0);
  }
  for (double w : g.head.w) CHECK(w == 0.0);
  CHECK(gm::gradient_check(pair, ctx, off) == 0.0);
}

TEST_CASE("backward: L_SD at dynamic == static is stationary") {
  gm::Rng rng(34);
  BranchPair pair = random_pair(rng);
  pair.dynamic_branch = pair.static_branch;
  LossContext ctx;
  for (int i = 0; i < 3; ++i) {
    Vec x(3);
    for (double& v : x) v = rng.next_normal();
    ctx.sd_samples.push_back(x);
  }
  LossWeights only_sd{0.0, 1.0, 0.0, 0.0};
  const gm::ModelGrads g = gm::backward(pair, ctx, only_sd);
  double norm = 0.0;
  for (const Layer& l : g.encoder.layers) {
    for (double w : l.w) norm += w * w;
    for (double b : l.b) norm += b * b;
  }
  CHECK(std::sqrt(norm) < 1e-8);
}

TEST_CASE("backward matches finite differences per loss and combined") {
  gm::Rng rng(55);
  const std::vector<LossWeights> configs = {
      {1.0, 0.0, 0.0, 0.0}, {0.0, 1.0, 0.0, 0.0}, {0.0, 0.0, 1.0, 0.0},
      {0.0, 0.0, 0.0, 1.0}, {1.0, 1.0, 1.0, 1.0}};
  for (const LossWeights& weights : configs) {
    for (int trial = 0; trial < 25; ++trial) {
      // redraw configurations sitting on a rectifier kink or clamp edge,
      // where central differences are meaningless
      BranchPair pair = random_pair(rng);
      LossContext ctx = random_context(rng, 3, 3, 3 + rng.next_below(2));
      while (gm::gradcheck_margin(pair, ctx) < 1e-3) {
        pair = random_pair(rng);
        ctx = random_context(rng, 3, 3, 3 + rng.next_below(2));
      }
      const double err = gm::gradient_check(pair, ctx, weights);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("gradient_check flags a corrupted gradient") {
  gm::Rng rng(77);
  BranchPair pair = random_pair(rng);
  LossContext ctx = random_context(rng, 3, 3, 3);
  LossWeights weights;
  const gm::ModelGrads good = gm::backward(pair, ctx, weights);

  // recompute the worst error with one entry knocked off manually
  gm::ModelGrads bad = good;
  bad.encoder.layers[0].w[0] += 1.0;
  double worst = 0.0;
  BranchPair probe = pair;
  const double step = 1e-5;
  auto fd_err = [&](double* param, double analytic) {
    const double saved = *param;
    *param = saved + step;
    const double up = gm::total_loss(probe, ctx, weights).total;
    *param = saved - step;
    const double down = gm::total_loss(probe, ctx, weights).total;
    *param = saved;
    const double fd = (up - down) / (2.0 * step);
    return std::abs(analytic - fd) /
           std::max(1e-4, std::abs(analytic) + std::abs(fd));
  };
  worst = fd_err(&probe.dynamic_branch.layers[0].w[0],
                 bad.encoder.layers[0].w[0]);
  CHECK(worst > 1e-2);
}

TEST_CASE("sgd_step examples") {
  // single 1x1 layer as a scalar parameter
  EncoderParams p;
  Layer l;
  l.out = 1;
  l.in = 1;
  l.w = {1.0};
  l.b = {0.0};
  p.layers = {l};
  ClusterHeadParams no_head;

  gm::ModelGrads g;
  g.encoder.layers = p.layers;
  g.encoder.layers[0].w = {0.0};
  g.encoder.layers[0].b = {0.0};

  SUBCASE("zero gradient leaves parameters unchanged") {
    gm::OptState opt = gm::make_opt_state(p, no_head, 0.1, 0.9, 0.0);
    gm::sgd_step(opt, p, no_head, g);
    CHECK(p.layers[0].w[0] == 1.0);
  }

  SUBCASE("single step without momentum") {
    gm::OptState opt = gm::make_opt_state(p, no_head, 0.1, 0.0, 0.0);
    g.encoder.layers[0].w = {1.0};
    gm::sgd_step(opt, p, no_head, g);
    CHECK(p.layers[0].w[0] == doctest::Approx(0.9).epsilon(1e-15));
  }

  SUBCASE("two steps with momentum unroll the velocity") {
    gm::OptState opt = gm::make_opt_state(p, no_head, 0.1, 0.9, 0.0);
    g.encoder.layers[0].w = {1.0};
    gm::sgd_step(opt, p, no_head, g);
    CHECK(p.layers[0].w[0] == doctest::Approx(0.9).epsilon(1e-12));
    gm::sgd_step(opt, p, no_head, g);
    CHECK(p.layers[0].w[0] == doctest::Approx(0.9 - 0.19).epsilon(1e-12));
  }

  SUBCASE("learning rate decays every 60 epochs") {
    gm::OptState opt = gm::make_opt_state(p, no_head, 0.1, 0.9, 0.0);
    CHECK(opt.lr() == doctest::Approx(0.1));
    opt.epoch = 59;
    CHECK(opt.lr() == doctest::Approx(0.1));
    opt.epoch = 60;
    CHECK(opt.lr() == doctest::Approx(0.01));
    opt.epoch = 120;
    CHECK(opt.lr() == doctest::Approx(0.001));
  }
}

TEST_CASE("ema_merge examples and affine composition") {
  gm::Rng rng(88);
  const EncoderParams s = gm::make_encoder(3, {4}, 3, rng);
  const EncoderParams d = gm::make_encoder(3, {4}, 3, rng);

  const EncoderParams all_static = gm::ema_merge(s, d, 1.0);
  for (std::size_t l = 0; l < s.layers.size(); ++l)
    CHECK(all_static.layers[l].w == s.layers[l].w);

  const EncoderParams all_dynamic = gm::ema_merge(s, d, 0.0);
  for (std::size_t l = 0; l < s.layers.size(); ++l)
    CHECK(all_dynamic.layers[l].w == d.layers[l].w);

  // scalar check with the published coefficient
  EncoderParams s1 = oracle::identity_encoder(1);
  EncoderParams d1 = oracle::identity_encoder(1);
  s1.layers[0].w = {1.0};
  d1.layers[0].w = {0.0};
  CHECK(gm::ema_merge(s1, d1, 0.99).layers[0].w[0] ==
        doctest::Approx(0.99).epsilon(1e-15));

  // two merges with alpha then beta equal one with 1-(1-a)(1-b)
  const double a = 0.3, b = 0.8;
  const EncoderParams twice = gm::ema_merge(s, gm::ema_merge(s, d, a), b);
  const EncoderParams once = gm::ema_merge(s, d, 1.0 - (1.0 - a) * (1.0 - b));
  for (std::size_t l = 0; l < s.layers.size(); ++l)
    for (std::size_t i = 0; i < twice.layers[l].w.size(); ++i)
      CHECK(twice.layers[l].w[i] ==
            doctest::Approx(once.layers[l].w[i]).epsilon(1e-12));
}

TEST_CASE("static branch is bitwise unchanged by training steps") {
  gm::Rng rng(99);
  BranchPair pair = random_pair(rng);
  const EncoderParams snapshot = pair.static_branch;
  gm::OptState opt =
      gm::make_opt_state(pair.dynamic_branch, pair.head, 0.1, 0.9, 1e-4);
  for (int step = 0; step < 5; ++step) {
    LossContext ctx = random_context(rng, 3, 3, 3);
    const gm::ModelGrads g = gm::backward(pair, ctx, LossWeights{});
    gm::sgd_step(opt, pair.dynamic_branch, pair.head, g);
  }
  for (std::size_t l = 0; l < snapshot.layers.size(); ++l) {
    CHECK(pair.static_branch.layers[l].w == snapshot.layers[l].w);
    CHECK(pair.static_branch.layers[l].b == snapshot.layers[l].b);
  }
}
