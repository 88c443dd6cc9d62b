#include "gm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace gm {

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;
constexpr double kNormFloor = 1e-12;

// Per-sample forward trace kept for backpropagation.
struct Trace {
  std::vector<Vec> inputs;    // input to each layer
  std::vector<Vec> preacts;   // pre-activation of each layer
  Vec embedding;              // normalized output
  double out_norm = 0.0;      // ||preacts.back()||
};

Trace encode_traced(const EncoderParams& params, const Vec& x) {
  if (x.size() != params.input_dim())
    throw std::invalid_argument("encode: input dimension mismatch (" +
                                std::to_string(x.size()) + " vs " +
                                std::to_string(params.input_dim()) + ")");
  Trace tr;
  Vec h = x;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const Layer& layer = params.layers[l];
    tr.inputs.push_back(h);
    Vec a(layer.out, 0.0);
    for (std::size_t r = 0; r < layer.out; ++r) {
      double s = layer.b[r];
      const double* wr = layer.w.data() + r * layer.in;
      for (std::size_t c = 0; c < layer.in; ++c) s += wr[c] * h[c];
      a[r] = s;
    }
    tr.preacts.push_back(a);
    if (l + 1 < params.layers.size()) {
      h.assign(a.size(), 0.0);
      for (std::size_t r = 0; r < a.size(); ++r) h[r] = a[r] > 0.0 ? a[r] : 0.0;
    } else {
      h = a;
    }
  }
  tr.out_norm = norm2(tr.preacts.back());
  tr.embedding = l2_normalize(tr.preacts.back());
  return tr;
}

EncoderGrads make_zero_grads(const EncoderParams& p) {
  EncoderGrads g;
  g.layers.reserve(p.layers.size());
  for (const Layer& l : p.layers) {
    Layer z;
    z.out = l.out;
    z.in = l.in;
    z.w.assign(l.w.size(), 0.0);
    z.b.assign(l.b.size(), 0.0);
    g.layers.push_back(std::move(z));
  }
  return g;
}

// Accumulates d(loss)/d(embedding) into parameter gradients, walking the
// normalization Jacobian, the linear output layer and the rectified hidden
// layers in reverse.
void backprop_sample(const EncoderParams& params, const Trace& tr,
                     const Vec& d_embedding, EncoderGrads& grads) {
  Vec da;
  if (tr.out_norm < kNormFloor) {
    da = d_embedding;  // degenerate normalize acts as identity
  } else {
    // d a = (I - z z^T) dz / ||a||
    const Vec& z = tr.embedding;
    const double zd = dot(z, d_embedding);
    da.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
      da[i] = (d_embedding[i] - z[i] * zd) / tr.out_norm;
  }
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Layer& layer = params.layers[li];
    Layer& g = grads.layers[li];
    const Vec& input = tr.inputs[li];
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double d = da[r];
      if (d == 0.0) continue;
      g.b[r] += d;
      double* gw = g.w.data() + r * layer.in;
      for (std::size_t c = 0; c < layer.in; ++c) gw[c] += d * input[c];
    }
    if (li == 0) break;
    Vec dh(layer.in, 0.0);
    for (std::size_t r = 0; r < layer.out; ++r) {
      const double d = da[r];
      if (d == 0.0) continue;
      const double* wr = layer.w.data() + r * layer.in;
      for (std::size_t c = 0; c < layer.in; ++c) dh[c] += d * wr[c];
    }
    // rectifier: pass gradient only where the pre-activation was positive
    const Vec& prev = tr.preacts[li - 1];
    da.assign(prev.size(), 0.0);
    for (std::size_t i = 0; i < prev.size(); ++i)
      if (prev[i] > 0.0) da[i] = dh[i];
  }
}

struct HeadTrace {
  Vec logits;
  Vec probs;
};

HeadTrace head_traced(const ClusterHeadParams& head, const Vec& z) {
  if (z.size() != head.dim)
    throw std::invalid_argument("head_forward: dimension mismatch");
  HeadTrace tr;
  tr.logits.assign(head.k, 0.0);
  for (std::size_t r = 0; r < head.k; ++r) {
    double s = head.b[r];
    const double* wr = head.w.data() + r * head.dim;
    for (std::size_t c = 0; c < head.dim; ++c) s += wr[c] * z[c];
    tr.logits[r] = s;
  }
  tr.probs = softmax(tr.logits);
  return tr;
}

void check_similarity(const std::vector<Vec>& c_list,
                      const std::vector<std::vector<double>>& s) {
  const std::size_t n = c_list.size();
  if (s.size() != n)
    throw std::invalid_argument("loss_bce: similarity shape mismatch");
  for (const auto& row : s)
    if (row.size() != n)
      throw std::invalid_argument("loss_bce: similarity shape mismatch");
}

}  // namespace

std::size_t param_count(const EncoderParams& e) {
  std::size_t n = 0;
  for (const Layer& l : e.layers) n += l.w.size() + l.b.size();
  return n;
}

EncoderParams make_encoder(std::size_t input_dim,
                           const std::vector<std::size_t>& hidden_dims,
                           std::size_t output_dim, Rng& rng) {
  EncoderParams p;
  std::vector<std::size_t> dims;
  dims.push_back(input_dim);
  for (std::size_t h : hidden_dims) dims.push_back(h);
  dims.push_back(output_dim);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Layer layer;
    layer.in = dims[l];
    layer.out = dims[l + 1];
    layer.w.resize(layer.out * layer.in);
    layer.b.assign(layer.out, 0.0);
    const double scale = std::sqrt(2.0 / static_cast<double>(layer.in));
    for (double& w : layer.w) w = rng.next_normal() * scale;
    p.layers.push_back(std::move(layer));
  }
  return p;
}

ClusterHeadParams make_head(std::size_t k, std::size_t dim, Rng& rng) {
  ClusterHeadParams h;
  h.k = k;
  h.dim = dim;
  h.w.resize(k * dim);
  h.b.assign(k, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& w : h.w) w = rng.next_normal() * scale;
  return h;
}

Vec encode(const EncoderParams& params, const Vec& x) {
  return encode_traced(params, x).embedding;
}

Vec head_forward(const ClusterHeadParams& head, const Vec& z) {
  return head_traced(head, z).probs;
}

double loss_bce(const std::vector<Vec>& c_list,
                const std::vector<std::vector<double>>& similarity) {
  check_similarity(c_list, similarity);
  const std::size_t n = c_list.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double p =
          std::clamp(dot(c_list[i], c_list[j]), kClampLo, kClampHi);
      loss -= similarity[i][j] * std::log(p) +
              (1.0 - similarity[i][j]) * std::log(1.0 - p);
    }
  }
  return loss / static_cast<double>(n);
}

double loss_sd(const BranchPair& pair, const std::vector<Vec>& batch) {
  if (batch.empty()) throw std::invalid_argument("loss_sd: empty batch");
  double loss = 0.0;
  for (const Vec& x : batch) {
    const Vec zs = encode(pair.static_branch, x);
    const Vec zd = encode(pair.dynamic_branch, x);
    loss += distance(zs, zd, Metric::kSquaredEuclidean);
  }
  return loss / static_cast<double>(batch.size());
}

double loss_pll(const EncoderParams& dynamic,
                const std::map<int, std::vector<Vec>>& exemplars,
                const std::map<int, Vec>& prototypes, double tau) {
  if (exemplars.empty()) throw std::invalid_argument("loss_pll: no classes");
  double loss = 0.0;
  for (const auto& [cls, samples] : exemplars) {
    if (samples.empty())
      throw std::invalid_argument("loss_pll: empty exemplar list for class " +
                                  std::to_string(cls));
    if (!prototypes.count(cls))
      throw std::invalid_argument("loss_pll: no prototype for class " +
                                  std::to_string(cls));
    double class_loss = 0.0;
    for (const Vec& x : samples) {
      const Vec z = encode(dynamic, x);
      Vec logits;
      logits.reserve(prototypes.size());
      std::size_t own = 0, idx = 0;
      for (const auto& [proto_cls, mu] : prototypes) {
        if (proto_cls == cls) own = idx;
        logits.push_back(dot(z, mu) / tau);
        ++idx;
      }
      const Vec q = softmax(logits);
      class_loss -= std::log(std::max(q[own], 1e-300));
    }
    loss += class_loss / static_cast<double>(samples.size());
  }
  return loss / static_cast<double>(exemplars.size());
}

double loss_mse_consistency(const EncoderParams& dynamic,
                            const std::vector<std::pair<Vec, Vec>>& pairs) {
  if (pairs.empty()) return 0.0;
  double loss = 0.0;
  for (const auto& [x, x_aug] : pairs) {
    const Vec z = encode(dynamic, x);
    const Vec za = encode(dynamic, x_aug);
    loss += distance(z, za, Metric::kSquaredEuclidean);
  }
  return loss / static_cast<double>(pairs.size());
}

LossValue total_loss(const BranchPair& pair, const LossContext& ctx,
                     const LossWeights& weights) {
  LossValue v;
  if (weights.bce > 0.0 && !ctx.bce_samples.empty()) {
    std::vector<Vec> c_list;
    c_list.reserve(ctx.bce_samples.size());
    for (const Vec& x : ctx.bce_samples)
      c_list.push_back(head_forward(pair.head, encode(pair.dynamic_branch, x)));
    v.bce = loss_bce(c_list, ctx.similarity);
  }
  if (weights.sd > 0.0 && !ctx.sd_samples.empty())
    v.sd = loss_sd(pair, ctx.sd_samples);
  if (weights.pll > 0.0 && !ctx.pll_exemplars.empty())
    v.pll = loss_pll(pair.dynamic_branch, ctx.pll_exemplars,
                     ctx.pll_prototypes, ctx.tau);
  if (weights.mse > 0.0 && !ctx.mse_pairs.empty())
    v.mse = loss_mse_consistency(pair.dynamic_branch, ctx.mse_pairs);
  v.total = weights.bce * v.bce + weights.sd * v.sd + weights.pll * v.pll +
            weights.mse * v.mse;
  return v;
}

ModelGrads backward(const BranchPair& pair, const LossContext& ctx,
                    const LossWeights& weights) {
  ModelGrads g;
  g.encoder = make_zero_grads(pair.dynamic_branch);
  g.head.w.assign(pair.head.w.size(), 0.0);
  g.head.b.assign(pair.head.b.size(), 0.0);

  // --- pairwise BCE: gradients reach the head and the encoder ---
  if (weights.bce > 0.0 && !ctx.bce_samples.empty()) {
    check_similarity(ctx.bce_samples, ctx.similarity);
    const std::size_t n = ctx.bce_samples.size();
    std::vector<Trace> traces(n);
    std::vector<HeadTrace> heads(n);
    for (std::size_t i = 0; i < n; ++i) {
      traces[i] = encode_traced(pair.dynamic_branch, ctx.bce_samples[i]);
      heads[i] = head_traced(pair.head, traces[i].embedding);
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    // dL/dc_i, accumulated over all pairs (i, j) and (j, i)
    std::vector<Vec> dc(n, Vec(pair.head.k, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double raw = dot(heads[i].probs, heads[j].probs);
        if (raw <= kClampLo || raw >= kClampHi) continue;  // clamped flat
        const double s = ctx.similarity[i][j];
        const double gp = -inv_n * (s / raw - (1.0 - s) / (1.0 - raw));
        if (i == j) {
          for (std::size_t a = 0; a < pair.head.k; ++a)
            dc[i][a] += 2.0 * gp * heads[i].probs[a];
        } else {
          for (std::size_t a = 0; a < pair.head.k; ++a) {
            dc[i][a] += gp * heads[j].probs[a];
            dc[j][a] += gp * heads[i].probs[a];
          }
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      // softmax Jacobian: dh = c .* dc - c * (c . dc)
      const Vec& c = heads[i].probs;
      const double cd = dot(c, dc[i]);
      Vec dh(pair.head.k);
      for (std::size_t a = 0; a < pair.head.k; ++a)
        dh[a] = weights.bce * (c[a] * dc[i][a] - c[a] * cd);
      const Vec& z = traces[i].embedding;
      Vec dz(z.size(), 0.0);
      for (std::size_t a = 0; a < pair.head.k; ++a) {
        g.head.b[a] += dh[a];
        double* gw = g.head.w.data() + a * pair.head.dim;
        const double* wr = pair.head.w.data() + a * pair.head.dim;
        for (std::size_t c2 = 0; c2 < pair.head.dim; ++c2) {
          gw[c2] += dh[a] * z[c2];
          dz[c2] += dh[a] * wr[c2];
        }
      }
      backprop_sample(pair.dynamic_branch, traces[i], dz, g.encoder);
    }
  }

  // --- static-dynamic distillation: dynamic branch only ---
  if (weights.sd > 0.0 && !ctx.sd_samples.empty()) {
    const double inv_n = 1.0 / static_cast<double>(ctx.sd_samples.size());
    for (const Vec& x : ctx.sd_samples) {
      const Vec zs = encode(pair.static_branch, x);
      const Trace tr = encode_traced(pair.dynamic_branch, x);
      Vec dz(tr.embedding.size());
      for (std::size_t i = 0; i < dz.size(); ++i)
        dz[i] = weights.sd * 2.0 * inv_n * (tr.embedding[i] - zs[i]);
      backprop_sample(pair.dynamic_branch, tr, dz, g.encoder);
    }
  }

  // --- pseudo-label learning against fixed prototypes ---
  if (weights.pll > 0.0 && !ctx.pll_exemplars.empty()) {
    const double inv_k = 1.0 / static_cast<double>(ctx.pll_exemplars.size());
    for (const auto& [cls, samples] : ctx.pll_exemplars) {
      if (samples.empty())
        throw std::invalid_argument("backward: empty exemplar list");
      if (!ctx.pll_prototypes.count(cls))
        throw std::invalid_argument("backward: no prototype for class " +
                                    std::to_string(cls));
      const double inv_p = 1.0 / static_cast<double>(samples.size());
      for (const Vec& x : samples) {
        const Trace tr = encode_traced(pair.dynamic_branch, x);
        Vec logits;
        std::vector<const Vec*> protos;
        std::size_t own = 0, idx = 0;
        for (const auto& [proto_cls, mu] : ctx.pll_prototypes) {
          if (proto_cls == cls) own = idx;
          logits.push_back(dot(tr.embedding, mu) / ctx.tau);
          protos.push_back(&mu);
          ++idx;
        }
        const Vec q = softmax(logits);
        Vec dz(tr.embedding.size(), 0.0);
        for (std::size_t j = 0; j < protos.size(); ++j) {
          const double coef = weights.pll * inv_k * inv_p *
                              (q[j] - (j == own ? 1.0 : 0.0)) / ctx.tau;
          for (std::size_t d = 0; d < dz.size(); ++d)
            dz[d] += coef * (*protos[j])[d];
        }
        backprop_sample(pair.dynamic_branch, tr, dz, g.encoder);
      }
    }
  }

  // --- consistency: gradient flows through both evaluations ---
  if (weights.mse > 0.0 && !ctx.mse_pairs.empty()) {
    const double inv_n = 1.0 / static_cast<double>(ctx.mse_pairs.size());
    for (const auto& [x, x_aug] : ctx.mse_pairs) {
      const Trace tr = encode_traced(pair.dynamic_branch, x);
      const Trace tra = encode_traced(pair.dynamic_branch, x_aug);
      Vec dz(tr.embedding.size());
      for (std::size_t i = 0; i < dz.size(); ++i)
        dz[i] = weights.mse * 2.0 * inv_n * (tr.embedding[i] - tra.embedding[i]);
      backprop_sample(pair.dynamic_branch, tr, dz, g.encoder);
      for (double& d : dz) d = -d;
      backprop_sample(pair.dynamic_branch, tra, dz, g.encoder);
    }
  }

  return g;
}

double OptState::lr() const {
  double l = base_lr;
  for (int e = decay_every; e <= epoch; e += decay_every) l *= decay_factor;
  return l;
}

OptState make_opt_state(const EncoderParams& encoder,
                        const ClusterHeadParams& head, double lr,
                        double momentum, double weight_decay, int decay_every,
                        double decay_factor) {
  OptState o;
  o.base_lr = lr;
  o.momentum = momentum;
  o.weight_decay = weight_decay;
  o.decay_every = decay_every;
  o.decay_factor = decay_factor;
  for (const Layer& l : encoder.layers) {
    Layer v;
    v.out = l.out;
    v.in = l.in;
    v.w.assign(l.w.size(), 0.0);
    v.b.assign(l.b.size(), 0.0);
    o.enc_velocity.push_back(std::move(v));
  }
  o.head_velocity.w.assign(head.w.size(), 0.0);
  o.head_velocity.b.assign(head.b.size(), 0.0);
  return o;
}

namespace {
void sgd_apply(std::vector<double>& param, std::vector<double>& velocity,
               const std::vector<double>& grad, double lr, double momentum,
               double wd) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + wd * param[i];
    param[i] -= lr * velocity[i];
  }
}
}  // namespace

void sgd_step(OptState& opt, EncoderParams& encoder, ClusterHeadParams& head,
              const ModelGrads& grads) {
  if (grads.encoder.layers.size() != encoder.layers.size())
    throw std::invalid_argument("sgd_step: gradient shape mismatch");
  const double lr = opt.lr();
  for (std::size_t l = 0; l < encoder.layers.size(); ++l) {
    sgd_apply(encoder.layers[l].w, opt.enc_velocity[l].w,
              grads.encoder.layers[l].w, lr, opt.momentum, opt.weight_decay);
    sgd_apply(encoder.layers[l].b, opt.enc_velocity[l].b,
              grads.encoder.layers[l].b, lr, opt.momentum, opt.weight_decay);
  }
  if (!head.w.empty() && !grads.head.w.empty()) {
    sgd_apply(head.w, opt.head_velocity.w, grads.head.w, lr, opt.momentum,
              opt.weight_decay);
    sgd_apply(head.b, opt.head_velocity.b, grads.head.b, lr, opt.momentum,
              opt.weight_decay);
  }
}

EncoderParams ema_merge(const EncoderParams& static_p,
                        const EncoderParams& dynamic_p, double alpha) {
  if (static_p.layers.size() != dynamic_p.layers.size())
    throw std::invalid_argument("ema_merge: shape mismatch");
  EncoderParams out = dynamic_p;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    const Layer& s = static_p.layers[l];
    Layer& d = out.layers[l];
    if (s.out != d.out || s.in != d.in)
      throw std::invalid_argument("ema_merge: shape mismatch");
    for (std::size_t i = 0; i < d.w.size(); ++i)
      d.w[i] = alpha * s.w[i] + (1.0 - alpha) * d.w[i];
    for (std::size_t i = 0; i < d.b.size(); ++i)
      d.b[i] = alpha * s.b[i] + (1.0 - alpha) * d.b[i];
  }
  return out;
}

double gradcheck_margin(const BranchPair& pair, const LossContext& ctx) {
  double margin = std::numeric_limits<double>::infinity();
  auto probe = [&](const Vec& x) {
    const Trace tr = encode_traced(pair.dynamic_branch, x);
    for (std::size_t l = 0; l + 1 < tr.preacts.size(); ++l)
      for (double a : tr.preacts[l]) margin = std::min(margin, std::abs(a));
    // the normalization stage is discontinuous at the degenerate floor and
    // violently curved near it
    margin = std::min(margin, tr.out_norm);
    return tr.embedding;
  };
  std::vector<Vec> bce_embeddings;
  for (const Vec& x : ctx.bce_samples) bce_embeddings.push_back(probe(x));
  for (const Vec& x : ctx.sd_samples) probe(x);
  for (const auto& [x, xa] : ctx.mse_pairs) {
    probe(x);
    probe(xa);
  }
  for (const auto& [cls, list] : ctx.pll_exemplars)
    for (const Vec& x : list) probe(x);

  if (pair.head.k > 0 && !bce_embeddings.empty()) {
    std::vector<Vec> c_list;
    for (const Vec& z : bce_embeddings)
      c_list.push_back(head_traced(pair.head, z).probs);
    for (std::size_t i = 0; i < c_list.size(); ++i)
      for (std::size_t j = 0; j < c_list.size(); ++j) {
        const double p = dot(c_list[i], c_list[j]);
        margin = std::min(margin, std::abs(p - kClampLo));
        margin = std::min(margin, std::abs(kClampHi - p));
      }
  }
  return margin;
}

double gradient_check(const BranchPair& pair, const LossContext& ctx,
                      const LossWeights& weights) {
  const std::size_t n_params =
      param_count(pair.dynamic_branch) + pair.head.w.size() + pair.head.b.size();
  if (n_params >= 10000)
    throw std::invalid_argument(
        "gradient_check: too many parameters for finite differences");

  const ModelGrads analytic = backward(pair, ctx, weights);
  BranchPair probe = pair;
  const double step = 1e-5;
  double worst = 0.0;

  auto check_one = [&](double* param, double analytic_grad) {
    const double saved = *param;
    *param = saved + step;
    const double up = total_loss(probe, ctx, weights).total;
    *param = saved - step;
    const double down = total_loss(probe, ctx, weights).total;
    *param = saved;
    const double fd = (up - down) / (2.0 * step);
    const double err = std::abs(analytic_grad - fd) /
                       std::max(1e-4, std::abs(analytic_grad) + std::abs(fd));
    worst = std::max(worst, err);
  };

  for (std::size_t l = 0; l < probe.dynamic_branch.layers.size(); ++l) {
    Layer& layer = probe.dynamic_branch.layers[l];
    for (std::size_t i = 0; i < layer.w.size(); ++i)
      check_one(&layer.w[i], analytic.encoder.layers[l].w[i]);
    for (std::size_t i = 0; i < layer.b.size(); ++i)
      check_one(&layer.b[i], analytic.encoder.layers[l].b[i]);
  }
  for (std::size_t i = 0; i < probe.head.w.size(); ++i)
    check_one(&probe.head.w[i], analytic.head.w[i]);
  for (std::size_t i = 0; i < probe.head.b.size(); ++i)
    check_one(&probe.head.b[i], analytic.head.b[i]);
  return worst;
}

}  // namespace gm
