#pragma once

#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "gm/numeric.hpp"
#include "gm/rng.hpp"

namespace gm {

// One fully connected layer, row-major weight (out x in).
struct Layer {
  std::size_t out = 0;
  std::size_t in = 0;
  std::vector<double> w;  // out * in
  std::vector<double> b;  // out
};

// A small MLP: rectifier on hidden layers, linear output followed by
// l2_normalize. Shapes chain layer to layer.
struct EncoderParams {
  std::vector<Layer> layers;

  std::size_t input_dim() const { return layers.front().in; }
  std::size_t output_dim() const { return layers.back().out; }
};

struct ClusterHeadParams {
  std::size_t k = 0;    // number of novel clusters
  std::size_t dim = 0;  // embedding dimension
  std::vector<double> w;  // k * dim
  std::vector<double> b;  // k
};

// Frozen static branch plus trainable dynamic branch and cluster head.
// The static branch never changes after pretraining.
struct BranchPair {
  EncoderParams static_branch;
  EncoderParams dynamic_branch;
  ClusterHeadParams head;
};

struct LossWeights {
  double bce = 1.0;
  double sd = 1.0;
  double pll = 1.0;
  double mse = 1.0;
};

// Gradient buffers mirroring the trainable parameters.
struct EncoderGrads {
  std::vector<Layer> layers;  // same shapes, values are d(loss)/d(param)
};

struct HeadGrads {
  std::vector<double> w;
  std::vector<double> b;
};

struct ModelGrads {
  EncoderGrads encoder;
  HeadGrads head;
};

// Everything one backward pass needs. Each loss term is active when its
// weight is positive and its inputs are nonempty.
struct LossContext {
  // Pairwise clustering loss over novel samples.
  std::vector<Vec> bce_samples;
  std::vector<std::vector<double>> similarity;  // N x N, entries 0/1

  // Static-dynamic distillation.
  std::vector<Vec> sd_samples;

  // Pseudo-label learning: raw exemplars per class and fixed prototypes.
  std::map<int, std::vector<Vec>> pll_exemplars;
  std::map<int, Vec> pll_prototypes;
  double tau = 0.1;

  // Consistency pairs (x, x_augmented).
  std::vector<std::pair<Vec, Vec>> mse_pairs;
};

struct LossValue {
  double bce = 0.0;
  double sd = 0.0;
  double pll = 0.0;
  double mse = 0.0;
  double total = 0.0;
};

EncoderParams make_encoder(std::size_t input_dim,
                           const std::vector<std::size_t>& hidden_dims,
                           std::size_t output_dim, Rng& rng);
ClusterHeadParams make_head(std::size_t k, std::size_t dim, Rng& rng);

// Forward pass; returns the l2-normalized embedding.
Vec encode(const EncoderParams& params, const Vec& x);

// softmax(W z + b); entries sum to 1.
Vec head_forward(const ClusterHeadParams& head, const Vec& z);

// L_BCE over cluster-head outputs with a binary pairwise target matrix.
// Self-pairs are included and the sum is normalized by 1/N. Probabilities
// are clamped to [1e-7, 1 - 1e-7] before the log.
double loss_bce(const std::vector<Vec>& c_list,
                const std::vector<std::vector<double>>& similarity);

// Mean squared euclidean distance between static and dynamic embeddings.
double loss_sd(const BranchPair& pair, const std::vector<Vec>& batch);

// Temperature-scaled cross entropy pulling each exemplar's embedding to its
// own prototype and away from the others.
double loss_pll(const EncoderParams& dynamic,
                const std::map<int, std::vector<Vec>>& exemplars,
                const std::map<int, Vec>& prototypes, double tau);

// Mean ||phi(x) - phi(x')||^2 over augmentation pairs.
double loss_mse_consistency(const EncoderParams& dynamic,
                            const std::vector<std::pair<Vec, Vec>>& pairs);

LossValue total_loss(const BranchPair& pair, const LossContext& ctx,
                     const LossWeights& weights);

// Analytic gradients of the weighted total loss with respect to the dynamic
// branch and the cluster head. The static branch receives no gradient; the
// output normalization Jacobian is handled exactly.
ModelGrads backward(const BranchPair& pair, const LossContext& ctx,
                    const LossWeights& weights);

// SGD with momentum, weight decay and step-decay learning rate.
struct OptState {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int decay_every = 60;     // epochs between lr drops
  double decay_factor = 0.1;
  int epoch = 0;

  std::vector<Layer> enc_velocity;  // mirrors dynamic branch
  HeadGrads head_velocity;          // mirrors head

  double lr() const;
};

OptState make_opt_state(const EncoderParams& encoder,
                        const ClusterHeadParams& head, double lr,
                        double momentum, double weight_decay,
                        int decay_every = 60, double decay_factor = 0.1);

// velocity <- momentum * velocity + grad + wd * param;
// param <- param - lr * velocity.
void sgd_step(OptState& opt, EncoderParams& encoder, ClusterHeadParams& head,
              const ModelGrads& grads);

// theta <- alpha * theta_static + (1 - alpha) * theta_dynamic, elementwise.
EncoderParams ema_merge(const EncoderParams& static_p,
                        const EncoderParams& dynamic_p, double alpha);

// Compares backward() against central finite differences (step 1e-5) over
// every trainable parameter; returns the worst relative error. Throws when
// the parameter count exceeds 10^4.
double gradient_check(const BranchPair& pair, const LossContext& ctx,
                      const LossWeights& weights);

// Smallest margin between this configuration and a non-differentiable point:
// the min |pre-activation| over the dynamic branch's hidden units and the
// distance of every pairwise probability from its clamp bounds. Finite
// differences are only trustworthy when this comfortably exceeds the step.
double gradcheck_margin(const BranchPair& pair, const LossContext& ctx);

std::size_t param_count(const EncoderParams& e);

}  // namespace gm
