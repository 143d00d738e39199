#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sbnn/ops.hpp"
#include "sbnn/rng.hpp"
#include "sbnn/tape.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

// Inclusion probabilities are kept away from {0,1} inside KL terms.
constexpr double kAlphaFloor = 1e-7;

inline double inv_softplus(double y) { return std::log(std::expm1(y)); }

struct LayerPrior {
  double sigma = 1.0;  // slab standard deviation
  double alpha = 0.5;  // prior inclusion probability
};

enum class GammaMode { full, median };

struct SampledAffine {
  Tensor W;  // (n_in, n_out), zeros where excluded
  Tensor b;  // (n_out)
};

// Linear layer with factorized spike-and-slab posterior over weights and a
// Gaussian posterior over biases. With `dense` set, inclusion is pinned to 1
// and the Bernoulli part of the KL disappears; that doubling is the dense-BNN
// comparator, which shares every other code path.
struct SpikeSlabLinear {
  std::size_t n_in = 0, n_out = 0;
  bool dense = false;
  Tensor weight_mean, weight_rho, inclusion_logit;  // (n_in, n_out)
  Tensor bias_mean, bias_rho;                       // (n_out)
  LayerPrior prior;

  SpikeSlabLinear() = default;

  SpikeSlabLinear(std::size_t in, std::size_t out, LayerPrior pr, RngStream& rng,
                  bool dense_mode = false)
      : n_in(in),
        n_out(out),
        dense(dense_mode),
        weight_mean({in, out}),
        weight_rho({in, out}, inv_softplus(0.05)),
        inclusion_logit({in, out}),
        bias_mean({out}, 0.0),
        bias_rho({out}, inv_softplus(0.05)),
        prior(pr) {
    double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < weight_mean.size(); ++i) weight_mean[i] = sd * rng.normal();
    for (std::size_t i = 0; i < inclusion_logit.size(); ++i)
      inclusion_logit[i] = rng.uniform() - 0.5;
  }

  std::vector<Tensor*> params() {
    if (dense) return {&weight_mean, &weight_rho, &bias_mean, &bias_rho};
    return {&weight_mean, &weight_rho, &inclusion_logit, &bias_mean, &bias_rho};
  }

  struct Mounted {
    Var weight_mean, weight_rho, inclusion_logit, bias_mean, bias_rho;
    Var alpha;    // clamped sigmoid of the logits; invalid in dense mode
    Var sigma;    // softplus(weight_rho)
    Var sigma_b;  // softplus(bias_rho)
  };

  // Builds the derived quantities from leaves supplied in params() order; lets
  // gradient checks drive the same graph from externally-owned leaves.
  Mounted mount_from(const std::vector<Var>& vs) const {
    Mounted m;
    m.weight_mean = vs[0];
    m.weight_rho = vs[1];
    if (!dense) {
      m.inclusion_logit = vs[2];
      m.alpha = clamp(sigmoid(m.inclusion_logit), kAlphaFloor, 1.0 - kAlphaFloor);
    }
    m.bias_mean = vs[dense ? 2 : 3];
    m.bias_rho = vs[dense ? 3 : 4];
    m.sigma = softplus(m.weight_rho);
    m.sigma_b = softplus(m.bias_rho);
    return m;
  }

  Mounted mount(Tape& tape, bool trainable = true) const {
    std::vector<Var> vs = {tape.leaf(weight_mean, trainable), tape.leaf(weight_rho, trainable)};
    if (!dense) vs.push_back(tape.leaf(inclusion_logit, trainable));
    vs.push_back(tape.leaf(bias_mean, trainable));
    vs.push_back(tape.leaf(bias_rho, trainable));
    return mount_from(vs);
  }

  std::vector<Var> leaves(const Mounted& m) const {
    if (dense) return {m.weight_mean, m.weight_rho, m.bias_mean, m.bias_rho};
    return {m.weight_mean, m.weight_rho, m.inclusion_logit, m.bias_mean, m.bias_rho};
  }

  // Mean of the effective weight matrix under the posterior at z=1; feeds the
  // auxiliary density over z during training, when no explicit weight sample
  // exists.
  Var eff_weight_mean(const Mounted& m) const {
    return dense ? m.weight_mean : mul(m.alpha, m.weight_mean);
  }

  // Analytic pre-activation moments of the mixture posterior. `z` is a
  // length-n_in multiplier shared by the whole batch; pass an invalid Var for
  // z = 1. Returns (mean, variance), each (batch, n_out).
  std::pair<Var, Var> lrt_moments(const Mounted& m, const Var& o, const Var& z) const {
    Var mu_z = z.valid() ? scale_rows(m.weight_mean, z) : m.weight_mean;
    Var sig2 = square(m.sigma);
    Var mean_w = dense ? mu_z : mul(m.alpha, mu_z);
    Var var_w = dense ? sig2 : mul(m.alpha, sig2) + mul(mul(m.alpha, 1.0 - m.alpha), square(mu_z));
    Var eh = matmul(o, mean_w) + m.bias_mean;
    Var vh = matmul(square(o), var_w) + square(m.sigma_b);
    return {eh, vh};
  }

  Var lrt_forward(Tape& tape, const Mounted& m, const Var& o, const Var& z,
                  RngStream& rng) const {
    auto [eh, vh] = lrt_moments(m, o, z);
    Tensor eps = sample_gaussian({o.shape()[0], n_out}, rng);
    return eh + sqrt(vh) * tape.constant(eps);
  }

  // KL(q(W,Gamma|z) || p(W,Gamma)), summed over weights. Written so that a
  // posterior configured exactly at the prior yields exactly zero.
  Var kl_weights(Tape& tape, const Mounted& m, const Var& z) const {
    Var mu_z = z.valid() ? scale_rows(m.weight_mean, z) : m.weight_mean;
    double s2 = prior.sigma * prior.sigma;
    Var quad = div(square(m.sigma) + square(mu_z), tape.constant(2.0 * s2));
    Var gauss = (affine(log(m.sigma), -1.0, std::log(prior.sigma)) - 0.5) + quad;
    if (dense) return sum(gauss);
    Var a = m.alpha;
    Var slab = gauss + affine(log(a), 1.0, -std::log(prior.alpha));
    Var one_m_a = 1.0 - a;
    Var spike = mul(one_m_a, affine(log(one_m_a), 1.0, -std::log(1.0 - prior.alpha)));
    return sum(mul(a, slab) + spike);
  }

  // KL of the Gaussian bias posterior against N(0,1).
  Var kl_bias(Tape& tape, const Mounted& m) const {
    Var quad = div(square(m.sigma_b) + square(m.bias_mean), tape.constant(2.0));
    return sum(affine(log(m.sigma_b), -1.0, -0.5) + quad);
  }

  // -------------------------------------------------------------------------
  // Plain-tensor evaluation path (explicit weight sampling).
  // -------------------------------------------------------------------------

  Tensor alpha_values() const {
    Tensor a = t_sigmoid(inclusion_logit);
    return t_clamp(a, kAlphaFloor, 1.0 - kAlphaFloor);
  }

  // Median probability model: keep weight (i,j) iff its inclusion logit is
  // positive, the exact logit-space form of alpha > 1/2.
  Tensor median_gamma() const {
    Tensor g({n_in, n_out});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = inclusion_logit[i] > 0.0 ? 1.0 : 0.0;
    return g;
  }

  std::size_t included_count() const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < inclusion_logit.size(); ++i)
      if (inclusion_logit[i] > 0.0) ++c;
    return c;
  }

  // Draws one explicit (W, b) realization. Noise for every weight is always
  // consumed, so the draw is bit-invariant to parameters of excluded weights
  // and the RNG stream stays aligned across structures.
  SampledAffine sample_weights(const Tensor& z, GammaMode mode, RngStream& rng) const {
    Tensor eps = sample_gaussian({n_in, n_out}, rng);
    Tensor gamma = dense ? Tensor({n_in, n_out}, 1.0)
                         : (mode == GammaMode::full ? sample_bernoulli(alpha_values(), rng)
                                                    : median_gamma());
    Tensor eps_b = sample_gaussian({n_out}, rng);

    SampledAffine out{Tensor({n_in, n_out}), Tensor({n_out})};
    bool has_z = z.size() > 0;
    for (std::size_t i = 0; i < n_in; ++i) {
      double zi = has_z ? z[i] : 1.0;
      for (std::size_t j = 0; j < n_out; ++j) {
        std::size_t k = i * n_out + j;
        if (gamma[k] > 0.5) {
          double sd = stable_softplus(weight_rho[k]);
          out.W[k] = zi * weight_mean[k] + sd * eps[k];
        }
      }
    }
    for (std::size_t j = 0; j < n_out; ++j)
      out.b[j] = bias_mean[j] + stable_softplus(bias_rho[j]) * eps_b[j];
    return out;
  }
};

// Deterministic-weight layer for the Monte Carlo dropout comparator. Dropout
// masks the layer input (inverted scaling) whenever `stochastic` is set.
struct DropoutLinear {
  std::size_t n_in = 0, n_out = 0;
  double p_drop = 0.5;
  Tensor weights, biases;

  DropoutLinear() = default;

  DropoutLinear(std::size_t in, std::size_t out, double p, RngStream& rng)
      : n_in(in), n_out(out), p_drop(p), weights({in, out}), biases({out}, 0.0) {
    double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (std::size_t i = 0; i < weights.size(); ++i) weights[i] = sd * rng.normal();
  }

  std::vector<Tensor*> params() { return {&weights, &biases}; }

  struct Mounted {
    Var weights, biases;
  };

  Mounted mount(Tape& tape, bool trainable = true) const {
    return {tape.leaf(weights, trainable), tape.leaf(biases, trainable)};
  }

  std::vector<Var> leaves(const Mounted& m) const { return {m.weights, m.biases}; }

  Var dropout_forward(Tape& tape, const Mounted& m, const Var& o, RngStream& rng,
                      bool stochastic) const {
    Var inp = o;
    if (stochastic && p_drop > 0.0) {
      Tensor keep(o.shape(), 1.0 - p_drop);
      Tensor mask = sample_bernoulli(keep, rng);
      inp = mul(o, tape.constant(mask)) * (1.0 / (1.0 - p_drop));
    }
    return matmul(inp, m.weights) + m.biases;
  }

  Tensor forward_tensor(const Tensor& o, RngStream& rng, bool stochastic) const {
    Tensor inp = o;
    if (stochastic && p_drop > 0.0) {
      Tensor keep(o.shape(), 1.0 - p_drop);
      Tensor mask = sample_bernoulli(keep, rng);
      inp = t_affine(t_mul(o, mask), 1.0 / (1.0 - p_drop), 0.0);
    }
    return t_add(t_matmul(inp, weights), biases);
  }
};

}  // namespace sbnn
