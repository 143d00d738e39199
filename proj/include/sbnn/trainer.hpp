#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sbnn/model.hpp"
#include "sbnn/ops.hpp"
#include "sbnn/rng.hpp"
#include "sbnn/tape.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

// Mean negative log-likelihood over the batch. Categorical targets are class
// indices against pre-softmax scores; Bernoulli targets are {0,1} against a
// single pre-sigmoid score column.
inline Var nll_graph(Tape& tape, const Var& scores, const std::vector<int>& targets,
                     Likelihood kind) {
  if (scores.shape()[0] != targets.size())
    throw ShapeError("nll: batch size mismatch between scores and targets");
  if (kind == Likelihood::categorical) {
    Var lse = logsumexp(scores);
    Var picked = pick(scores, targets);
    return mean(lse - picked);
  }
  if (scores.shape().size() != 2 || scores.shape()[1] != 1)
    throw ShapeError("nll: Bernoulli scores must be a single column");
  Tensor y({targets.size(), 1});
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != 0 && targets[i] != 1)
      throw ShapeError("nll: Bernoulli target out of range");
    y[i] = static_cast<double>(targets[i]);
  }
  return mean(softplus(scores) - mul(tape.constant(y), scores));
}

struct ElboReport {
  double nll = 0.0;  // summed over the batch
  double kl_weights = 0.0;
  double kl_bias = 0.0;
  double log_q_z = 0.0;
  double log_r_z = 0.0;
  double total = 0.0;  // nll + kl_scale * (kl_weights + kl_bias + log_q_z - log_r_z)
};

struct StepResult {
  ElboReport report;
  std::vector<Tensor> grads;  // aligned with Network::params()
};

namespace detail {
inline void check_component(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericError(std::string("elbo_step: ") + name + " is non-finite");
}
}  // namespace detail

// One stochastic estimate of the negative ELBO on a mini-batch, with
// gradients. Draw order per layer: flow z first (when present), then the LRT
// activation noise; this fixes the RNG stream layout for reproducibility.
inline StepResult elbo_step(Network& net, const Tensor& bx, const std::vector<int>& by,
                            double kl_scale, RngStream& rng, bool want_grads = true) {
  Tape tape;
  Network::Mounted m = net.mount(tape);
  std::size_t B = bx.shape()[0];

  Var nll_mean, kl_w, kl_b, log_q, log_r;

  if (net.is_dropout()) {
    Var act = tape.constant(bx);
    for (std::size_t l = 0; l < net.drop_layers.size(); ++l) {
      Var h = net.drop_layers[l].dropout_forward(tape, m.drop_layers[l], act, rng, true);
      act = l + 1 < net.drop_layers.size() ? relu(h) : h;
    }
    nll_mean = nll_graph(tape, act, by, net.cfg.likelihood);
  } else {
    std::vector<Var> zs(net.layers.size());
    Var act = tape.constant(bx);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      if (net.has_flow()) {
        auto zres = net.chains[l].sample_z(tape, m.chains[l], rng);
        zs[l] = zres.z;
        log_q = log_q.valid() ? log_q + zres.log_q : zres.log_q;
        Var lr = net.heads[l].log_r(tape, m.heads[l], zres.z,
                                    net.layers[l].eff_weight_mean(m.layers[l]));
        log_r = log_r.valid() ? log_r + lr : lr;
      }
      Var h = net.layers[l].lrt_forward(tape, m.layers[l], act, zs[l], rng);
      act = l + 1 < net.layers.size() ? relu(h) : h;
    }
    nll_mean = nll_graph(tape, act, by, net.cfg.likelihood);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      Var kw = net.layers[l].kl_weights(tape, m.layers[l], zs[l]);
      Var kb = net.layers[l].kl_bias(tape, m.layers[l]);
      kl_w = kl_w.valid() ? kl_w + kw : kw;
      kl_b = kl_b.valid() ? kl_b + kb : kb;
    }
  }

  Var nll_sum = nll_mean * static_cast<double>(B);
  Var penalty;
  if (kl_w.valid()) penalty = kl_w + kl_b;
  if (log_q.valid()) penalty = penalty + (log_q - log_r);
  Var total = penalty.valid() ? nll_sum + penalty * kl_scale : nll_sum;

  StepResult out;
  out.report.nll = nll_sum.value().value();
  out.report.kl_weights = kl_w.valid() ? kl_w.value().value() : 0.0;
  out.report.kl_bias = kl_b.valid() ? kl_b.value().value() : 0.0;
  out.report.log_q_z = log_q.valid() ? log_q.value().value() : 0.0;
  out.report.log_r_z = log_r.valid() ? log_r.value().value() : 0.0;
  out.report.total = total.value().value();
  detail::check_component(out.report.nll, "nll");
  detail::check_component(out.report.kl_weights, "kl_weights");
  detail::check_component(out.report.kl_bias, "kl_bias");
  detail::check_component(out.report.log_q_z, "log_q_z");
  detail::check_component(out.report.log_r_z, "log_r_z");
  detail::check_component(out.report.total, "total");

  if (want_grads) out.grads = tape.gradient(total, net.leaves(m));
  return out;
}

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t t = 0;

  AdamState() = default;
  explicit AdamState(const std::vector<Tensor*>& params) {
    for (const Tensor* p : params) {
      m.push_back(Tensor::zeros_like(*p));
      v.push_back(Tensor::zeros_like(*p));
    }
  }
};

inline void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeError("adam_step: parameter/gradient/state count mismatch");
  state.t += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p];
    const Tensor& g = grads[p];
    if (g.shape() != w.shape()) throw ShapeError("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      state.m[p][i] = beta1 * state.m[p][i] + (1.0 - beta1) * g[i];
      state.v[p][i] = beta2 * state.v[p][i] + (1.0 - beta2) * g[i] * g[i];
      double mhat = state.m[p][i] / bc1;
      double vhat = state.v[p][i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop.
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;       // empty disables all checkpoints
};

// Epoch-shuffled mini-batch training; only complete batches are consumed, and
// the shuffle redraws membership every epoch. Returns per-epoch means of the
// step reports.
inline std::vector<ElboReport> train(Network& net, const Tensor& X, const std::vector<int>& y,
                                     const TrainConfig& tc) {
  std::size_t N = X.shape()[0];
  if (N == 0 || y.size() != N) throw ShapeError("train: dataset size mismatch");
  std::size_t B = tc.batch_size > N ? N : tc.batch_size;
  if (B == 0) throw ShapeError("train: batch size must be positive");
  double kl_scale = static_cast<double>(B) / static_cast<double>(N);
  std::size_t d = X.shape()[1];
  std::size_t steps = N / B;

  RngStream rng(tc.seed);
  std::vector<Tensor*> params = net.params();
  AdamState state(params);
  std::vector<std::size_t> perm(N);
  for (std::size_t i = 0; i < N; ++i) perm[i] = i;

  std::vector<ElboReport> history;
  history.reserve(tc.epochs);
  Tensor bx({B, d});
  std::vector<int> by(B);

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    for (std::size_t i = N - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(rng.uniform() * (i + 1));
      std::swap(perm[i], perm[j]);
    }
    ElboReport acc;
    for (std::size_t s = 0; s < steps; ++s) {
      for (std::size_t r = 0; r < B; ++r) {
        std::size_t src = perm[s * B + r];
        for (std::size_t c = 0; c < d; ++c) bx.at(r, c) = X.at(src, c);
        by[r] = y[src];
      }
      StepResult res = elbo_step(net, bx, by, kl_scale, rng);
      adam_step(params, res.grads, state, tc.learning_rate);
      acc.nll += res.report.nll;
      acc.kl_weights += res.report.kl_weights;
      acc.kl_bias += res.report.kl_bias;
      acc.log_q_z += res.report.log_q_z;
      acc.log_r_z += res.report.log_r_z;
      acc.total += res.report.total;
    }
    double inv = steps > 0 ? 1.0 / static_cast<double>(steps) : 0.0;
    acc.nll *= inv;
    acc.kl_weights *= inv;
    acc.kl_bias *= inv;
    acc.log_q_z *= inv;
    acc.log_r_z *= inv;
    acc.total *= inv;
    history.push_back(acc);
    if (!tc.checkpoint_path.empty() && tc.checkpoint_every > 0 &&
        (epoch + 1) % tc.checkpoint_every == 0)
      net.save(tc.checkpoint_path);
  }
  if (!tc.checkpoint_path.empty()) net.save(tc.checkpoint_path);
  return history;
}

}  // namespace sbnn
