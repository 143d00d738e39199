#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "sbnn/model.hpp"
#include "sbnn/ops.hpp"
#include "sbnn/rng.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

struct PredictiveSummary {
  Tensor probs;                    // (n, C), rows sum to 1
  std::vector<double> entropy;     // nats
  std::vector<double> max_prob;    // confidence of the argmax class
  std::vector<double> max_preact;  // max over classes of the mean pre-activation
  std::vector<int> prediction;
};

enum class PredictMode { full, median, lrt };

inline std::vector<double> entropy_nats(const Tensor& probs) {
  std::size_t n = probs.rows(), c = probs.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double p = probs.at(i, j);
      if (p < 0.0) throw NumericError("entropy: negative probability");
      if (p > 0.0) h -= p * std::log(p);
    }
    out[i] = h;
  }
  return out;
}

namespace detail {

// One stochastic pre-activation forward over the whole input block. Weights
// (and flow z's) are drawn once per call and shared by every row, so
// duplicated rows always produce identical outputs.
inline Tensor stochastic_preact(const Network& net, const Tensor& X, PredictMode mode,
                                RngStream& rng) {
  if (net.is_dropout()) {
    Tensor act = X;
    for (std::size_t l = 0; l < net.drop_layers.size(); ++l) {
      Tensor h = net.drop_layers[l].forward_tensor(act, rng, true);
      act = l + 1 < net.drop_layers.size() ? t_relu(h) : h;
    }
    return act;
  }
  if (mode == PredictMode::lrt) {
    // Draw the flow z's first (shared across rows), then sample activations
    // in row chunks to bound the scratch-graph footprint.
    std::vector<Tensor> zs(net.layers.size());
    if (net.has_flow())
      for (std::size_t l = 0; l < net.layers.size(); ++l)
        zs[l] = net.chains[l].sample_z_tensor(rng).first;
    std::size_t n = X.rows(), d = X.cols();
    const std::size_t chunk = 2048;
    Tensor out({n, net.n_out()});
    for (std::size_t start = 0; start < n; start += chunk) {
      std::size_t rows = std::min(chunk, n - start);
      Tensor block({rows, d});
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) block.at(r, c) = X.at(start + r, c);
      Tape scratch;
      Network::Mounted m = net.mount(scratch, false);
      Var act = scratch.constant(block);
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        Var z = net.has_flow() ? scratch.constant(zs[l]) : Var();
        Var h = net.layers[l].lrt_forward(scratch, m.layers[l], act, z, rng);
        act = l + 1 < net.layers.size() ? relu(h) : h;
      }
      Tensor hv = act.value();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < net.n_out(); ++c) out.at(start + r, c) = hv.at(r, c);
    }
    return out;
  }
  GammaMode gmode = mode == PredictMode::median ? GammaMode::median : GammaMode::full;
  Tensor act = X;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Tensor z;
    if (net.has_flow()) z = net.chains[l].sample_z_tensor(rng).first;
    SampledAffine ws = net.layers[l].sample_weights(z, gmode, rng);
    Tensor h = t_add(t_matmul(act, ws.W), ws.b);
    act = l + 1 < net.layers.size() ? t_relu(h) : h;
  }
  return act;
}

inline Tensor preact_to_probs(const Tensor& h, Likelihood kind) {
  if (kind == Likelihood::categorical) return t_softmax(h);
  Tensor p({h.rows(), 2});
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double q = stable_sigmoid(h.at(i, 0));
    p.at(i, 0) = 1.0 - q;
    p.at(i, 1) = q;
  }
  return p;
}

}  // namespace detail

// Posterior-predictive summary from S stochastic forward passes.
inline PredictiveSummary predict_avg(const Network& net, const Tensor& X, std::size_t S,
                                     PredictMode mode, RngStream& rng) {
  if (S < 1) throw ShapeError("predict_avg: sample count must be >= 1");
  std::size_t n = X.rows();
  std::size_t C = net.cfg.likelihood == Likelihood::categorical ? net.n_out() : 2;

  Tensor probs_sum({n, C}, 0.0);
  Tensor preact_sum({n, net.n_out()}, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    Tensor h = detail::stochastic_preact(net, X, mode, rng);
    Tensor p = detail::preact_to_probs(h, net.cfg.likelihood);
    for (std::size_t i = 0; i < probs_sum.size(); ++i) probs_sum[i] += p[i];
    for (std::size_t i = 0; i < preact_sum.size(); ++i) preact_sum[i] += h[i];
  }
  double inv = 1.0 / static_cast<double>(S);
  PredictiveSummary out;
  out.probs = t_affine(probs_sum, inv, 0.0);
  Tensor preact_mean = t_affine(preact_sum, inv, 0.0);

  out.entropy = entropy_nats(out.probs);
  out.max_prob.resize(n);
  out.max_preact.resize(n);
  out.prediction.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < C; ++j)
      if (out.probs.at(i, j) > out.probs.at(i, arg)) arg = j;
    out.prediction[i] = static_cast<int>(arg);
    out.max_prob[i] = out.probs.at(i, arg);
    double mp = preact_mean.at(i, 0);
    for (std::size_t j = 1; j < net.n_out(); ++j) mp = std::max(mp, preact_mean.at(i, j));
    out.max_preact[i] = mp;
  }
  return out;
}

inline double accuracy(const PredictiveSummary& summary, const std::vector<int>& labels) {
  if (summary.prediction.size() != labels.size())
    throw ShapeError("accuracy: prediction/label length mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (summary.prediction[i] == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

inline double density_report(const Network& net, double threshold = 0.5) {
  return net.density(threshold);
}

// ---------------------------------------------------------------------------
// Variable selection scoring.
// ---------------------------------------------------------------------------

struct SelectionScore {
  double tpr = 0.0;
  double fpr = 0.0;
  std::vector<bool> included;
};

// Coefficients within zero_tol of zero count as true zeros, so negligible
// entries in the generating vector do not poison the positive set.
inline SelectionScore tpr_fpr(const std::vector<double>& alpha_hat,
                              const std::vector<double>& beta_true, double threshold = 0.5,
                              double zero_tol = 0.01) {
  if (alpha_hat.size() != beta_true.size()) throw ShapeError("tpr_fpr: length mismatch");
  SelectionScore out;
  out.included.resize(alpha_hat.size());
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t j = 0; j < alpha_hat.size(); ++j) {
    bool inc = alpha_hat[j] > threshold;
    bool truth = std::fabs(beta_true[j]) > zero_tol;
    out.included[j] = inc;
    if (truth && inc) ++tp;
    if (truth && !inc) ++fn;
    if (!truth && inc) ++fp;
    if (!truth && !inc) ++tn;
  }
  out.tpr = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  out.fpr = fp + tn > 0 ? static_cast<double>(fp) / static_cast<double>(fp + tn) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Confidence-ordered accuracy curve.
// ---------------------------------------------------------------------------

inline std::vector<double> cumulative_accuracy(const PredictiveSummary& summary,
                                               const std::vector<int>& labels,
                                               std::size_t window = 100) {
  if (summary.prediction.size() != labels.size())
    throw ShapeError("cumulative_accuracy: prediction/label length mismatch");
  std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return summary.max_prob[a] > summary.max_prob[b];
  });
  std::vector<double> curve;
  for (std::size_t start = 0; start + window <= n; start += window) {
    std::size_t hits = 0;
    for (std::size_t k = 0; k < window; ++k) {
      std::size_t i = order[start + k];
      if (summary.prediction[i] == labels[i]) ++hits;
    }
    curve.push_back(static_cast<double>(hits) / static_cast<double>(window));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// Pre-activation out-of-distribution flagging.
// ---------------------------------------------------------------------------

// Nearest-rank percentile: the ceil(level*n)-th smallest value.
inline double nearest_rank(std::vector<double> values, double level) {
  if (values.empty()) throw ShapeError("nearest_rank: empty sample");
  std::sort(values.begin(), values.end());
  std::size_t k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(values.size())));
  if (k < 1) k = 1;
  if (k > values.size()) k = values.size();
  return values[k - 1];
}

// A query is flagged when its model-averaged max pre-activation exceeds the
// empirical `level` percentile of the training inputs.
inline std::vector<bool> ood_detect(const Network& net, const Tensor& train_X,
                                    const Tensor& query_X, double level, std::size_t S,
                                    RngStream& rng, PredictMode mode = PredictMode::full) {
  PredictiveSummary train = predict_avg(net, train_X, S, mode, rng);
  double thr = nearest_rank(train.max_preact, level);
  PredictiveSummary query = predict_avg(net, query_X, S, mode, rng);
  std::vector<bool> flags(query.max_preact.size());
  for (std::size_t i = 0; i < flags.size(); ++i) flags[i] = query.max_preact[i] > thr;
  return flags;
}

}  // namespace sbnn
