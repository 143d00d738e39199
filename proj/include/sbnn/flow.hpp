#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sbnn/layers.hpp"
#include "sbnn/ops.hpp"
#include "sbnn/rng.hpp"
#include "sbnn/tape.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

constexpr double kLog2Pi = 1.8378770664093454836;

// Two-hidden-layer network whose masks force output slot i (both the m and s
// heads) to depend only on inputs with index strictly below i. Degrees follow
// the usual MADE assignment; hidden activation is tanh. For d = 1 the output
// masks are all zero and the heads are pure biases.
struct MaskedAutoregressiveNet {
  std::size_t d = 0, width = 0;
  Tensor w1, b1, w2, b2, wm, bm, ws, bs;
  Tensor mask1, mask2, mask_out;  // fixed at construction

  MaskedAutoregressiveNet() = default;

  MaskedAutoregressiveNet(std::size_t dim, std::size_t w, RngStream& rng)
      : d(dim),
        width(w),
        w1({dim, w}),
        b1({w}, 0.0),
        w2({w, w}),
        b2({w}, 0.0),
        wm({w, dim}),
        bm({dim}, 0.0),
        ws({w, dim}),
        bs({dim}, 1.0),  // gates start near sigmoid(1): stable, close to identity
        mask1({dim, w}),
        mask2({w, w}),
        mask_out({w, dim}) {
    std::size_t max_deg = dim > 1 ? dim - 1 : 1;
    std::vector<std::size_t> hidden_deg(w);
    for (std::size_t k = 0; k < w; ++k) hidden_deg[k] = (k % max_deg) + 1;
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t k = 0; k < w; ++k) mask1.at(i, k) = hidden_deg[k] >= i + 1 ? 1.0 : 0.0;
    for (std::size_t k = 0; k < w; ++k)
      for (std::size_t l = 0; l < w; ++l) mask2.at(k, l) = hidden_deg[l] >= hidden_deg[k] ? 1.0 : 0.0;
    for (std::size_t k = 0; k < w; ++k)
      for (std::size_t i = 0; i < dim; ++i) mask_out.at(k, i) = i + 1 > hidden_deg[k] ? 1.0 : 0.0;

    auto fill = [&rng](Tensor& t, std::size_t fan_in) {
      double sd = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = sd * rng.normal();
    };
    fill(w1, dim);
    fill(w2, w);
    fill(wm, w);
    fill(ws, w);
  }

  std::vector<Tensor*> params() { return {&w1, &b1, &w2, &b2, &wm, &bm, &ws, &bs}; }

  struct Mounted {
    Var w1, b1, w2, b2, wm, bm, ws, bs;
  };

  Mounted mount(Tape& tape, bool trainable = true) const {
    return {tape.leaf(w1, trainable), tape.leaf(b1, trainable), tape.leaf(w2, trainable),
            tape.leaf(b2, trainable), tape.leaf(wm, trainable), tape.leaf(bm, trainable),
            tape.leaf(ws, trainable), tape.leaf(bs, trainable)};
  }

  std::vector<Var> leaves(const Mounted& m) const {
    return {m.w1, m.b1, m.w2, m.b2, m.wm, m.bm, m.ws, m.bs};
  }

  // z: (1, d) -> heads (m, s), each (1, d).
  std::pair<Var, Var> heads(Tape& tape, const Mounted& mt, const Var& z) const {
    Var h1 = tanh(matmul(z, mul(mt.w1, tape.constant(mask1))) + mt.b1);
    Var h2 = tanh(matmul(h1, mul(mt.w2, tape.constant(mask2))) + mt.b2);
    Var mo = tape.constant(mask_out);
    Var m = matmul(h2, mul(mt.wm, mo)) + mt.bm;
    Var s = matmul(h2, mul(mt.ws, mo)) + mt.bs;
    return {m, s};
  }

  // Evaluation-side heads on plain tensors (scratch tape, no gradients).
  std::pair<Tensor, Tensor> heads_tensor(const Tensor& z) const {
    Tape scratch;
    Mounted mt = mount(scratch, false);
    auto [m, s] = heads(scratch, mt, scratch.constant(z));
    return {m.value(), s.value()};
  }
};

// One gated autoregressive update. Because m and s are strictly lower
// triangular in z, the Jacobian is triangular with diagonal kappa, so
// log|det| = sum log kappa, accumulated here in softplus form for stability.
inline std::pair<Var, Var> iaf_step(Tape& tape, const MaskedAutoregressiveNet& net,
                                    const MaskedAutoregressiveNet::Mounted& mt, const Var& z) {
  auto [m, s] = net.heads(tape, mt, z);
  Var kappa = sigmoid(s);
  Var z_next = kappa * z + (1.0 - kappa) * m;
  Var logdet = -sum(softplus(-s));
  return {z_next, logdet};
}

// Learnable base Gaussian followed by K gated autoregressive steps; models the
// variational density over the multiplicative latent z of one layer.
struct IafChain {
  std::size_t d = 0;
  Tensor base_mean, base_rho;  // (1, d)
  std::vector<MaskedAutoregressiveNet> steps;

  IafChain() = default;

  IafChain(std::size_t dim, std::size_t K, std::size_t width, RngStream& rng)
      : d(dim), base_mean({1, dim}, 0.0), base_rho({1, dim}, inv_softplus(1.0)) {
    if (K < 1) throw ShapeError("IafChain: chain length must be >= 1");
    steps.reserve(K);
    for (std::size_t k = 0; k < K; ++k) steps.emplace_back(dim, width, rng);
  }

  std::vector<Tensor*> params() {
    std::vector<Tensor*> out = {&base_mean, &base_rho};
    for (auto& s : steps)
      for (Tensor* p : s.params()) out.push_back(p);
    return out;
  }

  struct Mounted {
    Var base_mean, base_rho;
    std::vector<MaskedAutoregressiveNet::Mounted> steps;
  };

  Mounted mount(Tape& tape, bool trainable = true) const {
    Mounted mt{tape.leaf(base_mean, trainable), tape.leaf(base_rho, trainable), {}};
    mt.steps.reserve(steps.size());
    for (const auto& s : steps) mt.steps.push_back(s.mount(tape, trainable));
    return mt;
  }

  std::vector<Var> leaves(const Mounted& mt) const {
    std::vector<Var> out = {mt.base_mean, mt.base_rho};
    for (std::size_t k = 0; k < steps.size(); ++k)
      for (const Var& v : steps[k].leaves(mt.steps[k])) out.push_back(v);
    return out;
  }

  struct ZSample {
    Var z;      // (1, d)
    Var log_q;  // scalar: log q_K(z)
  };

  ZSample sample_z(Tape& tape, const Mounted& mt, RngStream& rng) const {
    Tensor eps = sample_gaussian({1, d}, rng);
    Var sz = softplus(mt.base_rho);
    Var z0 = mt.base_mean + sz * tape.constant(eps);
    Var quad = sum(square(div(z0 - mt.base_mean, sz)));
    Var log_q = (affine(sum(log(sz)), -1.0, -0.5 * static_cast<double>(d) * kLog2Pi) -
                 affine(quad, 0.5, 0.0));
    Var z = z0;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      auto [zn, ld] = iaf_step(tape, steps[k], mt.steps[k], z);
      z = zn;
      log_q = log_q - ld;
    }
    return {z, log_q};
  }

  // Draws (z, log_q) without building a gradient graph.
  std::pair<Tensor, double> sample_z_tensor(RngStream& rng) const {
    Tape scratch;
    Mounted mt = mount(scratch, false);
    ZSample s = sample_z(scratch, mt, rng);
    return {s.z.value(), s.log_q.value().value()};
  }

  // Pushes a given z0 through the chain; used by tests that need the forward
  // map and its log-det at chosen points.
  std::pair<Tensor, double> forward_tensor(const Tensor& z0) const {
    Tape scratch;
    Mounted mt = mount(scratch, false);
    Var z = scratch.constant(z0);
    double logdet_total = 0.0;
    for (std::size_t k = 0; k < steps.size(); ++k) {
      auto [zn, ld] = iaf_step(scratch, steps[k], mt.steps[k], z);
      z = zn;
      logdet_total += ld.value().value();
    }
    return {z.value(), logdet_total};
  }
};

// Auxiliary density r(z | W, Gamma): an inverse flow z -> z_B followed by a
// diagonal Gaussian whose moments are driven by the effective weight matrix.
struct InverseFlowHead {
  std::size_t d = 0;
  Tensor d1, d2, e;  // (1, d)
  std::vector<MaskedAutoregressiveNet> steps;

  InverseFlowHead() = default;

  InverseFlowHead(std::size_t dim, std::size_t K, std::size_t width, RngStream& rng)
      : d(dim), d1({1, dim}), d2({1, dim}), e({1, dim}) {
    if (K < 1) throw ShapeError("InverseFlowHead: chain length must be >= 1");
    double sd = std::sqrt(0.1);
    for (std::size_t i = 0; i < dim; ++i) {
      d1[i] = sd * rng.normal();
      d2[i] = sd * rng.normal();
      e[i] = sd * rng.normal();
    }
    steps.reserve(K);
    for (std::size_t k = 0; k < K; ++k) steps.emplace_back(dim, width, rng);
  }

  std::vector<Tensor*> params() {
    std::vector<Tensor*> out = {&d1, &d2, &e};
    for (auto& s : steps)
      for (Tensor* p : s.params()) out.push_back(p);
    return out;
  }

  struct Mounted {
    Var d1, d2, e;
    std::vector<MaskedAutoregressiveNet::Mounted> steps;
  };

  Mounted mount(Tape& tape, bool trainable = true) const {
    Mounted mt{tape.leaf(d1, trainable), tape.leaf(d2, trainable), tape.leaf(e, trainable), {}};
    mt.steps.reserve(steps.size());
    for (const auto& s : steps) mt.steps.push_back(s.mount(tape, trainable));
    return mt;
  }

  std::vector<Var> leaves(const Mounted& mt) const {
    std::vector<Var> out = {mt.d1, mt.d2, mt.e};
    for (std::size_t k = 0; k < steps.size(); ++k)
      for (const Var& v : steps[k].leaves(mt.steps[k])) out.push_back(v);
    return out;
  }

  // Gaussian moments of the base density: s = hardtanh(e^T W_eff), then
  // nu = d1 * mean(s) and log tau^2 = d2 * mean(s), elementwise over z's dim.
  std::pair<Var, Var> nu_tau(const Mounted& mt, const Var& w_eff) const {
    Var s = hardtanh(matmul(mt.e, w_eff));
    Var sbar = mean(s);
    return {mul(mt.d1, sbar), mul(mt.d2, sbar)};
  }

  Var log_r(Tape& tape, const Mounted& mt, const Var& z, const Var& w_eff) const {
    Var zb = z;
    Var logdet = tape.constant(0.0);
    for (std::size_t k = 0; k < steps.size(); ++k) {
      auto [zn, ld] = iaf_step(tape, steps[k], mt.steps[k], zb);
      zb = zn;
      logdet = logdet + ld;
    }
    auto [nu, log_tau2] = nu_tau(mt, w_eff);
    Var quad = sum(div(square(zb - nu), exp(log_tau2)));
    Var log_rb = (affine(sum(log_tau2), -0.5, -0.5 * static_cast<double>(d) * kLog2Pi) -
                  affine(quad, 0.5, 0.0));
    return log_rb + logdet;
  }

  double log_r_tensor(const Tensor& z, const Tensor& w_eff) const {
    Tape scratch;
    Mounted mt = mount(scratch, false);
    return log_r(scratch, mt, scratch.constant(z), scratch.constant(w_eff)).value().value();
  }
};

}  // namespace sbnn
