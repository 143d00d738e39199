#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "sbnn/tape.hpp"
#include "sbnn/tensor.hpp"

namespace sbnn {

namespace detail {

inline void add_into(Tensor* dst, const Tensor& src) {
  if (!dst) return;
  for (std::size_t i = 0; i < dst->size(); ++i) (*dst)[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (broadcast over a leading batch dimension only).
// ---------------------------------------------------------------------------

struct AddOp final : OpBase {
  const char* name() const override { return "add"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_add(*in[0], *in[1]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    std::size_t s = detail::broadcast_stride(*in[0], *in[1], "add");
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (gi[0]) (*gi[0])[i] += g[i];
      if (gi[1]) (*gi[1])[i % s] += g[i];
    }
  }
};

struct SubOp final : OpBase {
  const char* name() const override { return "sub"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_sub(*in[0], *in[1]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    std::size_t s = detail::broadcast_stride(*in[0], *in[1], "sub");
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (gi[0]) (*gi[0])[i] += g[i];
      if (gi[1]) (*gi[1])[i % s] -= g[i];
    }
  }
};

struct MulOp final : OpBase {
  const char* name() const override { return "mul"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_mul(*in[0], *in[1]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    std::size_t s = detail::broadcast_stride(a, b, "mul");
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (gi[0]) (*gi[0])[i] += g[i] * b[i % s];
      if (gi[1]) (*gi[1])[i % s] += g[i] * a[i];
    }
  }
};

struct DivOp final : OpBase {
  const char* name() const override { return "div"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_div(*in[0], *in[1]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    std::size_t s = detail::broadcast_stride(a, b, "div");
    for (std::size_t i = 0; i < g.size(); ++i) {
      double bi = b[i % s];
      if (gi[0]) (*gi[0])[i] += g[i] / bi;
      if (gi[1]) (*gi[1])[i % s] -= g[i] * a[i] / (bi * bi);
    }
  }
};

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------

struct AffineOp final : OpBase {
  double scale, shift;
  AffineOp(double a, double b) : scale(a), shift(b) {}
  const char* name() const override { return "affine"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override {
    return t_affine(*in[0], scale, shift);
  }
  void backward(const std::vector<const Tensor*>&, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += scale * g[i];
  }
};

struct ExpOp final : OpBase {
  const char* name() const override { return "exp"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_exp(*in[0]); }
  void backward(const std::vector<const Tensor*>&, const Tensor& out, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * out[i];
  }
};

struct LogOp final : OpBase {
  const char* name() const override { return "log"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_log(*in[0]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] / (*in[0])[i];
  }
};

struct SqrtOp final : OpBase {
  const char* name() const override { return "sqrt"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_sqrt(*in[0]); }
  void backward(const std::vector<const Tensor*>&, const Tensor& out, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * 0.5 / out[i];
  }
};

struct SquareOp final : OpBase {
  const char* name() const override { return "square"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_square(*in[0]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += 2.0 * (*in[0])[i] * g[i];
  }
};

struct SigmoidOp final : OpBase {
  const char* name() const override { return "sigmoid"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_sigmoid(*in[0]); }
  void backward(const std::vector<const Tensor*>&, const Tensor& out, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * out[i] * (1.0 - out[i]);
  }
};

struct SoftplusOp final : OpBase {
  const char* name() const override { return "softplus"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_softplus(*in[0]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * stable_sigmoid((*in[0])[i]);
  }
};

struct TanhOp final : OpBase {
  const char* name() const override { return "tanh"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_tanh(*in[0]); }
  void backward(const std::vector<const Tensor*>&, const Tensor& out, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * (1.0 - out[i] * out[i]);
  }
};

/// Clamp to [lo, hi]; subgradient 0 outside the open interval.
struct ClampOp final : OpBase {
  double lo, hi;
  ClampOp(double l, double h) : lo(l), hi(h) {}
  const char* name() const override { return "clamp"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_clamp(*in[0], lo, hi); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double x = (*in[0])[i];
      if (x > lo && x < hi) (*gi[0])[i] += g[i];
    }
  }
};

struct ReluOp final : OpBase {
  const char* name() const override { return "relu"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_relu(*in[0]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i)
      if ((*in[0])[i] > 0.0) (*gi[0])[i] += g[i];
  }
};

// ---------------------------------------------------------------------------
// Structured ops.
// ---------------------------------------------------------------------------

struct MatMulOp final : OpBase {
  const char* name() const override { return "matmul"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override {
    return t_matmul(*in[0], *in[1]);
  }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (gi[0]) detail::add_into(gi[0], t_matmul(g, *in[1], false, true));
    if (gi[1]) detail::add_into(gi[1], t_matmul(*in[0], g, true, false));
  }
};

/// out[i,j] = m[i,j] * v[i]; broadcast of a length-rows vector over columns.
struct ScaleRowsOp final : OpBase {
  const char* name() const override { return "scale_rows"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override {
    return t_scale_rows(*in[0], *in[1]);
  }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    const Tensor& m = *in[0];
    const Tensor& v = *in[1];
    std::size_t r = m.rows(), c = m.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        if (gi[0]) (*gi[0]).at(i, j) += g.at(i, j) * v[i];
        if (gi[1]) (*gi[1])[i] += g.at(i, j) * m.at(i, j);
      }
  }
};

struct SumOp final : OpBase {
  const char* name() const override { return "sum"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_sum(*in[0]); }
  void backward(const std::vector<const Tensor*>&, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < gi[0]->size(); ++i) (*gi[0])[i] += g[0];
  }
};

struct MeanOp final : OpBase {
  const char* name() const override { return "mean"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_mean(*in[0]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    double inv = g[0] / static_cast<double>(in[0]->size());
    for (std::size_t i = 0; i < gi[0]->size(); ++i) (*gi[0])[i] += inv;
  }
};

struct LogSumExpOp final : OpBase {
  const char* name() const override { return "logsumexp"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_logsumexp(*in[0]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor& out, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    const Tensor& x = *in[0];
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j)
        (*gi[0]).at(i, j) += g[i] * std::exp(x.at(i, j) - out[i]);
  }
};

struct SoftmaxOp final : OpBase {
  const char* name() const override { return "softmax"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_softmax(*in[0]); }
  void backward(const std::vector<const Tensor*>& in, const Tensor& out, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    const Tensor& x = *in[0];
    for (std::size_t i = 0; i < x.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < x.cols(); ++j) dot += g.at(i, j) * out.at(i, j);
      for (std::size_t j = 0; j < x.cols(); ++j)
        (*gi[0]).at(i, j) += out.at(i, j) * (g.at(i, j) - dot);
    }
  }
};

struct ConcatOp final : OpBase {
  std::size_t axis;
  explicit ConcatOp(std::size_t ax) : axis(ax) {}
  const char* name() const override { return "concat"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override {
    return t_concat(*in[0], *in[1], axis);
  }
  void backward(const std::vector<const Tensor*>& in, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    const Tensor& a = *in[0];
    const Tensor& b = *in[1];
    if (a.rank() == 1 || axis == 0) {
      for (std::size_t i = 0; i < a.size(); ++i)
        if (gi[0]) (*gi[0])[i] += g[i];
      for (std::size_t i = 0; i < b.size(); ++i)
        if (gi[1]) (*gi[1])[i] += g[a.size() + i];
    } else {
      for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j)
          if (gi[0]) (*gi[0]).at(i, j) += g.at(i, j);
        for (std::size_t j = 0; j < b.cols(); ++j)
          if (gi[1]) (*gi[1]).at(i, j) += g.at(i, a.cols() + j);
      }
    }
  }
};

/// Per-row column gather: out[i] = x[i, idx[i]].
struct PickOp final : OpBase {
  std::vector<int> idx;
  explicit PickOp(std::vector<int> indices) : idx(std::move(indices)) {}
  const char* name() const override { return "pick"; }
  Tensor forward(const std::vector<const Tensor*>& in) const override { return t_pick(*in[0], idx); }
  void backward(const std::vector<const Tensor*>&, const Tensor&, const Tensor& g,
                const std::vector<Tensor*>& gi) const override {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      (*gi[0]).at(i, static_cast<std::size_t>(idx[i])) += g[i];
  }
};

// ---------------------------------------------------------------------------
// Var-level API.
// ---------------------------------------------------------------------------

namespace detail {
inline Var apply1(std::unique_ptr<OpBase> op, const Var& a) {
  return a.tape()->apply(std::move(op), {a});
}
inline Var apply2(std::unique_ptr<OpBase> op, const Var& a, const Var& b) {
  return a.tape()->apply(std::move(op), {a, b});
}
}  // namespace detail

inline Var add(const Var& a, const Var& b) { return detail::apply2(std::make_unique<AddOp>(), a, b); }
inline Var sub(const Var& a, const Var& b) { return detail::apply2(std::make_unique<SubOp>(), a, b); }
inline Var mul(const Var& a, const Var& b) { return detail::apply2(std::make_unique<MulOp>(), a, b); }
inline Var div(const Var& a, const Var& b) { return detail::apply2(std::make_unique<DivOp>(), a, b); }

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }

inline Var affine(const Var& x, double scale, double shift) {
  return detail::apply1(std::make_unique<AffineOp>(scale, shift), x);
}
inline Var operator*(const Var& x, double c) { return affine(x, c, 0.0); }
inline Var operator*(double c, const Var& x) { return affine(x, c, 0.0); }
inline Var operator+(const Var& x, double c) { return affine(x, 1.0, c); }
inline Var operator-(const Var& x, double c) { return affine(x, 1.0, -c); }
inline Var operator-(double c, const Var& x) { return affine(x, -1.0, c); }
inline Var operator-(const Var& x) { return affine(x, -1.0, 0.0); }

inline Var exp(const Var& x) { return detail::apply1(std::make_unique<ExpOp>(), x); }
inline Var log(const Var& x) { return detail::apply1(std::make_unique<LogOp>(), x); }
inline Var sqrt(const Var& x) { return detail::apply1(std::make_unique<SqrtOp>(), x); }
inline Var square(const Var& x) { return detail::apply1(std::make_unique<SquareOp>(), x); }
inline Var sigmoid(const Var& x) { return detail::apply1(std::make_unique<SigmoidOp>(), x); }
inline Var softplus(const Var& x) { return detail::apply1(std::make_unique<SoftplusOp>(), x); }
inline Var tanh(const Var& x) { return detail::apply1(std::make_unique<TanhOp>(), x); }
inline Var clamp(const Var& x, double lo, double hi) {
  return detail::apply1(std::make_unique<ClampOp>(lo, hi), x);
}
inline Var hardtanh(const Var& x) { return clamp(x, -1.0, 1.0); }
inline Var relu(const Var& x) { return detail::apply1(std::make_unique<ReluOp>(), x); }

inline Var matmul(const Var& a, const Var& b) {
  return detail::apply2(std::make_unique<MatMulOp>(), a, b);
}
inline Var scale_rows(const Var& m, const Var& v) {
  return detail::apply2(std::make_unique<ScaleRowsOp>(), m, v);
}
inline Var sum(const Var& x) { return detail::apply1(std::make_unique<SumOp>(), x); }
inline Var mean(const Var& x) { return detail::apply1(std::make_unique<MeanOp>(), x); }
inline Var logsumexp(const Var& x) { return detail::apply1(std::make_unique<LogSumExpOp>(), x); }
inline Var softmax(const Var& x) { return detail::apply1(std::make_unique<SoftmaxOp>(), x); }
inline Var concat(const Var& a, const Var& b, std::size_t axis) {
  return detail::apply2(std::make_unique<ConcatOp>(axis), a, b);
}
inline Var pick(const Var& x, std::vector<int> idx) {
  return detail::apply1(std::make_unique<PickOp>(std::move(idx)), x);
}

}  // namespace sbnn
