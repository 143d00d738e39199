#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sbnn {

/// Shape mismatch or malformed-argument error for tensor kernels.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised whenever an operation would produce (or has produced) a non-finite
/// value. The message names the offending operation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense multi-dimensional array of doubles, row-major.
///
/// Tensors are plain values: copyable, immutable by convention once handed to
/// an operation. All numerics in the library flow through this type.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  static Tensor scalar(double v) {
    Tensor t(Shape{});
    t.data_ = {v};
    return t;
  }

  static Tensor from(Shape shape, std::vector<double> data) {
    if (shape_size(shape) != data.size())
      throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not match data length " +
                       std::to_string(data.size()));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  std::size_t rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor is not rank-2, shape " + shape_str(shape_));
    return shape_[0];
  }
  std::size_t cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor is not rank-2, shape " + shape_str(shape_));
    return shape_[1];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  /// Extracts the single element of a scalar (or one-element) tensor.
  double value() const {
    if (size() != 1) throw ShapeError("value(): tensor has " + std::to_string(size()) + " elements");
    return data_[0];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool same_data(const Tensor& other) const {
    if (shape_ != other.shape_) return false;
    for (std::size_t i = 0; i < data_.size(); ++i) {
      // bit comparison, so that -0.0 != 0.0 and NaN mismatches are caught
      if (std::memcmp(&data_[i], &other.data_[i], sizeof(double)) != 0) return false;
    }
    return true;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void ensure_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw NumericError(std::string(op) + " produced a non-finite value");
}

// Broadcast rule: b must have the same shape as a, or a's shape with the
// leading dimension dropped, or be a single element. Returns the flat-index
// modulus for b.
inline std::size_t broadcast_stride(const Tensor& a, const Tensor& b, const char* op) {
  if (b.shape() == a.shape()) return a.size() == 0 ? 1 : a.size();
  if (b.size() == 1) return 1;
  if (a.rank() >= 1 && b.rank() + 1 == a.rank()) {
    Shape tail(a.shape().begin() + 1, a.shape().end());
    if (b.shape() == tail) return shape_size(tail);
  }
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                   " do not broadcast (leading batch dimension only)");
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Raw kernels. Shape checks throw ShapeError; every kernel verifies its result
// is finite and throws NumericError naming the op otherwise.
// ---------------------------------------------------------------------------

template <class F>
Tensor map_unary(const Tensor& x, F&& f, const char* op) {
  Tensor out = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  detail::ensure_finite(out, op);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F&& f, const char* op) {
  std::size_t stride = detail::broadcast_stride(a, b, op);
  Tensor out = Tensor::zeros_like(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % stride]);
  detail::ensure_finite(out, op);
  return out;
}

inline Tensor t_add(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, [](double x, double y) { return x + y; }, "add");
}
inline Tensor t_sub(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, [](double x, double y) { return x - y; }, "sub");
}
inline Tensor t_mul(const Tensor& a, const Tensor& b) {
  return map_binary(a, b, [](double x, double y) { return x * y; }, "mul");
}
inline Tensor t_div(const Tensor& a, const Tensor& b) {
  std::size_t stride = detail::broadcast_stride(a, b, "div");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (b[i % stride] == 0.0) throw NumericError("div: division by zero");
  return map_binary(a, b, [](double x, double y) { return x / y; }, "div");
}

/// y = scale*x + shift, elementwise with double coefficients.
inline Tensor t_affine(const Tensor& x, double scale, double shift) {
  return map_unary(x, [=](double v) { return scale * v + shift; }, "affine");
}

inline Tensor t_neg(const Tensor& x) { return t_affine(x, -1.0, 0.0); }

inline Tensor t_exp(const Tensor& x) {
  return map_unary(x, [](double v) { return std::exp(v); }, "exp");
}

inline Tensor t_log(const Tensor& x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < 0.0) throw NumericError("log: negative input");
  return map_unary(x, [](double v) { return std::log(v); }, "log");
}

inline Tensor t_sqrt(const Tensor& x) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < 0.0) throw NumericError("sqrt: negative input");
  return map_unary(x, [](double v) { return std::sqrt(v); }, "sqrt");
}

inline Tensor t_square(const Tensor& x) {
  return map_unary(x, [](double v) { return v * v; }, "square");
}

inline double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

/// log(1 + e^x) evaluated without overflow for large |x|.
inline double stable_softplus(double v) {
  if (v > 0.0) return v + std::log1p(std::exp(-v));
  return std::log1p(std::exp(v));
}

inline Tensor t_sigmoid(const Tensor& x) { return map_unary(x, stable_sigmoid, "sigmoid"); }
inline Tensor t_softplus(const Tensor& x) { return map_unary(x, stable_softplus, "softplus"); }
inline Tensor t_tanh(const Tensor& x) {
  return map_unary(x, [](double v) { return std::tanh(v); }, "tanh");
}

inline Tensor t_clamp(const Tensor& x, double lo, double hi) {
  return map_unary(x, [=](double v) { return v < lo ? lo : (v > hi ? hi : v); }, "clamp");
}

inline Tensor t_hardtanh(const Tensor& x) { return t_clamp(x, -1.0, 1.0); }

inline Tensor t_relu(const Tensor& x) {
  return map_unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, "relu");
}

/// Scales row i of a rank-2 tensor by v[i] (v of any rank, size == rows).
inline Tensor t_scale_rows(const Tensor& m, const Tensor& v) {
  if (m.rank() != 2 || v.size() != m.rows())
    throw ShapeError("scale_rows: matrix " + shape_str(m.shape()) + " vs vector of size " +
                     std::to_string(v.size()));
  Tensor out = Tensor::zeros_like(m);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out.at(i, j) = m.at(i, j) * v[i];
  detail::ensure_finite(out, "scale_rows");
  return out;
}

inline Tensor t_matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul: operands must be rank-2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  std::size_t m = trans_a ? a.cols() : a.rows();
  std::size_t k = trans_a ? a.rows() : a.cols();
  std::size_t kb = trans_b ? b.cols() : b.rows();
  std::size_t n = trans_b ? b.rows() : b.cols();
  if (k != kb)
    throw ShapeError("matmul: inner dimensions " + std::to_string(k) + " and " + std::to_string(kb) +
                     " do not match");
  Tensor out(Shape{m, n});
  detail::ECMap ma(a.data(), a.rows(), a.cols());
  detail::ECMap mb(b.data(), b.rows(), b.cols());
  detail::EMap mo(out.data(), m, n);
  if (!trans_a && !trans_b)
    mo.noalias() = ma * mb;
  else if (trans_a && !trans_b)
    mo.noalias() = ma.transpose() * mb;
  else if (!trans_a && trans_b)
    mo.noalias() = ma * mb.transpose();
  else
    mo.noalias() = ma.transpose() * mb.transpose();
  detail::ensure_finite(out, "matmul");
  return out;
}

inline Tensor t_sum(const Tensor& x) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i];
  Tensor out = Tensor::scalar(s);
  detail::ensure_finite(out, "sum");
  return out;
}

inline Tensor t_mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  Tensor out = Tensor::scalar(t_sum(x).value() / static_cast<double>(x.size()));
  detail::ensure_finite(out, "mean");
  return out;
}

/// Rowwise log(sum(exp(x))) with max-shift, rank-2 -> rank-1.
inline Tensor t_logsumexp(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("logsumexp: expected rank-2, got " + shape_str(x.shape()));
  Tensor out(Shape{x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += std::exp(x.at(i, j) - mx);
    out[i] = mx + std::log(s);
  }
  detail::ensure_finite(out, "logsumexp");
  return out;
}

/// Rowwise softmax of a rank-2 tensor.
inline Tensor t_softmax(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("softmax: expected rank-2, got " + shape_str(x.shape()));
  Tensor out = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = x.at(i, 0);
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      s += e;
    }
    for (std::size_t j = 0; j < x.cols(); ++j) out.at(i, j) /= s;
  }
  detail::ensure_finite(out, "softmax");
  return out;
}

/// Concatenation of two tensors of equal rank along `axis` (rank 1 or 2).
inline Tensor t_concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (a.rank() != b.rank() || a.rank() < 1 || a.rank() > 2 || axis >= a.rank())
    throw ShapeError("concat: unsupported ranks " + shape_str(a.shape()) + " / " + shape_str(b.shape()));
  if (a.rank() == 1) {
    Tensor out(Shape{a.size() + b.size()});
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) out[a.size() + i] = b[i];
    return out;
  }
  if (axis == 0) {
    if (a.cols() != b.cols()) throw ShapeError("concat: column counts differ");
    Tensor out(Shape{a.rows() + b.rows(), a.cols()});
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) out[a.size() + i] = b[i];
    return out;
  }
  if (a.rows() != b.rows()) throw ShapeError("concat: row counts differ");
  Tensor out(Shape{a.rows(), a.cols() + b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) = a.at(i, j);
    for (std::size_t j = 0; j < b.cols(); ++j) out.at(i, a.cols() + j) = b.at(i, j);
  }
  return out;
}

/// out[i] = x[i, idx[i]] for a rank-2 tensor and per-row column indices.
inline Tensor t_pick(const Tensor& x, const std::vector<int>& idx) {
  if (x.rank() != 2 || idx.size() != x.rows())
    throw ShapeError("pick: need rank-2 tensor with one index per row");
  Tensor out(Shape{x.rows()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= x.cols())
      throw ShapeError("pick: index " + std::to_string(idx[i]) + " out of range for " +
                       std::to_string(x.cols()) + " columns");
    out[i] = x.at(i, static_cast<std::size_t>(idx[i]));
  }
  return out;
}

}  // namespace sbnn
