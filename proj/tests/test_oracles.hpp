#pragma once

// Reference machinery used across the test suites: central finite differences,
// Monte Carlo estimates with standard errors, brute-force Jacobians with LU
// determinants, and composite-Simpson quadrature. Everything here is written
// independently of the library's own numeric paths so that agreement between
// the two is meaningful.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <vector>

#include "sbnn/ops.hpp"
#include "sbnn/rng.hpp"
#include "sbnn/tape.hpp"
#include "sbnn/tensor.hpp"

namespace oracle {

using sbnn::Shape;
using sbnn::Tensor;

// Builds a scalar loss from fresh leaves on a fresh tape. The same builder is
// invoked repeatedly with perturbed leaf values during finite differencing.
using LossFn = std::function<sbnn::Var(sbnn::Tape&, const std::vector<sbnn::Var>&)>;

inline double eval_loss(const LossFn& fn, const std::vector<Tensor>& vals) {
  sbnn::Tape tape;
  std::vector<sbnn::Var> leaves;
  leaves.reserve(vals.size());
  for (const auto& v : vals) leaves.push_back(tape.leaf(v, true));
  Tensor out = fn(tape, leaves).value();
  if (out.size() != 1) throw std::runtime_error("oracle: loss is not scalar");
  return out[0];
}

// Worst-case discrepancy between reverse-mode and central-difference gradients,
// measured as |fd - ad| / (1 + max(|fd|, |ad|)).
inline double fd_gradient_max_err(const LossFn& fn, std::vector<Tensor> vals,
                                  double step = 1e-5) {
  sbnn::Tape tape;
  std::vector<sbnn::Var> leaves;
  leaves.reserve(vals.size());
  for (const auto& v : vals) leaves.push_back(tape.leaf(v, true));
  sbnn::Var loss = fn(tape, leaves);
  std::vector<Tensor> grads = tape.gradient(loss, leaves);

  double worst = 0.0;
  for (std::size_t p = 0; p < vals.size(); ++p) {
    for (std::size_t i = 0; i < vals[p].size(); ++i) {
      double keep = vals[p][i];
      vals[p][i] = keep + step;
      double up = eval_loss(fn, vals);
      vals[p][i] = keep - step;
      double dn = eval_loss(fn, vals);
      vals[p][i] = keep;
      double fd = (up - dn) / (2.0 * step);
      double ad = grads[p][i];
      double err = std::fabs(fd - ad) / (1.0 + std::max(std::fabs(fd), std::fabs(ad)));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Random test inputs.
// ---------------------------------------------------------------------------

inline Tensor rand_tensor(const Shape& shape, sbnn::RngStream& rng, double lo = -1.5,
                          double hi = 1.5) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
  return t;
}

inline Tensor rand_positive(const Shape& shape, sbnn::RngStream& rng, double lo = 0.3,
                            double hi = 2.0) {
  return rand_tensor(shape, rng, lo, hi);
}

// Pushes values off the listed kink locations so that subgradient choices
// cannot contaminate a finite-difference comparison.
inline Tensor away_from(Tensor t, std::initializer_list<double> kinks, double margin = 0.15) {
  for (std::size_t i = 0; i < t.size(); ++i)
    for (double k : kinks)
      if (std::fabs(t[i] - k) < margin) t[i] = k + (t[i] >= k ? margin : -margin);
  return t;
}

// ---------------------------------------------------------------------------
// Monte Carlo estimates.
// ---------------------------------------------------------------------------

struct McEstimate {
  double mean;
  double se;
};

inline McEstimate mc_mean(const std::function<double(sbnn::RngStream&)>& draw,
                          sbnn::RngStream& rng, int n) {
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double v = draw(rng);
    s += v;
    s2 += v * v;
  }
  double m = s / n;
  double var = (s2 - n * m * m) / (n - 1);
  return {m, std::sqrt(std::max(var, 0.0) / n)};
}

// ---------------------------------------------------------------------------
// Jacobians and determinants for small maps R^d -> R^d.
// ---------------------------------------------------------------------------

using VecFn = std::function<std::vector<double>(const std::vector<double>&)>;

inline std::vector<std::vector<double>> fd_jacobian(const VecFn& f, std::vector<double> x,
                                                    double step = 1e-6) {
  std::size_t d = x.size();
  std::vector<std::vector<double>> jac(d, std::vector<double>(d, 0.0));
  for (std::size_t j = 0; j < d; ++j) {
    double keep = x[j];
    x[j] = keep + step;
    std::vector<double> up = f(x);
    x[j] = keep - step;
    std::vector<double> dn = f(x);
    x[j] = keep;
    for (std::size_t i = 0; i < d; ++i) jac[i][j] = (up[i] - dn[i]) / (2.0 * step);
  }
  return jac;
}

// Determinant by LU with partial pivoting; fine for the d <= 8 used in tests.
inline double det(std::vector<std::vector<double>> a) {
  std::size_t n = a.size();
  double result = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (a[piv][col] == 0.0) return 0.0;
    if (piv != col) {
      std::swap(a[piv], a[col]);
      result = -result;
    }
    result *= a[col][col];
    for (std::size_t r = col + 1; r < n; ++r) {
      double factor = a[r][col] / a[col][col];
      for (std::size_t c = col; c < n; ++c) a[r][c] -= factor * a[col][c];
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Quadrature.
// ---------------------------------------------------------------------------

// Composite Simpson on [a, b]; n must be even.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2 != 0) throw std::runtime_error("oracle: simpson needs even n");
  double h = (b - a) / n;
  double acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return acc * h / 3.0;
}

inline double normal_logpdf(double x, double mu, double var) {
  static const double kLog2Pi = std::log(2.0 * 3.14159265358979323846);
  return -0.5 * (kLog2Pi + std::log(var) + (x - mu) * (x - mu) / var);
}

}  // namespace oracle
