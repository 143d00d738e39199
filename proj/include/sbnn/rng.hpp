#pragma once

#include <cstdint>
#include <stdexcept>

#include "sbnn/tensor.hpp"

namespace sbnn {

/// Counter-based random stream: the i-th draw is a pure function of
/// (seed, i), so identical seeds reproduce identical sequences on any
/// platform, and independent streams can be split off deterministically.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_ + (++counter_) * kGamma); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes exactly two uniforms per draw.
  double normal() {
    // u1 in (0, 1] so that log(u1) is finite
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  /// A stream independent of this one; advances this stream by one draw.
  RngStream split() { return RngStream(mix(next_u64() ^ 0x5851f42d4c957f2dULL)); }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }

  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

inline Tensor sample_gaussian(const Shape& shape, RngStream& rng) {
  Tensor out{Shape(shape)};
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.normal();
  return out;
}

/// Elementwise Bernoulli(p) draw; entries of p must lie in [0, 1].
inline Tensor sample_bernoulli(const Tensor& p, RngStream& rng) {
  Tensor out = Tensor::zeros_like(p);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0))
      throw NumericError("sample_bernoulli: probability outside [0,1]");
    out[i] = rng.uniform() < p[i] ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace sbnn
