#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "overhmm/error.hpp"

namespace overhmm {

using Rng = std::mt19937_64;

// Independent streams are keyed by (master seed, purpose, index) so results do
// not depend on scheduling or thread count.
enum class StreamTag : std::uint32_t {
  Data = 1,
  Chain = 2,
  Swap = 3,
  Predictive = 4,
  Replicate = 5,
  Quadrature = 6,
};

inline Rng make_stream(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

inline std::uint64_t derive_seed(std::uint64_t seed, StreamTag tag, std::uint64_t index) {
  auto rng = make_stream(seed, tag, index);
  return rng();
}

// Uniform on the open interval (0, 1).
template <typename RNG>
double uniform_open(RNG& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

template <typename RNG>
double standard_normal(RNG& rng) {
  // Box-Muller, one variate per call so no hidden state survives between calls.
  const double u1 = uniform_open(rng);
  const double u2 = uniform_open(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

template <typename RNG>
double normal(RNG& rng, double mean, double sd) {
  return mean + sd * standard_normal(rng);
}

// log of a Gamma(shape, 1) variate. Shapes below one use the
// Gamma(a) = Gamma(a + 1) * U^(1/a) boost in log space, so draws with shape
// 1e-5 do not underflow to zero.
template <typename RNG>
double log_gamma_variate(double shape, RNG& rng) {
  require(shape > 0.0 && std::isfinite(shape), ErrorCode::InvalidArgument,
          "gamma shape must be positive and finite");
  if (shape < 1.0) {
    return log_gamma_variate(shape + 1.0, rng) + std::log(uniform_open(rng)) / shape;
  }
  // Marsaglia & Tsang.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v);
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return std::log(d * v);
  }
}

inline double log_sum_exp(std::span<const double> values) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : values) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

// Dirichlet draw returned as normalized log-probabilities.
template <typename RNG>
std::vector<double> log_dirichlet_variate(std::span<const double> alpha, RNG& rng) {
  std::vector<double> out(alpha.size());
  for (std::size_t j = 0; j < alpha.size(); ++j) out[j] = log_gamma_variate(alpha[j], rng);
  const double norm = log_sum_exp(out);
  for (double& v : out) v -= norm;
  return out;
}

// Index drawn proportional to non-negative weights.
template <typename RNG>
int categorical(std::span<const double> weights, RNG& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  require(total > 0.0 && std::isfinite(total), ErrorCode::NumericalFailure,
          "categorical weights must have a positive finite sum");
  const double u = uniform_open(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding can leave u just above the final partial sum.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(weights.size()) - 1;
}

}  // namespace overhmm
