#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <Eigen/Dense>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

#include "overhmm/error.hpp"
#include "overhmm/model.hpp"
#include "overhmm/priors.hpp"
#include "overhmm/random.hpp"

namespace overhmm {

// Normal prior on every emission mean.
struct EmissionPrior {
  double mean0 = 0.0;
  double var0 = 100.0;

  static EmissionPrior from_data(std::span<const double> y, double var0 = 100.0) {
    require(!y.empty(), ErrorCode::DimensionMismatch, "cannot centre a prior on empty data");
    const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    return {mean, var0};
  }

  void validate() const {
    require(var0 > 0.0 && std::isfinite(var0), ErrorCode::InvalidArgument,
            "emission prior variance must be positive");
  }
};

struct TransitionCounts {
  Eigen::MatrixXi counts;

  int k() const { return static_cast<int>(counts.rows()); }
  long total() const { return counts.cast<long>().sum(); }
};

inline TransitionCounts transition_counts(std::span<const int> states, int k) {
  require(k >= 1, ErrorCode::InvalidArgument, "k must be positive");
  TransitionCounts out{Eigen::MatrixXi::Zero(k, k)};
  for (std::size_t t = 0; t < states.size(); ++t) {
    require(states[t] >= 0 && states[t] < k, ErrorCode::LabelOutOfRange,
            "state label outside 1..K");
    if (t > 0) ++out.counts(states[t - 1], states[t]);
  }
  return out;
}

// log of the Dirichlet-multinomial evidence of the transition counts under a
// row-hyperparameter matrix (multinomial coefficients omitted).
inline double log_transition_evidence(const TransitionCounts& c, const RowHyperparameters& h) {
  double out = 0.0;
  for (int i = 0; i < c.k(); ++i) {
    double a_sum = 0.0;
    double n_sum = 0.0;
    for (int j = 0; j < c.k(); ++j) {
      const double a = h.alpha(i, j);
      const double n = c.counts(i, j);
      a_sum += a;
      n_sum += n;
      if (n > 0) out += std::lgamma(a + n) - std::lgamma(a);
    }
    out += std::lgamma(a_sum) - std::lgamma(a_sum + n_sum);
  }
  return out;
}

struct TransitionDraw {
  TransitionMatrix q;
  int component = -1;  // Mixture only: 0 column, 1 diagonal
};

// Rows drawn from Dirichlet(alpha_i + n_i). Under the Mixture prior one
// component indicator for the whole matrix is drawn first, with odds equal to
// the ratio of the components' evidences.
template <typename RNG>
TransitionDraw sample_transition_rows(const TransitionCounts& counts, const PriorStructure& s,
                                      RNG& rng) {
  require(counts.k() == s.k, ErrorCode::DimensionMismatch, "counts and prior sizes differ");
  const auto comps = prior_components(s);
  TransitionDraw out;
  std::size_t chosen = 0;
  if (comps.size() == 2) {
    const double lc = log_transition_evidence(counts, comps[0]);
    const double ld = log_transition_evidence(counts, comps[1]);
    const double m = std::max(lc, ld);
    const double w[2] = {std::exp(lc - m), std::exp(ld - m)};
    chosen = static_cast<std::size_t>(categorical(std::span<const double>(w, 2), rng));
    out.component = static_cast<int>(chosen);
  }
  const RowHyperparameters& h = comps[chosen];
  const int k = s.k;
  Eigen::MatrixXd logw(k, k);
  std::vector<double> alpha(k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) alpha[j] = h.alpha(i, j) + counts.counts(i, j);
    const auto row = log_dirichlet_variate(alpha, rng);
    for (int j = 0; j < k; ++j) logw(i, j) = row[j];
  }
  out.q = TransitionMatrix::from_log(std::move(logw));
  return out;
}

// The Dirichlet full conditional ignores the mu_Q(x_1) factor contributed by
// the stationary initial distribution; this MH step restores it.
// OldOverNew is the alternative reading of the acceptance ratio; it does not
// leave the posterior invariant and exists so tests can show that.
enum class MhDirection { NewOverOld, OldOverNew };

template <typename RNG>
bool mh_accept(double mu_old_x1, double mu_new_x1, RNG& rng,
               MhDirection direction = MhDirection::NewOverOld) {
  const double num = direction == MhDirection::NewOverOld ? mu_new_x1 : mu_old_x1;
  const double den = direction == MhDirection::NewOverOld ? mu_old_x1 : mu_new_x1;
  if (num >= den) return true;
  if (num <= 0.0) return false;
  return uniform_open(rng) < num / den;
}

template <typename RNG>
TransitionMatrix mh_accept_transition(const TransitionMatrix& q_old, const TransitionMatrix& q_new,
                                      int x1, RNG& rng,
                                      MhDirection direction = MhDirection::NewOverOld) {
  require(q_old.k() == q_new.k(), ErrorCode::DimensionMismatch, "matrix sizes differ");
  require(x1 >= 0 && x1 < q_old.k(), ErrorCode::LabelOutOfRange, "x1 outside 1..K");
  const auto mu_old = stationary_distribution(q_old);
  const auto mu_new = stationary_distribution(q_new);
  return mh_accept(mu_old[x1], mu_new[x1], rng, direction) ? q_new : q_old;
}

struct NormalPosterior {
  double mean = 0.0;
  double var = 0.0;
};

// Conjugate update for one state's mean given count points summing to sum,
// with unit emission variance. count = 0 returns the prior.
inline NormalPosterior emission_posterior(double count, double sum, const EmissionPrior& prior) {
  const double denom = count * prior.var0 + 1.0;
  return {(prior.var0 * sum + prior.mean0) / denom, prior.var0 / denom};
}

// Empty states draw from the prior.
template <typename RNG>
std::vector<double> sample_emission_means(std::span<const double> y, std::span<const int> states,
                                          int k, const EmissionPrior& prior, RNG& rng) {
  require(y.size() == states.size(), ErrorCode::DimensionMismatch,
          "observations and states differ in length");
  std::vector<double> sum(k, 0.0);
  std::vector<double> count(k, 0.0);
  for (std::size_t t = 0; t < y.size(); ++t) {
    require(states[t] >= 0 && states[t] < k, ErrorCode::LabelOutOfRange,
            "state label outside 1..K");
    sum[states[t]] += y[t];
    count[states[t]] += 1.0;
  }
  std::vector<double> out(k);
  for (int j = 0; j < k; ++j) {
    const auto post = emission_posterior(count[j], sum[j], prior);
    out[j] = normal(rng, post.mean, std::sqrt(post.var));
  }
  return out;
}

inline constexpr double kEmissionLogFloor = -700.0;

namespace detail {

// Filter weights at the emission floor times tiny transition probabilities
// land in the subnormal range, which is very slow on x86. Flush them to zero
// for the duration of one pass.
class FlushSubnormals {
 public:
#if defined(__SSE2__)
  FlushSubnormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushSubnormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

}  // namespace detail

// Forward filtering with per-step normalization, then backward sampling of
// x_{1:n} | Q, gamma, y. Emission log densities are shifted by their per-step
// maximum and floored at -700 before exponentiation.
template <typename RNG>
std::vector<int> ffbs_sample_states(std::span<const double> y, const TransitionMatrix& q,
                                    const StationaryDistribution& init,
                                    std::span<const double> means, RNG& rng) {
  const int k = q.k();
  require(static_cast<int>(means.size()) == k && init.k() == k, ErrorCode::DimensionMismatch,
          "means and initial distribution must have k entries");
  const std::size_t n = y.size();
  require(n >= 1, ErrorCode::DimensionMismatch, "observation vector is empty");
  if (k == 1) return std::vector<int>(n, 0);

  const detail::FlushSubnormals ftz;
  const Eigen::MatrixXd& p = q.probs();
  // Column t holds the shifted, floored emission weights at time t.
  const Eigen::Map<const Eigen::ArrayXd> ym(y.data(), static_cast<Eigen::Index>(n));
  const Eigen::Map<const Eigen::ArrayXd> gm(means.data(), k);
  Eigen::ArrayXXd emit = -0.5 * (ym.transpose().replicate(k, 1).colwise() - gm).square();
  const Eigen::ArrayXd shift = emit.colwise().maxCoeff().transpose();
  emit = (emit.rowwise() - shift.transpose()).max(kEmissionLogFloor).exp();

  std::vector<double> filt(n * k);
  for (std::size_t t = 0; t < n; ++t) {
    double* cur = filt.data() + t * k;
    if (t == 0) {
      for (int j = 0; j < k; ++j) cur[j] = init.probs[j];
    } else {
      const double* prev = cur - k;
      for (int j = 0; j < k; ++j) {
        const double* col = p.col(j).data();
        double acc = 0.0;
        for (int i = 0; i < k; ++i) acc += prev[i] * col[i];
        cur[j] = acc;
      }
    }
    const double* g = emit.col(static_cast<Eigen::Index>(t)).data();
    double c = 0.0;
    for (int j = 0; j < k; ++j) {
      cur[j] *= g[j];
      c += cur[j];
    }
    if (!(c > 0.0 && std::isfinite(c))) {
      throw Error(ErrorCode::NumericalFailure,
                  "forward filter lost all mass at t = " + std::to_string(t + 1));
    }
    const double inv = 1.0 / c;
    for (int j = 0; j < k; ++j) cur[j] *= inv;
  }

  std::vector<int> x(n);
  x[n - 1] = categorical(std::span<const double>(filt.data() + (n - 1) * k, k), rng);
  std::vector<double> w(k);
  for (std::size_t t = n - 1; t-- > 0;) {
    const double* cur = filt.data() + t * k;
    const double* col = p.col(x[t + 1]).data();
    for (int i = 0; i < k; ++i) w[i] = cur[i] * col[i];
    x[t] = categorical(std::span<const double>(w), rng);
  }
  return x;
}

template <typename RNG>
std::vector<int> ffbs_sample_states(std::span<const double> y, const TransitionMatrix& q,
                                    std::span<const double> means, RNG& rng) {
  return ffbs_sample_states(y, q, stationary_distribution(q), means, rng);
}

// One chain's position on the augmented space (x_{1:n}, gamma, Q).
struct ChainState {
  std::vector<int> states;
  TransitionMatrix transition;
  StationaryDistribution stationary;  // cached for the current transition
  std::vector<double> means;
  int rung = 0;
  long iteration = 0;
  int component = -1;
  long mh_accepts = 0;

  int k() const { return transition.k(); }

  void validate(std::size_t n) const {
    require(states.size() == n, ErrorCode::DimensionMismatch, "chain allocation length != n");
    require(static_cast<int>(means.size()) == k() && stationary.k() == k(),
            ErrorCode::DimensionMismatch, "chain dimensions disagree");
    for (int s : states) {
      require(s >= 0 && s < k(), ErrorCode::LabelOutOfRange, "chain state label outside 1..K");
    }
  }
};

enum class InitKind { Uniform, Quantile };

// Starting allocations (uniform labels, or contiguous quantile slices of y),
// then Q and gamma drawn from their full conditionals given them.
template <typename RNG>
ChainState initial_chain_state(std::span<const double> y, const PriorStructure& s,
                               const EmissionPrior& eprior, InitKind init, RNG& rng) {
  s.validate();
  const int k = s.k;
  const std::size_t n = y.size();
  require(n >= 1, ErrorCode::DimensionMismatch, "observation vector is empty");
  ChainState out;
  out.states.resize(n);
  if (init == InitKind::Uniform) {
    for (auto& x : out.states) {
      x = std::min(k - 1, static_cast<int>(uniform_open(rng) * k));
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return y[a] < y[b]; });
    for (std::size_t r = 0; r < n; ++r) {
      out.states[order[r]] = static_cast<int>(r * static_cast<std::size_t>(k) / n);
    }
  }
  auto draw = sample_transition_rows(transition_counts(out.states, k), s, rng);
  out.transition = std::move(draw.q);
  out.component = draw.component;
  out.stationary = stationary_distribution(out.transition);
  out.means = sample_emission_means(y, out.states, k, eprior, rng);
  return out;
}

// Q (with MH correction at the current x_1), then gamma, then x.
template <typename RNG>
ChainState gibbs_sweep(ChainState state, const PriorStructure& s, const EmissionPrior& eprior,
                       std::span<const double> y, RNG& rng,
                       MhDirection direction = MhDirection::NewOverOld) {
  const int k = state.k();
  require(s.k == k, ErrorCode::DimensionMismatch, "prior and chain sizes differ");
  auto draw = sample_transition_rows(transition_counts(state.states, k), s, rng);
  auto mu_new = stationary_distribution(draw.q);
  const int x1 = state.states.front();
  if (mh_accept(state.stationary[x1], mu_new[x1], rng, direction)) {
    state.transition = std::move(draw.q);
    state.stationary = std::move(mu_new);
    state.component = draw.component;
    ++state.mh_accepts;
  }
  state.means = sample_emission_means(y, state.states, k, eprior, rng);
  state.states = ffbs_sample_states(y, state.transition, state.stationary, state.means, rng);
  ++state.iteration;
  return state;
}

}  // namespace overhmm
