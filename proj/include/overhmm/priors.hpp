#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "overhmm/error.hpp"
#include "overhmm/model.hpp"

namespace overhmm {

// Where the large pseudo-count sits in each row of the transition prior.
enum class PriorKind { Column, Diagonal, Mixture };

inline std::string_view to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::Column: return "column";
    case PriorKind::Diagonal: return "diagonal";
    case PriorKind::Mixture: return "mixture";
  }
  return "unknown";
}

inline PriorKind parse_prior_kind(std::string_view name) {
  if (name == "column") return PriorKind::Column;
  if (name == "diagonal") return PriorKind::Diagonal;
  if (name == "mixture") return PriorKind::Mixture;
  throw Error(ErrorCode::ConfigError, "unknown prior structure '" + std::string(name) + "'");
}

struct PriorStructure {
  PriorKind kind = PriorKind::Column;
  int k = 1;
  double alpha_bar = 1.0;
  double alpha_low = 1.0;
  int p = 1;

  void validate() const {
    require(k >= 1, ErrorCode::InvalidArgument, "prior needs k >= 1");
    require(alpha_low > 0.0 && std::isfinite(alpha_low), ErrorCode::InvalidArgument,
            "alpha_low must be positive");
    require(alpha_bar >= alpha_low && std::isfinite(alpha_bar), ErrorCode::InvalidArgument,
            "alpha_bar must be at least alpha_low");
    require(p >= 1 && p <= k, ErrorCode::InvalidArgument, "p must lie in 1..k");
  }

  PriorStructure with_alpha_low(double value) const {
    PriorStructure out = *this;
    out.alpha_low = value;
    return out;
  }
};

// alpha_ij: prior number of transitions from i to j.
struct RowHyperparameters {
  Eigen::MatrixXd alpha;

  int k() const { return static_cast<int>(alpha.rows()); }
};

inline RowHyperparameters column_hyperparameters(const PriorStructure& s) {
  RowHyperparameters out{Eigen::MatrixXd::Constant(s.k, s.k, s.alpha_low)};
  out.alpha.leftCols(s.p).setConstant(s.alpha_bar);
  return out;
}

inline RowHyperparameters diagonal_hyperparameters(const PriorStructure& s) {
  RowHyperparameters out{Eigen::MatrixXd::Constant(s.k, s.k, s.alpha_low)};
  out.alpha.diagonal().setConstant(s.alpha_bar);
  return out;
}

inline RowHyperparameters build_row_hyperparameters(const PriorStructure& s) {
  s.validate();
  switch (s.kind) {
    case PriorKind::Column: return column_hyperparameters(s);
    case PriorKind::Diagonal: return diagonal_hyperparameters(s);
    case PriorKind::Mixture: break;
  }
  throw Error(ErrorCode::InvalidArgument,
              "mixture prior has two component matrices; use prior_components()");
}

// One matrix for Column/Diagonal; the column and diagonal components, in that
// order, for the 50/50 Mixture over the whole matrix.
inline std::vector<RowHyperparameters> prior_components(const PriorStructure& s) {
  s.validate();
  if (s.kind == PriorKind::Mixture) return {column_hyperparameters(s), diagonal_hyperparameters(s)};
  return {build_row_hyperparameters(s)};
}

// Dirichlet log density of one row given its log-probabilities. A zero entry
// with alpha > 1 gives -inf; with alpha < 1 the density is unbounded and
// BoundaryDensity is raised; alpha == 1 contributes nothing.
inline double dirichlet_log_density(std::span<const double> log_q, std::span<const double> alpha) {
  require(log_q.size() == alpha.size(), ErrorCode::DimensionMismatch,
          "row and hyperparameters differ in length");
  double total_alpha = 0.0;
  double out = 0.0;
  for (std::size_t j = 0; j < alpha.size(); ++j) {
    total_alpha += alpha[j];
    out -= std::lgamma(alpha[j]);
    if (alpha[j] == 1.0) continue;
    if (log_q[j] == kNegInf) {
      if (alpha[j] > 1.0) return kNegInf;
      throw Error(ErrorCode::BoundaryDensity,
                  "Dirichlet density is unbounded at a zero entry with alpha < 1");
    }
    out += (alpha[j] - 1.0) * log_q[j];
  }
  return out + std::lgamma(total_alpha);
}

inline double matrix_log_density(const TransitionMatrix& q, const RowHyperparameters& h) {
  require(q.k() == h.k(), ErrorCode::DimensionMismatch, "prior and matrix sizes differ");
  const int k = q.k();
  std::vector<double> lq(k);
  std::vector<double> a(k);
  double out = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      lq[j] = q.log_prob(i, j);
      a[j] = h.alpha(i, j);
    }
    out += dirichlet_log_density(lq, a);
  }
  return out;
}

inline double log_prior_density(const TransitionMatrix& q, const PriorStructure& s) {
  const auto comps = prior_components(s);
  if (comps.size() == 1) return matrix_log_density(q, comps[0]);
  const double lc = matrix_log_density(q, comps[0]);
  const double ld = matrix_log_density(q, comps[1]);
  const double m = std::max(lc, ld);
  if (m == kNegInf) return kNegInf;
  return m + std::log(0.5 * std::exp(lc - m) + 0.5 * std::exp(ld - m));
}

// ---------------------------------------------------------------------------
// Hyperparameter bounds and posterior concentration rate.

struct TheoremBound {
  int k = 0;
  int k_star = 0;  // K* used in the numerator (ᾱ condition)
  int d = 1;
  double alpha_low = 0.0;
  int p = 1;
  double threshold = std::numeric_limits<double>::quiet_NaN();      // bound on pᾱ + (K-p)α̲
  double alpha_bar_min = std::numeric_limits<double>::quiet_NaN();  // implied bound on ᾱ
  double max_feasible_alpha_low = 0.0;
  bool feasible = false;

  // Smallest ᾱ one would actually use: the strict bound plus one.
  double suggested_alpha_bar() const { return alpha_bar_min + 1.0; }
};

// Threshold with separate K* for the numerator and the denominator. The
// conservative bound takes K* = K-1 upstairs and K* = 1 downstairs.
inline TheoremBound alpha_bound_terms(int k, int k_star_numer, int k_star_denom, int d,
                                      double alpha_low, int p) {
  require(k >= 2 && d >= 1 && p >= 1 && p <= k, ErrorCode::InvalidArgument,
          "bound needs k >= 2, d >= 1, 1 <= p <= k");
  require(alpha_low > 0.0, ErrorCode::InvalidArgument, "alpha_low must be positive");
  require(k_star_numer >= 1 && k_star_numer < k && k_star_denom >= 1 && k_star_denom < k,
          ErrorCode::InvalidArgument, "K* must lie in 1..K-1");
  const double kk = k;
  const double ks = k_star_numer;
  const double half_d = 0.5 * d;
  const double kd = k_star_denom;
  const double penalty = (kk - kd) * (kk - kd) - (kk - 2.0 * kd - 1.0);

  TheoremBound out;
  out.k = k;
  out.k_star = k_star_numer;
  out.d = d;
  out.alpha_low = alpha_low;
  out.p = p;
  out.max_feasible_alpha_low = half_d / penalty;
  const double denom = half_d - alpha_low * penalty;
  out.feasible = denom > 0.0;
  if (!out.feasible) return out;
  const double first = ks * (ks - 1.0 + d) + alpha_low * kk * (kk - ks);
  const double second = ks * (d + ks - 1.0) + alpha_low * (ks + 1.0) * (kk - ks - 1.0) + half_d;
  out.threshold = first * second / denom;
  out.alpha_bar_min = (out.threshold - (kk - p) * alpha_low) / p;
  return out;
}

inline TheoremBound require_feasible(TheoremBound b) {
  if (!b.feasible) {
    throw Error(ErrorCode::InfeasibleBound,
                "d/2 <= alpha_low * penalty; alpha_low must be below " +
                    std::to_string(b.max_feasible_alpha_low));
  }
  return b;
}

inline TheoremBound conservative_alpha_bound(int k, int d, double alpha_low, int p = 1) {
  return require_feasible(alpha_bound_terms(k, k - 1, 1, d, alpha_low, p));
}

inline TheoremBound general_alpha_bound(int k, int k_star, int d, double alpha_low, int p = 1) {
  return require_feasible(alpha_bound_terms(k, k_star, k_star, d, alpha_low, p));
}

struct PosteriorRate {
  double a1 = 0.0;
  double a = 0.0;
  double b = 0.0;
  double n_exponent = 0.0;    // v_n = n^n_exponent * (log n)^log_exponent
  double log_exponent = 0.0;
  double rate = 0.0;
};

inline PosteriorRate posterior_rate(int k, int k_star, int d, double alpha_bar, double alpha_low,
                                    int p, double n) {
  require(n >= 2.0, ErrorCode::InvalidArgument, "rate needs n >= 2");
  const auto bound = general_alpha_bound(k, k_star, d, alpha_low, p);
  const double mass = p * alpha_bar + (k - p) * alpha_low;
  if (!(mass > bound.threshold)) {
    throw Error(ErrorCode::InfeasibleBound,
                "p*alpha_bar + (K-p)*alpha_low must exceed " + std::to_string(bound.threshold));
  }
  const double kk = k;
  const double ks = k_star;
  const double shift = kk - 2.0 * ks - 1.0;
  PosteriorRate out;
  out.a1 = kk * (kk - ks) * alpha_low + ks * (ks - 1.0 + d);
  out.a = out.a1 / mass;
  out.b = ks * (d + ks - 1.0) + alpha_low * (ks + 1.0) * (kk - ks - 1.0) + 0.5 * d;
  out.n_exponent = -0.5 * ((1.0 - out.a) * out.b - out.a1) / (0.5 * d + alpha_low * shift);
  out.log_exponent = out.b / (d + 2.0 * alpha_low * shift);
  out.rate = std::pow(n, out.n_exponent) * std::pow(std::log(n), out.log_exponent);
  return out;
}

// ---------------------------------------------------------------------------
// Tempering ladder.

struct TemperLadder {
  std::vector<double> rungs;  // α̲ per chain, rung 0 is the most tempered
  double alpha_bar = 1.0;

  int size() const { return static_cast<int>(rungs.size()); }
  double target() const { return rungs.back(); }
};

// Geometric interpolation from ᾱ down to the target with the last rung pinned
// exactly on the target. A single chain runs at the target itself.
inline TemperLadder tempering_ladder(double alpha_bar, double alpha_target, int j_chains) {
  require(j_chains >= 1, ErrorCode::InvalidArgument, "ladder needs at least one chain");
  require(alpha_target > 0.0 && alpha_target <= alpha_bar, ErrorCode::InvalidArgument,
          "ladder target must lie in (0, alpha_bar]");
  TemperLadder out;
  out.alpha_bar = alpha_bar;
  out.rungs.resize(j_chains);
  const double ratio = alpha_bar / alpha_target;
  for (int j = 0; j < j_chains; ++j) {
    out.rungs[j] = alpha_bar * std::pow(ratio, -static_cast<double>(j) / j_chains);
  }
  out.rungs.back() = alpha_target;
  return out;
}

}  // namespace overhmm
