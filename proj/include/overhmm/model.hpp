#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "overhmm/error.hpp"
#include "overhmm/random.hpp"

namespace overhmm {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kRowSumTolerance = 1e-12;

// Row-stochastic K x K matrix. Log-probabilities are kept alongside the
// probabilities: Dirichlet draws with pseudo-counts near 1/n routinely produce
// entries far below the smallest double, and prior densities need their logs.
class TransitionMatrix {
 public:
  TransitionMatrix() = default;

  explicit TransitionMatrix(Eigen::MatrixXd probs) : probs_(std::move(probs)) {
    require(probs_.rows() == probs_.cols() && probs_.rows() >= 1, ErrorCode::DimensionMismatch,
            "transition matrix must be square with k >= 1");
    for (Eigen::Index i = 0; i < probs_.rows(); ++i) {
      double sum = 0.0;
      for (Eigen::Index j = 0; j < probs_.cols(); ++j) {
        const double v = probs_(i, j);
        require(v >= 0.0 && v <= 1.0, ErrorCode::InvalidArgument,
                "transition probabilities must lie in [0, 1]");
        sum += v;
      }
      if (!(std::abs(sum - 1.0) <= kRowSumTolerance)) {
        throw Error(ErrorCode::InvalidArgument,
                    "transition matrix row " + std::to_string(i + 1) + " does not sum to 1");
      }
    }
    log_probs_ = probs_.array().log().matrix();
  }

  TransitionMatrix(std::initializer_list<std::initializer_list<double>> rows)
      : TransitionMatrix(from_nested(rows)) {}

  // Rows are normalized in log space; any finite row of log-weights is accepted.
  static TransitionMatrix from_log(Eigen::MatrixXd log_weights) {
    require(log_weights.rows() == log_weights.cols() && log_weights.rows() >= 1,
            ErrorCode::DimensionMismatch, "transition matrix must be square with k >= 1");
    TransitionMatrix out;
    const Eigen::Index k = log_weights.rows();
    for (Eigen::Index i = 0; i < k; ++i) {
      // Shift by the row maximum first; that subtraction is exact.
      const double top = log_weights.row(i).maxCoeff();
      require(std::isfinite(top), ErrorCode::NumericalFailure, "row of log-weights is degenerate");
      log_weights.row(i).array() -= top;
      std::vector<double> row(k);
      for (Eigen::Index j = 0; j < k; ++j) row[j] = log_weights(i, j);
      const double norm = log_sum_exp(row);
      require(std::isfinite(norm), ErrorCode::NumericalFailure, "row of log-weights is degenerate");
      for (Eigen::Index j = 0; j < k; ++j) log_weights(i, j) -= norm;
    }
    out.log_probs_ = std::move(log_weights);
    out.probs_ = out.log_probs_.array().exp().matrix();
    return out;
  }

  static TransitionMatrix identity(int k) {
    return TransitionMatrix(Eigen::MatrixXd::Identity(k, k));
  }

  int k() const { return static_cast<int>(probs_.rows()); }
  double operator()(int i, int j) const { return probs_(i, j); }
  double log_prob(int i, int j) const { return log_probs_(i, j); }
  const Eigen::MatrixXd& probs() const { return probs_; }
  const Eigen::MatrixXd& log_probs() const { return log_probs_; }

  // New state a is old state order[a].
  TransitionMatrix permuted(std::span<const int> order) const {
    require(static_cast<int>(order.size()) == k(), ErrorCode::DimensionMismatch,
            "permutation length must equal k");
    TransitionMatrix out;
    out.probs_.resize(k(), k());
    out.log_probs_.resize(k(), k());
    for (int a = 0; a < k(); ++a) {
      for (int b = 0; b < k(); ++b) {
        out.probs_(a, b) = probs_(order[a], order[b]);
        out.log_probs_(a, b) = log_probs_(order[a], order[b]);
      }
    }
    return out;
  }

  // Restriction to a subset of states with each row renormalized.
  TransitionMatrix restricted(std::span<const int> states) const {
    const auto m = static_cast<Eigen::Index>(states.size());
    require(m >= 1, ErrorCode::InvalidArgument, "restriction needs at least one state");
    Eigen::MatrixXd logw(m, m);
    for (Eigen::Index a = 0; a < m; ++a) {
      for (Eigen::Index b = 0; b < m; ++b) logw(a, b) = log_probs_(states[a], states[b]);
      bool any_finite = false;
      for (Eigen::Index b = 0; b < m; ++b) any_finite = any_finite || std::isfinite(logw(a, b));
      // A row with no mass inside the subset falls back to staying put.
      if (!any_finite) logw(a, a) = 0.0;
    }
    return from_log(std::move(logw));
  }

 private:
  static Eigen::MatrixXd from_nested(std::initializer_list<std::initializer_list<double>> rows) {
    const auto k = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd m(k, k);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
      require(static_cast<Eigen::Index>(row.size()) == k, ErrorCode::DimensionMismatch,
              "transition matrix must be square");
      Eigen::Index j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  Eigen::MatrixXd probs_;
  Eigen::MatrixXd log_probs_;
};

struct HmmParams {
  TransitionMatrix transition;
  std::vector<double> means;
  double variance = 1.0;

  int k() const { return transition.k(); }

  void validate() const {
    require(static_cast<int>(means.size()) == transition.k(), ErrorCode::DimensionMismatch,
            "emission means must have one entry per state");
    require(variance > 0.0, ErrorCode::InvalidArgument, "emission variance must be positive");
  }
};

struct StationaryDistribution {
  std::vector<double> probs;

  int k() const { return static_cast<int>(probs.size()); }
  double operator[](int i) const { return probs[i]; }
};

// States are 0-based in memory; serialized forms use 1-based labels.
struct SimulatedDataset {
  std::vector<double> observations;
  std::vector<int> states;
  std::uint64_t seed = 0;

  std::size_t size() const { return observations.size(); }
};

inline double normal_log_density(double y, double mean, double variance = 1.0) {
  const double r = y - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - 0.5 * r * r / variance;
}

inline double stationary_residual(const TransitionMatrix& q, std::span<const double> mu) {
  double worst = 0.0;
  for (int j = 0; j < q.k(); ++j) {
    double v = 0.0;
    for (int i = 0; i < q.k(); ++i) v += mu[i] * q(i, j);
    worst = std::max(worst, std::abs(v - mu[j]));
  }
  return worst;
}

namespace detail {

// Closed communicating classes of the support graph, each sorted ascending,
// ordered by their smallest member.
inline std::vector<std::vector<int>> closed_classes(const TransitionMatrix& q) {
  const int k = q.k();
  std::vector<std::vector<char>> reach(k, std::vector<char>(k, 0));
  for (int i = 0; i < k; ++i) {
    reach[i][i] = 1;
    for (int j = 0; j < k; ++j) {
      if (q(i, j) > 0.0) reach[i][j] = 1;
    }
  }
  for (int m = 0; m < k; ++m) {
    for (int i = 0; i < k; ++i) {
      if (!reach[i][m]) continue;
      for (int j = 0; j < k; ++j) {
        if (reach[m][j]) reach[i][j] = 1;
      }
    }
  }
  std::vector<std::vector<int>> classes;
  std::vector<char> seen(k, 0);
  for (int i = 0; i < k; ++i) {
    if (seen[i]) continue;
    std::vector<int> members;
    for (int j = 0; j < k; ++j) {
      if (reach[i][j] && reach[j][i]) {
        members.push_back(j);
        seen[j] = 1;
      }
    }
    bool closed = true;
    for (int a : members) {
      for (int j = 0; j < k && closed; ++j) {
        if (reach[a][j] && !(reach[j][a])) closed = false;
      }
    }
    if (closed) classes.push_back(std::move(members));
  }
  return classes;
}

// Probability of ending in each closed class, averaged over a uniform start.
inline std::vector<double> absorption_mass(const TransitionMatrix& q,
                                           const std::vector<std::vector<int>>& classes) {
  const int k = q.k();
  std::vector<int> owner(k, -1);
  for (std::size_t c = 0; c < classes.size(); ++c) {
    for (int s : classes[c]) owner[s] = static_cast<int>(c);
  }
  std::vector<int> transient;
  for (int i = 0; i < k; ++i) {
    if (owner[i] < 0) transient.push_back(i);
  }
  std::vector<double> mass(classes.size(), 0.0);
  for (std::size_t c = 0; c < classes.size(); ++c) mass[c] = static_cast<double>(classes[c].size());
  if (!transient.empty()) {
    const auto t = static_cast<Eigen::Index>(transient.size());
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(t, t);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(t, static_cast<Eigen::Index>(classes.size()));
    for (Eigen::Index a = 0; a < t; ++a) {
      for (int j = 0; j < k; ++j) {
        const double v = q(transient[a], j);
        if (owner[j] >= 0) {
          rhs(a, owner[j]) += v;
        } else {
          const auto b = static_cast<Eigen::Index>(
              std::find(transient.begin(), transient.end(), j) - transient.begin());
          lhs(a, b) -= v;
        }
      }
    }
    const Eigen::MatrixXd h = lhs.colPivHouseholderQr().solve(rhs);
    for (Eigen::Index a = 0; a < t; ++a) {
      for (Eigen::Index c = 0; c < h.cols(); ++c) mass[c] += h(a, c);
    }
  }
  for (double& m : mass) m /= static_cast<double>(k);
  return mass;
}

}  // namespace detail

// Solves (Q^T - I) mu = 0 stacked with sum(mu) = 1 by least squares on the
// selected closed class. When Q has several closed classes, the class that
// absorbs the most mass from a uniform start wins; ties go to the class with
// the lowest state index.
inline StationaryDistribution stationary_distribution(const TransitionMatrix& q) {
  const int k = q.k();
  if (k == 1) return {{1.0}};
  const auto classes = detail::closed_classes(q);
  std::size_t chosen = 0;
  if (classes.size() > 1) {
    const auto mass = detail::absorption_mass(q, classes);
    for (std::size_t c = 1; c < classes.size(); ++c) {
      if (mass[c] > mass[chosen] + 1e-12) chosen = c;
    }
  }
  const std::vector<int>& members = classes[chosen];
  const auto m = static_cast<Eigen::Index>(members.size());
  Eigen::MatrixXd a(m + 1, m);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(m + 1);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) a(i, j) = q(members[j], members[i]);
    a(i, i) -= 1.0;
  }
  a.row(m).setOnes();
  b(m) = 1.0;
  const Eigen::VectorXd sol = a.colPivHouseholderQr().solve(b);

  StationaryDistribution out{std::vector<double>(k, 0.0)};
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double v = std::max(0.0, sol(i));
    out.probs[members[i]] = v;
    total += v;
  }
  require(total > 0.0 && std::isfinite(total), ErrorCode::NumericalFailure,
          "stationary solve produced no mass");
  for (double& v : out.probs) v /= total;
  require(stationary_residual(q, out.probs) < 1e-8, ErrorCode::NumericalFailure,
          "stationary solve too ill-conditioned");
  return out;
}

// rho_Q = (1 - sum_j min_i q_ij)^-1; +infinity when all rows coincide.
inline double ergodicity_coefficient(const TransitionMatrix& q) {
  double s = 0.0;
  for (int j = 0; j < q.k(); ++j) s += q.probs().col(j).minCoeff();
  if (s >= 1.0 - 1e-15) return std::numeric_limits<double>::infinity();
  return 1.0 / (1.0 - s);
}

template <typename RNG>
SimulatedDataset simulate_hmm(const HmmParams& params, std::size_t n, RNG& rng) {
  params.validate();
  require(n >= 1, ErrorCode::InvalidArgument, "simulation length must be at least 1");
  const auto mu = stationary_distribution(params.transition);
  const int k = params.k();
  const double sd = std::sqrt(params.variance);
  SimulatedDataset out;
  out.observations.resize(n);
  out.states.resize(n);
  std::vector<double> row(k);
  int x = categorical(std::span<const double>(mu.probs), rng);
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) {
      for (int j = 0; j < k; ++j) row[j] = params.transition(x, j);
      x = categorical(std::span<const double>(row), rng);
    }
    out.states[t] = x;
    out.observations[t] = normal(rng, params.means[x], sd);
  }
  return out;
}

inline SimulatedDataset simulate_hmm(const HmmParams& params, std::size_t n, std::uint64_t seed) {
  auto rng = make_stream(seed, StreamTag::Data);
  auto out = simulate_hmm(params, n, rng);
  out.seed = seed;
  return out;
}

// log g(y_1 | x_1) + sum_t [log q(x_t, x_t+1) + log g(y_t+1 | x_t+1)],
// conditional on x_1 (no initial-distribution term).
inline double complete_log_likelihood(const HmmParams& params, const SimulatedDataset& data) {
  params.validate();
  require(data.observations.size() == data.states.size() && !data.states.empty(),
          ErrorCode::DimensionMismatch, "observations and states must have equal non-zero length");
  const int k = params.k();
  double ll = 0.0;
  for (std::size_t t = 0; t < data.states.size(); ++t) {
    const int x = data.states[t];
    require(x >= 0 && x < k, ErrorCode::LabelOutOfRange, "state label outside 1..K");
    if (t > 0) {
      const double lq = params.transition.log_prob(data.states[t - 1], x);
      if (lq == kNegInf) return kNegInf;
      ll += lq;
    }
    ll += normal_log_density(data.observations[t], params.means[x], params.variance);
  }
  return ll;
}

// Forward recursion with per-step normalization; the log normalizers carry
// the likelihood so long series do not underflow.
inline double observed_log_likelihood(const HmmParams& params, std::span<const double> y,
                                      const StationaryDistribution& init) {
  params.validate();
  const int k = params.k();
  require(init.k() == k, ErrorCode::DimensionMismatch, "initial distribution length must equal k");
  require(!y.empty(), ErrorCode::DimensionMismatch, "observation vector is empty");
  std::vector<double> filt(init.probs);
  std::vector<double> pred(k);
  std::vector<double> logg(k);
  double ll = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (t > 0) {
      std::fill(pred.begin(), pred.end(), 0.0);
      for (int i = 0; i < k; ++i) {
        const double fi = filt[i];
        if (fi == 0.0) continue;
        for (int j = 0; j < k; ++j) pred[j] += fi * params.transition(i, j);
      }
    } else {
      pred = init.probs;
    }
    double shift = kNegInf;
    for (int j = 0; j < k; ++j) {
      logg[j] = normal_log_density(y[t], params.means[j], params.variance);
      shift = std::max(shift, logg[j]);
    }
    double c = 0.0;
    for (int j = 0; j < k; ++j) {
      filt[j] = pred[j] * std::exp(logg[j] - shift);
      c += filt[j];
    }
    if (c <= 0.0) return kNegInf;
    for (double& f : filt) f /= c;
    ll += shift + std::log(c);
  }
  return ll;
}

}  // namespace overhmm
