#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "overhmm/error.hpp"
#include "overhmm/model.hpp"
#include "overhmm/random.hpp"
#include "overhmm/tempering.hpp"

namespace overhmm {

inline int occupied_states(std::span<const int> states, int k) {
  std::vector<char> seen(k, 0);
  int count = 0;
  for (int s : states) {
    require(s >= 0 && s < k, ErrorCode::LabelOutOfRange, "state label outside 1..K");
    if (!seen[s]) {
      seen[s] = 1;
      ++count;
    }
  }
  return count;
}

struct OccupancyProfile {
  std::vector<int> per_iteration;
  std::map<int, double> distribution;  // K_A -> proportion of kept iterations
  int mode = 0;

  double proportion(int k_a) const {
    const auto it = distribution.find(k_a);
    return it == distribution.end() ? 0.0 : it->second;
  }
};

// Ties in the mode go to the smaller K_A.
inline OccupancyProfile occupancy_profile(std::span<const int> k_a_values) {
  require(!k_a_values.empty(), ErrorCode::EmptyTrace, "occupancy of an empty trace");
  OccupancyProfile out;
  out.per_iteration.assign(k_a_values.begin(), k_a_values.end());
  std::map<int, long> counts;
  for (int v : k_a_values) ++counts[v];
  long best = -1;
  for (const auto& [k_a, c] : counts) {
    out.distribution[k_a] = static_cast<double>(c) / static_cast<double>(k_a_values.size());
    if (c > best) {
      best = c;
      out.mode = k_a;
    }
  }
  return out;
}

inline OccupancyProfile occupancy_profile(const McmcTrace& trace) {
  require(!trace.empty(), ErrorCode::EmptyTrace, "occupancy of an empty trace");
  std::vector<int> values;
  values.reserve(trace.records.size());
  for (const auto& r : trace.records) values.push_back(r.k_a);
  return occupancy_profile(values);
}

// ---------------------------------------------------------------------------
// Modal model extraction and relabeling.

struct ModalRecord {
  long iteration = 0;
  TransitionMatrix q;            // occupied block, rows renormalized
  std::vector<double> weights;   // stationary mass of each occupied state under the full Q
  std::vector<double> means;
  std::vector<int> labels;       // original label of each compacted state
};

struct ModalTrace {
  int k_a = 0;
  std::size_t n = 0;
  std::vector<ModalRecord> records;
  std::vector<AllocationRecord> allocations;  // compacted labels

  const ModalRecord* find(long iteration) const {
    const auto it = std::lower_bound(records.begin(), records.end(), iteration,
                                     [](const ModalRecord& r, long m) { return r.iteration < m; });
    return it != records.end() && it->iteration == iteration ? &*it : nullptr;
  }
};

inline ModalTrace extract_modal_model(const McmcTrace& trace, int k_a) {
  require(!trace.empty(), ErrorCode::EmptyTrace, "cannot extract from an empty trace");
  ModalTrace out;
  out.k_a = k_a;
  out.n = trace.n;
  std::map<long, std::vector<int>> remap;  // iteration -> old label -> compacted label
  for (const auto& r : trace.records) {
    if (r.k_a != k_a) continue;
    ModalRecord m;
    m.iteration = r.iteration;
    std::vector<int> old_to_new(trace.k, -1);
    for (int s = 0; s < trace.k; ++s) {
      if (r.counts[s] > 0) {
        old_to_new[s] = static_cast<int>(m.labels.size());
        m.labels.push_back(s);
      }
    }
    const TransitionMatrix full(r.q);
    const auto mu = stationary_distribution(full);
    m.q = full.restricted(m.labels);
    for (int s : m.labels) {
      m.weights.push_back(mu[s]);
      m.means.push_back(r.means[s]);
    }
    remap.emplace(r.iteration, std::move(old_to_new));
    out.records.push_back(std::move(m));
  }
  if (out.records.empty()) {
    throw Error(ErrorCode::NoSuchModel,
                "no kept iteration has " + std::to_string(k_a) + " occupied states");
  }
  for (const auto& a : trace.allocations) {
    const auto it = remap.find(a.iteration);
    if (it == remap.end()) continue;
    AllocationRecord c{a.iteration, std::vector<int>(a.states.size())};
    for (std::size_t t = 0; t < a.states.size(); ++t) c.states[t] = it->second[a.states[t]];
    out.allocations.push_back(std::move(c));
  }
  return out;
}

// Orders states within every iteration by increasing emission mean and
// applies the same permutation to Q, the weights and the allocations.
inline ModalTrace relabel(ModalTrace trace) {
  std::map<long, std::vector<int>> inverse;
  for (auto& r : trace.records) {
    std::vector<int> order(r.means.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return r.means[a] < r.means[b]; });
    std::vector<int> inv(order.size());
    for (std::size_t a = 0; a < order.size(); ++a) inv[order[a]] = static_cast<int>(a);
    r.q = r.q.permuted(order);
    auto permute = [&](auto& v) {
      auto copy = v;
      for (std::size_t a = 0; a < order.size(); ++a) v[a] = copy[order[a]];
    };
    permute(r.weights);
    permute(r.means);
    permute(r.labels);
    inverse.emplace(r.iteration, std::move(inv));
  }
  for (auto& a : trace.allocations) {
    const auto& inv = inverse.at(a.iteration);
    for (int& s : a.states) s = inv[s];
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Summaries.

// Linear interpolation between order statistics.
inline double quantile(std::vector<double> values, double prob) {
  require(!values.empty(), ErrorCode::EmptyTrace, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(values.size() - 1, lo + 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct Estimate {
  double mean = 0.0;
  double lower = 0.0;  // 2.5%
  double upper = 0.0;  // 97.5%
};

inline Estimate estimate(const std::vector<double>& draws) {
  Estimate e;
  e.mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(draws.size());
  e.lower = quantile(draws, 0.025);
  e.upper = quantile(draws, 0.975);
  return e;
}

struct StateEstimate {
  Estimate weight;  // stationary probability mu_k
  Estimate mean;    // emission mean gamma_k
};

inline std::vector<StateEstimate> summarize(const ModalTrace& trace) {
  require(!trace.records.empty(), ErrorCode::EmptyTrace, "summary of an empty modal trace");
  std::vector<StateEstimate> out(trace.k_a);
  std::vector<double> mu(trace.records.size());
  std::vector<double> gamma(trace.records.size());
  for (int s = 0; s < trace.k_a; ++s) {
    for (std::size_t m = 0; m < trace.records.size(); ++m) {
      mu[m] = trace.records[m].weights[s];
      gamma[m] = trace.records[m].means[s];
    }
    out[s].weight = estimate(mu);
    out[s].mean = estimate(gamma);
  }
  return out;
}

// Maximum-weight assignment of rows to columns (Hungarian method on the
// padded square cost matrix). Returns the column matched to each row, or -1.
inline std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weight) {
  const int rows = static_cast<int>(weight.size());
  const int cols = rows > 0 ? static_cast<int>(weight[0].size()) : 0;
  const int n = std::max(rows, cols);
  double top = 0.0;
  for (const auto& r : weight) {
    for (double w : r) top = std::max(top, w);
  }
  auto cost = [&](int i, int j) {
    const double w = (i < rows && j < cols) ? weight[i][j] : 0.0;
    return top - w;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> match(rows, -1);
  for (int j = 1; j <= n; ++j) {
    if (p[j] >= 1 && p[j] <= rows && j <= cols) match[p[j] - 1] = j - 1;
  }
  return match;
}

struct FitMetrics {
  std::vector<int> map_states;        // per-t most frequent compacted label
  std::optional<double> reclass_pct;  // fraction matching truth under the best label matching
  double mae = 0.0;                   // sum_t |y_t - gamma_hat(x_hat_t)|
  double mse = 0.0;                   // sum_t (y_t - gamma_hat(x_hat_t))^2
};

inline FitMetrics fit_metrics(std::span<const double> y, std::optional<std::span<const int>> truth,
                              const ModalTrace& trace, const std::vector<StateEstimate>& est) {
  require(trace.n == y.size(), ErrorCode::DimensionMismatch, "trace length differs from data");
  require(static_cast<int>(est.size()) == trace.k_a, ErrorCode::DimensionMismatch,
          "one estimate per occupied state required");
  require(!trace.allocations.empty(), ErrorCode::EmptyTrace,
          "no allocation vectors were kept for the modal model");
  const std::size_t n = y.size();
  const int k = trace.k_a;
  std::vector<int> freq(n * k, 0);
  for (const auto& a : trace.allocations) {
    require(a.states.size() == n, ErrorCode::DimensionMismatch, "allocation length differs");
    for (std::size_t t = 0; t < n; ++t) ++freq[t * k + a.states[t]];
  }
  FitMetrics out;
  out.map_states.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const int* row = freq.data() + t * k;
    out.map_states[t] = static_cast<int>(std::max_element(row, row + k) - row);
    const double r = y[t] - est[out.map_states[t]].mean.mean;
    out.mae += std::abs(r);
    out.mse += r * r;
  }
  if (truth) {
    require(truth->size() == n, ErrorCode::DimensionMismatch, "truth length differs from data");
    const int k_true = *std::max_element(truth->begin(), truth->end()) + 1;
    std::vector<std::vector<double>> agree(k, std::vector<double>(k_true, 0.0));
    for (std::size_t t = 0; t < n; ++t) agree[out.map_states[t]][(*truth)[t]] += 1.0;
    const auto match = max_weight_assignment(agree);
    double hits = 0.0;
    for (int a = 0; a < k; ++a) {
      if (match[a] >= 0) hits += agree[a][match[a]];
    }
    out.reclass_pct = hits / static_cast<double>(n);
  }
  return out;
}

struct PredictiveCheck {
  double concordance = 0.0;  // share of y_t inside the central 95% of y_t^rep
  double mape = 0.0;         // replicate average of sum_t |y_t - y_t^rep|
  double mspe = 0.0;         // replicate average of sum_t (y_t - y_t^rep)^2
  int replicates = 0;
};

// Each replicate resamples one kept iteration and simulates a series of the
// data's length from its (Q, gamma). y_t counts as an outlier when it falls in
// either 2.5% tail of its replicate distribution.
inline PredictiveCheck posterior_predictive(const ModalTrace& trace, std::span<const double> y,
                                            int replicates, std::uint64_t seed, int threads = 1) {
  require(!trace.records.empty(), ErrorCode::EmptyTrace, "predictive check of an empty trace");
  require(replicates >= 1, ErrorCode::InvalidArgument, "need at least one replicate");
  const std::size_t n = y.size();
  std::vector<StationaryDistribution> init(trace.records.size());
  for (std::size_t m = 0; m < trace.records.size(); ++m) {
    init[m] = stationary_distribution(trace.records[m].q);
  }
  std::vector<double> abs_sum(replicates, 0.0);
  std::vector<double> sq_sum(replicates, 0.0);
  std::vector<std::vector<int>> below_parts(std::max(1, threads), std::vector<int>(n, 0));
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
  for (int r = 0; r < replicates; ++r) {
#ifdef _OPENMP
    auto& below = below_parts[omp_get_thread_num()];
#else
    auto& below = below_parts[0];
#endif
    Rng rng = make_stream(seed, StreamTag::Predictive, static_cast<std::uint64_t>(r));
    const auto pick = std::min(trace.records.size() - 1,
                               static_cast<std::size_t>(uniform_open(rng) * trace.records.size()));
    const ModalRecord& rec = trace.records[pick];
    const int k = rec.q.k();
    int x = categorical(std::span<const double>(init[pick].probs), rng);
    std::vector<double> row(k);
    for (std::size_t t = 0; t < n; ++t) {
      if (t > 0) {
        for (int j = 0; j < k; ++j) row[j] = rec.q(x, j);
        x = categorical(std::span<const double>(row), rng);
      }
      const double rep = normal(rng, rec.means[x], 1.0);
      const double d = y[t] - rep;
      abs_sum[r] += std::abs(d);
      sq_sum[r] += d * d;
      if (rep < y[t]) ++below[t];
    }
  }
  PredictiveCheck out;
  out.replicates = replicates;
  long inside = 0;
  for (std::size_t t = 0; t < n; ++t) {
    long b = 0;
    for (const auto& part : below_parts) b += part[t];
    const double frac = static_cast<double>(b) / replicates;
    if (frac >= 0.025 && frac <= 0.975) ++inside;
  }
  out.concordance = static_cast<double>(inside) / static_cast<double>(n);
  for (int r = 0; r < replicates; ++r) {
    out.mape += abs_sum[r];
    out.mspe += sq_sum[r];
  }
  out.mape /= replicates;
  out.mspe /= replicates;
  return out;
}

// ---------------------------------------------------------------------------
// Pooled (mu_k, gamma_k) density over every state and kept iteration.

struct DensityCell {
  double mu = 0.0;     // bin centre
  double gamma = 0.0;  // bin centre
  double density = 0.0;
};

struct DensityGrid {
  int mu_bins = 0;
  int gamma_bins = 0;
  std::vector<DensityCell> cells;  // mu-major
};

inline DensityGrid density_grid(const McmcTrace& trace, int mu_bins = 50, int gamma_bins = 100) {
  require(!trace.empty(), ErrorCode::EmptyTrace, "density grid of an empty trace");
  require(mu_bins >= 1 && gamma_bins >= 1, ErrorCode::InvalidArgument, "bins must be positive");
  std::vector<std::pair<double, double>> points;
  points.reserve(trace.records.size() * trace.k);
  for (const auto& r : trace.records) {
    const auto mu = stationary_distribution(TransitionMatrix(r.q));
    for (int s = 0; s < trace.k; ++s) points.emplace_back(mu[s], r.means[s]);
  }
  double g_lo = points.front().second;
  double g_hi = g_lo;
  for (const auto& [m, g] : points) {
    g_lo = std::min(g_lo, g);
    g_hi = std::max(g_hi, g);
  }
  if (g_hi <= g_lo) g_hi = g_lo + 1.0;
  const double mu_w = 1.0 / mu_bins;
  const double g_w = (g_hi - g_lo) / gamma_bins;
  std::vector<double> hist(static_cast<std::size_t>(mu_bins) * gamma_bins, 0.0);
  for (const auto& [m, g] : points) {
    const int a = std::clamp(static_cast<int>(m / mu_w), 0, mu_bins - 1);
    const int b = std::clamp(static_cast<int>((g - g_lo) / g_w), 0, gamma_bins - 1);
    hist[static_cast<std::size_t>(a) * gamma_bins + b] += 1.0;
  }
  DensityGrid out{mu_bins, gamma_bins, {}};
  out.cells.reserve(hist.size());
  const double scale = 1.0 / (static_cast<double>(points.size()) * mu_w * g_w);
  for (int a = 0; a < mu_bins; ++a) {
    for (int b = 0; b < gamma_bins; ++b) {
      out.cells.push_back({(a + 0.5) * mu_w, g_lo + (b + 0.5) * g_w,
                           hist[static_cast<std::size_t>(a) * gamma_bins + b] * scale});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

struct FitReport {
  OccupancyProfile occupancy;
  int k_hat = 0;
  double p_k_hat = 0.0;
  std::vector<StateEstimate> estimates;
  FitMetrics metrics;
  PredictiveCheck predictive;
};

// occupancy -> modal extraction -> relabel -> summary -> fit metrics ->
// posterior predictive.
inline FitReport analyze(std::span<const double> y, std::optional<std::span<const int>> truth,
                         const McmcTrace& trace, int replicates, std::uint64_t seed,
                         int threads = 1) {
  FitReport out;
  out.occupancy = occupancy_profile(trace);
  out.k_hat = out.occupancy.mode;
  out.p_k_hat = out.occupancy.proportion(out.k_hat);
  const ModalTrace modal = relabel(extract_modal_model(trace, out.k_hat));
  out.estimates = summarize(modal);
  out.metrics = fit_metrics(y, truth, modal, out.estimates);
  out.predictive = posterior_predictive(modal, y, replicates, seed, threads);
  return out;
}

}  // namespace overhmm
