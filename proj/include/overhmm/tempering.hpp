#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "overhmm/error.hpp"
#include "overhmm/model.hpp"
#include "overhmm/priors.hpp"
#include "overhmm/random.hpp"
#include "overhmm/sampler.hpp"

namespace overhmm {

// Swap proposals between rung z and z+1 are tallied under pair index z.
struct SwapLedger {
  std::vector<long> attempts;
  std::vector<long> accepts;

  SwapLedger() = default;
  explicit SwapLedger(int chains)
      : attempts(std::max(0, chains - 1), 0), accepts(std::max(0, chains - 1), 0) {}

  int pairs() const { return static_cast<int>(attempts.size()); }
  double rate(int pair) const {
    return attempts[pair] > 0 ? static_cast<double>(accepts[pair]) / attempts[pair] : 0.0;
  }
};

struct PptConfig {
  int chains = 30;
  long iterations = 20000;
  long burn_in = 10000;
  TemperLadder ladder;
  PriorStructure base;
  std::uint64_t seed = 1;
  InitKind init = InitKind::Uniform;
  int allocation_thin = 10;  // keep every n-th post-burn-in allocation vector
  int threads = 1;
  double min_swap_rate = 0.01;
  bool strict_swaps = false;  // throw instead of warning on a poorly mixing pair

  void validate() const {
    require(chains >= 1, ErrorCode::ConfigError, "need at least one chain");
    require(iterations >= 1, ErrorCode::ConfigError, "iterations must be positive");
    require(burn_in >= 0 && burn_in < iterations, ErrorCode::ConfigError,
            "burn_in must be non-negative and below iterations");
    require(ladder.size() == chains, ErrorCode::ConfigError, "ladder length must equal chains");
    require(allocation_thin >= 1, ErrorCode::ConfigError, "allocation_thin must be >= 1");
    base.validate();
    for (double r : ladder.rungs) {
      require(r > 0.0 && r <= base.alpha_bar, ErrorCode::ConfigError,
              "ladder rungs must lie in (0, alpha_bar]");
    }
  }

  PriorStructure structure_for(int rung) const { return base.with_alpha_low(ladder.rungs[rung]); }
};

// log A for exchanging configurations between two rungs: only prior
// densities of Q enter, since all rungs share the likelihood and the emission
// prior. Grouped so that identical rungs or identical matrices give exactly 0
// and swapping the arguments gives exactly the same value.
inline double swap_log_acceptance(const TransitionMatrix& q_i, const TransitionMatrix& q_j,
                                  const PriorStructure& s_i, const PriorStructure& s_j) {
  require(q_i.k() == q_j.k() && s_i.k == s_j.k && s_i.k == q_i.k(), ErrorCode::DimensionMismatch,
          "swap partners must share k");
  const double under_j = log_prior_density(q_i, s_j) - log_prior_density(q_j, s_j);
  const double under_i = log_prior_density(q_j, s_i) - log_prior_density(q_i, s_i);
  return under_j + under_i;
}

inline void exchange_configurations(ChainState& a, ChainState& b) {
  std::swap(a.states, b.states);
  std::swap(a.transition, b.transition);
  std::swap(a.stationary, b.stationary);
  std::swap(a.means, b.means);
  std::swap(a.component, b.component);
}

// Non-overlapping adjacent pairs starting at a random parity; rungs stay in
// their slots and the configurations move.
template <typename RNG>
void tempering_sweep(std::vector<ChainState>& chains, SwapLedger& ledger,
                     std::span<const PriorStructure> structures, RNG& rng) {
  const int j = static_cast<int>(chains.size());
  if (j < 2) return;
  require(static_cast<int>(structures.size()) == j && ledger.pairs() == j - 1,
          ErrorCode::DimensionMismatch, "ledger and structures must match the chain count");
  const int z0 = uniform_open(rng) < 0.5 ? 0 : 1;
  for (int z = z0; z + 1 < j; z += 2) {
    const double log_a = swap_log_acceptance(chains[z].transition, chains[z + 1].transition,
                                             structures[z], structures[z + 1]);
    ++ledger.attempts[z];
    const bool accept = log_a >= 0.0 || std::log(uniform_open(rng)) < log_a;
    if (accept) {
      ++ledger.accepts[z];
      exchange_configurations(chains[z], chains[z + 1]);
    }
  }
}

// ---------------------------------------------------------------------------
// Traces.

struct TraceRecord {
  long iteration = 0;
  Eigen::MatrixXd q;
  std::vector<double> means;
  std::vector<int> counts;  // allocations per state
  int k_a = 0;
  int component = -1;
};

struct AllocationRecord {
  long iteration = 0;
  std::vector<int> states;
};

// Post-burn-in draws of the target chain.
struct McmcTrace {
  int k = 0;
  std::size_t n = 0;
  std::vector<TraceRecord> records;
  std::vector<AllocationRecord> allocations;

  bool empty() const { return records.empty(); }
};

struct PptResult {
  McmcTrace trace;
  SwapLedger ledger;  // post-burn-in swap proposals
  std::vector<std::string> warnings;
  long target_mh_accepts = 0;
  double seconds = 0.0;
};

inline void record_state(McmcTrace& trace, const ChainState& c, long iteration, long kept,
                         int thin) {
  TraceRecord r;
  r.iteration = iteration;
  r.q = c.transition.probs();
  r.means = c.means;
  r.counts.assign(c.k(), 0);
  for (int s : c.states) ++r.counts[s];
  for (int v : r.counts) r.k_a += v > 0 ? 1 : 0;
  r.component = c.component;
  trace.records.push_back(std::move(r));
  if (kept % thin == 0) trace.allocations.push_back({iteration, c.states});
}

inline void check_swap_rates(const SwapLedger& ledger, const PptConfig& config,
                             std::vector<std::string>& warnings) {
  for (int z = 0; z < ledger.pairs(); ++z) {
    if (ledger.attempts[z] == 0 || ledger.rate(z) >= config.min_swap_rate) continue;
    const std::string msg = "swap rate between rungs " + std::to_string(z + 1) + " and " +
                            std::to_string(z + 2) + " is " + std::to_string(ledger.rate(z)) +
                            " (" + std::to_string(ledger.accepts[z]) + "/" +
                            std::to_string(ledger.attempts[z]) + ")";
    if (config.strict_swaps) throw Error(ErrorCode::PoorMixing, msg);
    warnings.push_back(msg);
  }
}

// Gibbs sweeps on every rung (in parallel when threads > 1), then one
// tempering sweep. Chain j draws from stream (seed, Chain, j) and swap
// decisions from (seed, Swap, 0), so the output does not depend on threads.
inline PptResult ppt_run(std::span<const double> y, const PptConfig& config,
                         const EmissionPrior& eprior) {
  config.validate();
  eprior.validate();
  const auto start = std::chrono::steady_clock::now();
  const int j = config.chains;
  std::vector<PriorStructure> structures(j);
  std::vector<Rng> rngs;
  rngs.reserve(j);
  for (int c = 0; c < j; ++c) {
    structures[c] = config.structure_for(c);
    rngs.push_back(make_stream(config.seed, StreamTag::Chain, static_cast<std::uint64_t>(c)));
  }
  Rng swap_rng = make_stream(config.seed, StreamTag::Swap);

  std::vector<ChainState> chains(j);
  for (int c = 0; c < j; ++c) {
    chains[c] = initial_chain_state(y, structures[c], eprior, config.init, rngs[c]);
    chains[c].rung = c;
  }

  PptResult result;
  result.trace.k = config.base.k;
  result.trace.n = y.size();
  result.trace.records.reserve(static_cast<std::size_t>(config.iterations - config.burn_in));
  result.ledger = SwapLedger(j);
  SwapLedger burn_ledger(j);
  std::vector<std::exception_ptr> failures(j);

  for (long m = 1; m <= config.iterations; ++m) {
#pragma omp parallel for num_threads(config.threads) schedule(static) if (config.threads > 1)
    for (int c = 0; c < j; ++c) {
      try {
        chains[c] = gibbs_sweep(std::move(chains[c]), structures[c], eprior, y, rngs[c]);
      } catch (...) {
        failures[c] = std::current_exception();
      }
    }
    for (auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
    const bool kept = m > config.burn_in;
    tempering_sweep(chains, kept ? result.ledger : burn_ledger, structures, swap_rng);
    if (kept) {
      record_state(result.trace, chains.back(), m, m - config.burn_in - 1, config.allocation_thin);
    }
  }
  result.target_mh_accepts = chains.back().mh_accepts;
  check_swap_rates(result.ledger, config, result.warnings);
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// Untempered blocked Gibbs sampler. Shares the (seed, Chain, 0) stream with
// the first PPT rung, so ppt_run with a single chain reproduces it exactly.
inline PptResult run_gibbs(std::span<const double> y, const PriorStructure& structure,
                           const EmissionPrior& eprior, long iterations, long burn_in,
                           std::uint64_t seed, InitKind init = InitKind::Uniform,
                           int allocation_thin = 10) {
  structure.validate();
  eprior.validate();
  require(burn_in >= 0 && burn_in < iterations, ErrorCode::ConfigError,
          "burn_in must be non-negative and below iterations");
  const auto start = std::chrono::steady_clock::now();
  Rng rng = make_stream(seed, StreamTag::Chain, 0);
  ChainState chain = initial_chain_state(y, structure, eprior, init, rng);
  PptResult result;
  result.trace.k = structure.k;
  result.trace.n = y.size();
  result.ledger = SwapLedger(1);
  for (long m = 1; m <= iterations; ++m) {
    chain = gibbs_sweep(std::move(chain), structure, eprior, y, rng);
    if (m > burn_in) record_state(result.trace, chain, m, m - burn_in - 1, allocation_thin);
  }
  result.target_mh_accepts = chain.mh_accepts;
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace overhmm
