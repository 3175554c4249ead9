#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "overhmm/analysis.hpp"

using namespace overhmm;

namespace {

TraceRecord make_record(long it, const Eigen::MatrixXd& q, std::vector<double> means,
                        std::vector<int> counts) {
  TraceRecord r;
  r.iteration = it;
  r.q = q;
  r.means = std::move(means);
  r.counts = std::move(counts);
  for (int c : r.counts) r.k_a += c > 0 ? 1 : 0;
  return r;
}

// Trace whose K_A follows the given sequence; states beyond K_A are empty.
McmcTrace trace_with_occupancy(const std::vector<int>& k_a, int k) {
  McmcTrace t;
  t.k = k;
  t.n = 10;
  const Eigen::MatrixXd q = Eigen::MatrixXd::Constant(k, k, 1.0 / k);
  for (std::size_t m = 0; m < k_a.size(); ++m) {
    std::vector<int> counts(k, 0);
    for (int s = 0; s < k_a[m]; ++s) counts[s] = 1;
    counts[0] += 10 - k_a[m];
    std::vector<double> means(k);
    for (int s = 0; s < k; ++s) means[s] = s;
    t.records.push_back(make_record(static_cast<long>(m) + 1, q, means, counts));
  }
  return t;
}

Eigen::MatrixXd three_state_q() {
  Eigen::MatrixXd q(3, 3);
  q << 0.7, 0.2, 0.1, 0.3, 0.5, 0.2, 0.25, 0.25, 0.5;
  return q;
}

}  // namespace

TEST(OccupiedStates, Examples) {
  EXPECT_EQ(occupied_states(std::vector<int>{0, 0, 0}, 4), 1);
  EXPECT_EQ(occupied_states(std::vector<int>{0, 2, 2, 1}, 4), 3);
  EXPECT_EQ(occupied_states(std::vector<int>{3, 1, 0, 2}, 4), 4);
  EXPECT_THROW(occupied_states(std::vector<int>{0, 4}, 4), Error);
}

TEST(OccupiedStates, InvariantUnderRelabeling) {
  std::mt19937_64 gen(1);
  std::uniform_int_distribution<int> lab(0, 5);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<int> x(20);
    for (int& v : x) v = lab(gen);
    std::vector<int> perm = {0, 1, 2, 3, 4, 5};
    std::shuffle(perm.begin(), perm.end(), gen);
    std::vector<int> y = x;
    for (int& v : y) v = perm[v];
    EXPECT_EQ(occupied_states(x, 6), occupied_states(y, 6));
  }
}

TEST(Occupancy, ConstantTrace) {
  const auto p = occupancy_profile(trace_with_occupancy(std::vector<int>(50, 2), 4));
  EXPECT_EQ(p.mode, 2);
  EXPECT_DOUBLE_EQ(p.proportion(2), 1.0);
}

TEST(Occupancy, ProportionsAndMode) {
  std::vector<int> k_a(81, 3);
  k_a.insert(k_a.end(), 17, 4);
  k_a.insert(k_a.end(), 2, 5);
  const auto p = occupancy_profile(k_a);
  EXPECT_EQ(p.mode, 3);
  EXPECT_NEAR(p.proportion(3), 0.81, 1e-15);
  EXPECT_NEAR(p.proportion(4), 0.17, 1e-15);
  EXPECT_NEAR(p.proportion(5), 0.02, 1e-15);
  EXPECT_EQ(p.proportion(6), 0.0);
  double total = 0.0;
  for (const auto& [k, v] : p.distribution) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Occupancy, TieGoesToFewerStates) {
  std::vector<int> k_a = {4, 3, 4, 3};
  EXPECT_EQ(occupancy_profile(k_a).mode, 3);
}

TEST(Occupancy, EmptyTraceThrows) {
  try {
    occupancy_profile(McmcTrace{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyTrace);
  }
}

TEST(ModalExtraction, KeepsMatchingIterations) {
  std::vector<int> k_a;
  for (int m = 0; m < 200; ++m) k_a.push_back(m % 5 == 0 ? 3 : 2);
  const auto t = trace_with_occupancy(k_a, 4);
  const auto modal = extract_modal_model(t, 2);
  EXPECT_EQ(modal.records.size(), 160u);
  EXPECT_EQ(static_cast<double>(modal.records.size()),
            std::round(occupancy_profile(t).proportion(2) * 200));
  EXPECT_EQ(extract_modal_model(t, 3).records.size(), 40u);
  try {
    extract_modal_model(t, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoSuchModel);
  }
}

TEST(ModalExtraction, CompactsOccupiedStates) {
  // K = 4 with states 2 and 4 (0-based 1 and 3) occupied
  McmcTrace t;
  t.k = 4;
  t.n = 4;
  Eigen::MatrixXd q(4, 4);
  q << 0.1, 0.4, 0.1, 0.4, 0.2, 0.5, 0.1, 0.2, 0.25, 0.25, 0.25, 0.25, 0.1, 0.3, 0.2, 0.4;
  t.records.push_back(make_record(7, q, {9.0, -1.0, 4.0, 2.0}, {0, 3, 0, 1}));
  t.allocations.push_back({7, {1, 1, 3, 1}});
  const auto modal = extract_modal_model(t, 2);
  ASSERT_EQ(modal.records.size(), 1u);
  const auto& r = modal.records[0];
  EXPECT_EQ(r.labels, (std::vector<int>{1, 3}));
  EXPECT_EQ(r.means, (std::vector<double>{-1.0, 2.0}));
  // restricted block renormalized: row 2 is (0.5, 0.2) / 0.7
  EXPECT_NEAR(r.q(0, 0), 5.0 / 7.0, 1e-14);
  EXPECT_NEAR(r.q(1, 1), 0.4 / 0.7, 1e-14);
  const auto mu = stationary_distribution(TransitionMatrix(q));
  EXPECT_DOUBLE_EQ(r.weights[0], mu[1]);
  EXPECT_DOUBLE_EQ(r.weights[1], mu[3]);
  EXPECT_EQ(modal.allocations[0].states, (std::vector<int>{0, 0, 1, 0}));
}

TEST(Relabel, SortsByMeanAndPermutesConsistently) {
  ModalTrace t;
  t.k_a = 2;
  t.n = 3;
  ModalRecord r;
  r.iteration = 1;
  r.q = TransitionMatrix({{0.9, 0.1}, {0.4, 0.6}});
  r.weights = {0.8, 0.2};
  r.means = {3.0, -1.0};
  r.labels = {0, 2};
  t.records.push_back(r);
  t.allocations.push_back({1, {0, 1, 1}});
  const auto out = relabel(t);
  const auto& s = out.records[0];
  EXPECT_EQ(s.means, (std::vector<double>{-1.0, 3.0}));
  EXPECT_EQ(s.weights, (std::vector<double>{0.2, 0.8}));
  EXPECT_EQ(s.labels, (std::vector<int>{2, 0}));
  EXPECT_DOUBLE_EQ(s.q(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(s.q(0, 1), 0.4);
  EXPECT_DOUBLE_EQ(s.q(1, 0), 0.1);
  EXPECT_EQ(out.allocations[0].states, (std::vector<int>{1, 0, 0}));
}

TEST(Relabel, IdempotentAndLikelihoodPreserving) {
  std::mt19937_64 gen(2);
  std::normal_distribution<double> nd(0.0, 3.0);
  std::gamma_distribution<double> gd(1.0, 1.0);
  const std::vector<double> y = {0.3, -2.0, 4.1, 1.0, 0.0, 2.2};
  ModalTrace t;
  t.k_a = 3;
  t.n = y.size();
  for (int m = 0; m < 50; ++m) {
    ModalRecord r;
    r.iteration = m;
    Eigen::MatrixXd p(3, 3);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) p(i, j) = gd(gen) + 0.01;
      p.row(i) /= p.row(i).sum();
    }
    r.q = TransitionMatrix(p);
    r.weights = stationary_distribution(r.q).probs;
    r.means = {nd(gen), nd(gen), nd(gen)};
    r.labels = {0, 1, 2};
    t.records.push_back(r);
  }
  const auto once = relabel(t);
  const auto twice = relabel(once);
  for (std::size_t m = 0; m < t.records.size(); ++m) {
    const auto& a = once.records[m];
    EXPECT_TRUE(std::is_sorted(a.means.begin(), a.means.end()));
    EXPECT_EQ(a.means, twice.records[m].means);
    EXPECT_EQ(a.q.probs(), twice.records[m].q.probs());
    EXPECT_EQ(a.weights, twice.records[m].weights);
    const double before = observed_log_likelihood(HmmParams{t.records[m].q, t.records[m].means}, y,
                                                  stationary_distribution(t.records[m].q));
    const double after = observed_log_likelihood(HmmParams{a.q, a.means}, y, stationary_distribution(a.q));
    EXPECT_NEAR(before, after, 1e-12 * std::abs(before));
  }
}

TEST(Summary, NormalQuantiles) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd;
  std::vector<double> draws(10000);
  for (double& v : draws) v = nd(gen);
  const auto e = estimate(draws);
  EXPECT_NEAR(e.lower, -1.96, 0.08);
  EXPECT_NEAR(e.upper, 1.96, 0.08);
  EXPECT_NEAR(e.mean, 0.0, 0.05);
}

TEST(Summary, QuantileInterpolates) {
  EXPECT_DOUBLE_EQ(quantile({1.0, 2.0, 3.0, 4.0}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile({4.0, 1.0, 3.0, 2.0}, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(quantile({5.0}, 0.025), 5.0);
  EXPECT_THROW(quantile({}, 0.5), Error);
}

TEST(Summary, IdenticalIterationsCollapse) {
  ModalTrace t;
  t.k_a = 2;
  for (int m = 0; m < 10; ++m) t.records.push_back({m, TransitionMatrix({{0.5, 0.5}, {0.5, 0.5}}), {0.5, 0.5}, {-1.0, 2.0}, {0, 1}});
  const auto s = summarize(t);
  for (int k = 0; k < 2; ++k) {
    EXPECT_DOUBLE_EQ(s[k].weight.lower, 0.5);
    EXPECT_DOUBLE_EQ(s[k].weight.upper, 0.5);
    EXPECT_DOUBLE_EQ(s[k].mean.lower, s[k].mean.mean);
    EXPECT_DOUBLE_EQ(s[k].mean.upper, s[k].mean.mean);
  }
}

TEST(Assignment, FindsMaximumAgreement) {
  const std::vector<std::vector<double>> w = {{1, 5, 0}, {4, 4, 0}, {0, 0, 3}};
  EXPECT_EQ(max_weight_assignment(w), (std::vector<int>{1, 0, 2}));
  // more rows than columns: one row left unmatched
  const std::vector<std::vector<double>> tall = {{2, 0}, {0, 1}, {3, 0}};
  EXPECT_EQ(max_weight_assignment(tall), (std::vector<int>{-1, 1, 0}));
}

TEST(Assignment, MatchesBruteForce) {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> u(0, 10);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<std::vector<double>> w(4, std::vector<double>(4));
    for (auto& r : w) {
      for (double& v : r) v = u(gen);
    }
    std::vector<int> perm = {0, 1, 2, 3};
    double best = 0.0;
    do {
      double s = 0.0;
      for (int i = 0; i < 4; ++i) s += w[i][perm[i]];
      best = std::max(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    const auto m = max_weight_assignment(w);
    double got = 0.0;
    for (int i = 0; i < 4; ++i) got += w[i][m[i]];
    EXPECT_NEAR(got, best, 1e-9);
  }
}

namespace {

ModalTrace fixed_modal(const std::vector<std::vector<int>>& allocations,
                       std::vector<double> means, std::size_t n) {
  ModalTrace t;
  t.k_a = static_cast<int>(means.size());
  t.n = n;
  Eigen::MatrixXd q = Eigen::MatrixXd::Constant(t.k_a, t.k_a, 1.0 / t.k_a);
  for (std::size_t m = 0; m < allocations.size(); ++m) {
    std::vector<int> labels(t.k_a);
    std::iota(labels.begin(), labels.end(), 0);
    t.records.push_back({static_cast<long>(m), TransitionMatrix(q),
                         std::vector<double>(t.k_a, 1.0 / t.k_a), means, labels});
    t.allocations.push_back({static_cast<long>(m), allocations[m]});
  }
  return t;
}

}  // namespace

TEST(FitMetrics, HandExample) {
  // y = (0, 1, 5, 7); x_hat = (1, 1, 2, 2) by majority; gamma_hat = (0.5, 6)
  const std::vector<double> y = {0.0, 1.0, 5.0, 7.0};
  const auto t = fixed_modal({{0, 0, 1, 1}, {0, 1, 1, 1}, {0, 0, 1, 0}}, {0.5, 6.0}, 4);
  const auto est = summarize(t);
  const auto m = fit_metrics(y, std::nullopt, t, est);
  EXPECT_EQ(m.map_states, (std::vector<int>{0, 0, 1, 1}));
  EXPECT_DOUBLE_EQ(m.mae, 0.5 + 0.5 + 1.0 + 1.0);
  EXPECT_DOUBLE_EQ(m.mse, 0.25 + 0.25 + 1.0 + 1.0);
  EXPECT_FALSE(m.reclass_pct.has_value());
}

TEST(FitMetrics, SingleStateGivesTotalSumOfSquares) {
  const std::vector<double> y = {1.0, 2.0, 4.0, 9.0};
  const double ybar = 4.0;
  const auto t = fixed_modal({{0, 0, 0, 0}}, {ybar}, 4);
  const auto m = fit_metrics(y, std::nullopt, t, summarize(t));
  EXPECT_DOUBLE_EQ(m.mse, 9.0 + 4.0 + 0.0 + 25.0);
}

TEST(FitMetrics, ReclassificationIgnoresLabelNames) {
  const std::vector<double> y = {-5, -5, 5, 5, 9, -5};
  const auto t = fixed_modal({{0, 0, 1, 1, 2, 0}}, {-5.0, 5.0, 9.0}, 6);
  const auto est = summarize(t);
  const std::vector<int> truth = {2, 2, 0, 0, 1, 2};
  const auto m = fit_metrics(y, std::span<const int>(truth), t, est);
  EXPECT_DOUBLE_EQ(*m.reclass_pct, 1.0);
  const std::vector<int> other = {1, 1, 2, 2, 0, 1};
  EXPECT_DOUBLE_EQ(*fit_metrics(y, std::span<const int>(other), t, est).reclass_pct, 1.0);
  const std::vector<int> one_wrong = {1, 1, 2, 2, 0, 2};
  EXPECT_NEAR(*fit_metrics(y, std::span<const int>(one_wrong), t, est).reclass_pct, 5.0 / 6.0, 1e-15);
}

TEST(FitMetrics, RejectsLengthMismatch) {
  const std::vector<double> y = {1.0, 2.0};
  const auto t = fixed_modal({{0, 0, 0}}, {1.0}, 3);
  EXPECT_THROW(fit_metrics(y, std::nullopt, t, summarize(t)), Error);
}

TEST(Predictive, WellSpecifiedConcordance) {
  const HmmParams truth{TransitionMatrix(three_state_q()), {-3.0, 0.0, 4.0}};
  const auto data = simulate_hmm(truth, 400, 17);
  ModalTrace t;
  t.k_a = 3;
  t.n = 400;
  t.records.push_back({1, truth.transition, stationary_distribution(truth.transition).probs,
                       truth.means, {0, 1, 2}});
  const auto p = posterior_predictive(t, data.observations, 10000, 5);
  EXPECT_NEAR(p.concordance, 0.95, 0.02);
  EXPECT_EQ(p.replicates, 10000);
  // same numbers from several threads
  const auto q = posterior_predictive(t, data.observations, 10000, 5, 3);
  EXPECT_EQ(p.concordance, q.concordance);
  EXPECT_DOUBLE_EQ(p.mape, q.mape);
}

TEST(Predictive, SingleReplicateIsItsOwnAverage) {
  // one state with mean 0: replicate r is y_rep = N(0,1) at each t
  const std::vector<double> y = {0.5, -1.0, 2.0};
  ModalTrace t;
  t.k_a = 1;
  t.n = 3;
  t.records.push_back({1, TransitionMatrix::identity(1), {1.0}, {0.0}, {0}});
  const auto p = posterior_predictive(t, y, 1, 9);
  // replay the replicate's stream: a uniform for the pick, one for x_1, then
  // per t a transition draw (after the first) and a normal
  Rng rng = make_stream(9, StreamTag::Predictive, 0);
  uniform_open(rng);
  uniform_open(rng);
  double mape = 0.0, mspe = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (t > 0) uniform_open(rng);
    const double d = y[t] - normal(rng, 0.0, 1.0);
    mape += std::abs(d);
    mspe += d * d;
  }
  EXPECT_DOUBLE_EQ(p.mape, mape);
  EXPECT_DOUBLE_EQ(p.mspe, mspe);
}

TEST(Density, IntegratesToOne) {
  McmcTrace t;
  t.k = 2;
  t.n = 5;
  std::mt19937_64 gen(6);
  std::normal_distribution<double> nd;
  for (int m = 0; m < 500; ++m) {
    t.records.push_back(make_record(m, Eigen::MatrixXd::Constant(2, 2, 0.5), {nd(gen), 3 + nd(gen)}, {3, 2}));
  }
  const auto g = density_grid(t, 10, 20);
  ASSERT_EQ(g.cells.size(), 200u);
  const double area = (1.0 / 10) * (g.cells[1].gamma - g.cells[0].gamma);
  double total = 0.0;
  for (const auto& c : g.cells) total += c.density * area;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Analyze, EndToEndOnSyntheticTrace) {
  // two occupied states with fixed parameters; third state empty throughout
  const std::vector<double> y = {-5.1, -4.9, 5.2, 4.8, -5.0, 5.1};
  const std::vector<int> truth = {0, 0, 1, 1, 0, 1};
  McmcTrace t;
  t.k = 3;
  t.n = y.size();
  Eigen::MatrixXd q(3, 3);
  q << 0.6, 0.3, 0.1, 0.3, 0.6, 0.1, 0.3, 0.3, 0.4;
  for (int m = 1; m <= 100; ++m) {
    // labels switch halfway through
    const bool flip = m > 50;
    std::vector<double> means = flip ? std::vector<double>{5.0, -5.0, 0.0} : std::vector<double>{-5.0, 5.0, 0.0};
    t.records.push_back(make_record(m, q, means, {3, 3, 0}));
    std::vector<int> x(truth);
    if (flip) {
      for (int& v : x) v = 1 - v;
    }
    t.allocations.push_back({m, x});
  }
  const auto r = analyze(y, std::span<const int>(truth), t, 200, 1);
  EXPECT_EQ(r.k_hat, 2);
  EXPECT_DOUBLE_EQ(r.p_k_hat, 1.0);
  EXPECT_DOUBLE_EQ(r.estimates[0].mean.mean, -5.0);
  EXPECT_DOUBLE_EQ(r.estimates[1].mean.mean, 5.0);
  EXPECT_DOUBLE_EQ(*r.metrics.reclass_pct, 1.0);
  EXPECT_GE(r.predictive.concordance, 0.0);
  EXPECT_LE(r.predictive.concordance, 1.0);
}
