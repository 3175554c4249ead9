#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <sstream>

#include "overhmm/io.hpp"

using namespace overhmm;
namespace fs = std::filesystem;

namespace {

McmcTrace sample_trace() {
  McmcTrace t;
  t.k = 2;
  t.n = 3;
  Eigen::MatrixXd q(2, 2);
  q << 0.1 / 3.0, 1.0 - 0.1 / 3.0, 5.5e-309, 1.0 - 5.5e-309;
  for (long m = 11; m <= 14; ++m) {
    TraceRecord r;
    r.iteration = m;
    r.q = q;
    r.means = {-1.0 / 7.0, 1e-300 * m};
    r.counts = {1, 2};
    r.k_a = 2;
    r.component = m % 2 == 0 ? 1 : -1;
    t.records.push_back(r);
  }
  t.allocations.push_back({11, {0, 1, 1}});
  t.allocations.push_back({13, {1, 1, 0}});
  return t;
}

void expect_same_trace(const McmcTrace& a, const McmcTrace& b) {
  EXPECT_EQ(a.k, b.k);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t m = 0; m < a.records.size(); ++m) {
    EXPECT_EQ(a.records[m].iteration, b.records[m].iteration);
    EXPECT_EQ(a.records[m].q, b.records[m].q);
    EXPECT_EQ(a.records[m].means, b.records[m].means);
    EXPECT_EQ(a.records[m].counts, b.records[m].counts);
    EXPECT_EQ(a.records[m].k_a, b.records[m].k_a);
    EXPECT_EQ(a.records[m].component, b.records[m].component);
  }
  ASSERT_EQ(a.allocations.size(), b.allocations.size());
  for (std::size_t m = 0; m < a.allocations.size(); ++m) {
    EXPECT_EQ(a.allocations[m].iteration, b.allocations[m].iteration);
    EXPECT_EQ(a.allocations[m].states, b.allocations[m].states);
  }
}

}  // namespace

TEST(Numbers, FormatRoundTripsExactly) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-310, 1e300, std::numeric_limits<double>::min()}) {
    EXPECT_EQ(io::to_double(io::fmt(v), "test"), v);
  }
}

TEST(Numbers, RejectsMalformedCells) {
  EXPECT_THROW(io::to_double("", "x"), Error);
  EXPECT_THROW(io::to_double("1.5abc", "x"), Error);
  EXPECT_THROW(io::to_double("nan", "x"), Error);
  EXPECT_THROW(io::to_long("2.5", "x"), Error);
  EXPECT_EQ(io::to_long("42", "x"), 42);
}

TEST(Dataset, CsvRoundTrip) {
  SimulatedDataset d{{0.5, -1.25, 1.0 / 3.0}, {0, 2, 1}, 9};
  std::stringstream s;
  io::write_dataset_csv(s, d);
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "t,y,x");
  // labels are 1-based on disk
  EXPECT_NE(s.str().find(",3\n"), std::string::npos);
  const auto back = io::read_dataset_csv(s);
  EXPECT_EQ(back.observations, d.observations);
  EXPECT_EQ(back.states, d.states);
}

TEST(Dataset, CsvWithoutStates) {
  std::stringstream s("y\n1.5\n-2\n");
  const auto d = io::read_dataset_csv(s);
  EXPECT_EQ(d.observations, (std::vector<double>{1.5, -2.0}));
  EXPECT_TRUE(d.states.empty());
}

TEST(Dataset, CsvErrors) {
  std::stringstream no_y("t,x\n1,1\n");
  EXPECT_THROW(io::read_dataset_csv(no_y), Error);
  std::stringstream bad("t,y\n1,abc\n");
  EXPECT_THROW(io::read_dataset_csv(bad), Error);
  std::stringstream bad_label("t,y,x\n1,0.5,0\n");
  EXPECT_THROW(io::read_dataset_csv(bad_label), Error);
  std::stringstream empty("t,y\n");
  EXPECT_THROW(io::read_dataset_csv(empty), Error);
}

TEST(Dataset, JsonRoundTrip) {
  SimulatedDataset d{{0.5, -1.25}, {1, 0}, 3};
  const auto back = io::dataset_from_json(io::dataset_to_json(d));
  EXPECT_EQ(back.observations, d.observations);
  EXPECT_EQ(back.states, d.states);
  EXPECT_EQ(back.seed, d.seed);
}

TEST(Trace, CsvRoundTripIsExact) {
  const auto t = sample_trace();
  std::stringstream rec, alloc;
  io::write_trace_csv(rec, t);
  io::write_allocations_csv(alloc, t);
  EXPECT_EQ(rec.str().substr(0, rec.str().find('\n')),
            "iteration,k_a,component,q_1_1,q_1_2,q_2_1,q_2_2,gamma_1,gamma_2,n_1,n_2");
  const auto back = io::read_trace_csv(rec, &alloc);
  expect_same_trace(t, back);
}

TEST(Trace, JsonRoundTripIsExact) {
  const auto t = sample_trace();
  expect_same_trace(t, io::trace_from_json(io::trace_to_json(t)));
}

TEST(Trace, FilesRoundTrip) {
  const auto dir = fs::temp_directory_path() / "overhmm_io_test" / "nested";
  fs::remove_all(dir.parent_path());
  const auto t = sample_trace();
  {
    auto f = io::open_out(dir / "trace.csv");
    io::write_trace_csv(f, t);
    auto g = io::open_out(dir / "allocations.csv");
    io::write_allocations_csv(g, t);
  }
  expect_same_trace(t, io::read_trace_csv(dir / "trace.csv", dir / "allocations.csv"));
  EXPECT_THROW(io::read_trace_csv(dir / "missing.csv", dir / "allocations.csv"), Error);
  fs::remove_all(dir.parent_path());
}

TEST(Trace, RejectsRaggedRows) {
  std::stringstream rec("iteration,k_a,component,q_1_1,gamma_1,n_1\n1,1,-1,1\n");
  EXPECT_THROW(io::read_trace_csv(rec, nullptr), Error);
}

TEST(Ledger, Csv) {
  SwapLedger l(3);
  l.attempts = {10, 4};
  l.accepts = {5, 0};
  std::stringstream s;
  io::write_ledger_csv(s, l);
  EXPECT_EQ(s.str(), "pair,attempts,accepts,rate\n1,10,5,0.5\n2,4,0,0\n");
}

TEST(Bound, CsvRow) {
  std::stringstream s;
  io::write_bound_header(s);
  io::write_bound_row(s, conservative_alpha_bound(2, 1, 0.001));
  EXPECT_EQ(s.str().substr(0, s.str().find('\n')), "K,d,alpha_low,p,threshold,alpha_bar_min,feasible");
  EXPECT_NE(s.str().find("\n2,1,0.001,1,3.01807228915"), std::string::npos);
}

TEST(Errors, JsonCarriesCode) {
  const auto j = io::error_json(Error(ErrorCode::NoSuchModel, "nothing at K_A = 4"));
  EXPECT_EQ(j.at("error").get<std::string>(), "NoSuchModel");
  EXPECT_NE(j.at("message").get<std::string>().find("nothing at K_A = 4"), std::string::npos);
}
