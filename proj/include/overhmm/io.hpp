#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "overhmm/analysis.hpp"
#include "overhmm/error.hpp"
#include "overhmm/model.hpp"
#include "overhmm/priors.hpp"
#include "overhmm/tempering.hpp"

namespace overhmm::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// 17 significant digits round-trip every double.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
  return in;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

// strtod rather than stod: subnormal values in traces must read back.
inline double to_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || std::isnan(v)) {
    throw Error(ErrorCode::IoError, "not a number in " + where + ": '" + s + "'");
  }
  return v;
}

inline long to_long(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::IoError, "not an integer in " + where + ": '" + s + "'");
}

inline void write_json(const fs::path& path, const json& j) { open_out(path) << j.dump(2) << '\n'; }

inline json read_json(const fs::path& path) {
  auto in = open_in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Datasets. Labels are written 1-based.

inline void write_dataset_csv(std::ostream& out, const SimulatedDataset& d) {
  const bool has_x = d.states.size() == d.observations.size();
  out << (has_x ? "t,y,x\n" : "t,y\n");
  for (std::size_t t = 0; t < d.observations.size(); ++t) {
    out << t + 1 << ',' << fmt(d.observations[t]);
    if (has_x) out << ',' << d.states[t] + 1;
    out << '\n';
  }
}

inline void write_dataset_csv(const fs::path& path, const SimulatedDataset& d) {
  auto out = open_out(path);
  write_dataset_csv(out, d);
}

// Accepts `t,y` with an optional `x` column of 1-based labels; columns are
// found by name. Missing truth leaves states empty.
inline SimulatedDataset read_dataset_csv(std::istream& in, const std::string& name = "data") {
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::IoError, name + " is empty");
  const auto header = split(line);
  int col_y = -1;
  int col_x = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "y") col_y = static_cast<int>(c);
    if (header[c] == "x") col_x = static_cast<int>(c);
  }
  require(col_y >= 0, ErrorCode::IoError, name + " has no 'y' column");
  SimulatedDataset d;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    const std::string where = name + " line " + std::to_string(row);
    require(static_cast<int>(cells.size()) > std::max(col_y, col_x), ErrorCode::IoError,
            where + " has too few columns");
    d.observations.push_back(to_double(cells[col_y], where));
    if (col_x >= 0) {
      const long x = to_long(cells[col_x], where);
      require(x >= 1, ErrorCode::LabelOutOfRange, where + ": labels are 1-based");
      d.states.push_back(static_cast<int>(x - 1));
    }
  }
  require(!d.observations.empty(), ErrorCode::IoError, name + " has no observations");
  return d;
}

inline SimulatedDataset read_dataset_csv(const fs::path& path) {
  auto in = open_in(path);
  return read_dataset_csv(in, path.string());
}

inline json dataset_to_json(const SimulatedDataset& d) {
  json x = json::array();
  for (int s : d.states) x.push_back(s + 1);
  return {{"seed", d.seed}, {"y", d.observations}, {"x", x}};
}

inline SimulatedDataset dataset_from_json(const json& j) {
  SimulatedDataset d;
  d.seed = j.value("seed", std::uint64_t{0});
  d.observations = j.at("y").get<std::vector<double>>();
  if (j.contains("x")) {
    for (int s : j.at("x").get<std::vector<int>>()) {
      require(s >= 1, ErrorCode::LabelOutOfRange, "labels are 1-based");
      d.states.push_back(s - 1);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Traces.

inline void write_trace_csv(std::ostream& out, const McmcTrace& t) {
  out << "iteration,k_a,component";
  for (int i = 1; i <= t.k; ++i) {
    for (int j = 1; j <= t.k; ++j) out << ",q_" << i << '_' << j;
  }
  for (int i = 1; i <= t.k; ++i) out << ",gamma_" << i;
  for (int i = 1; i <= t.k; ++i) out << ",n_" << i;
  out << '\n';
  for (const auto& r : t.records) {
    out << r.iteration << ',' << r.k_a << ',' << r.component;
    for (int i = 0; i < t.k; ++i) {
      for (int j = 0; j < t.k; ++j) out << ',' << fmt(r.q(i, j));
    }
    for (double g : r.means) out << ',' << fmt(g);
    for (int c : r.counts) out << ',' << c;
    out << '\n';
  }
}

inline void write_allocations_csv(std::ostream& out, const McmcTrace& t) {
  out << "iteration";
  for (std::size_t s = 1; s <= t.n; ++s) out << ",x_" << s;
  out << '\n';
  for (const auto& a : t.allocations) {
    out << a.iteration;
    for (int s : a.states) out << ',' << s + 1;
    out << '\n';
  }
}

// Reads the two files written above back into a trace.
inline McmcTrace read_trace_csv(std::istream& records, std::istream* allocations) {
  std::string line;
  require(static_cast<bool>(std::getline(records, line)), ErrorCode::IoError, "trace is empty");
  const auto header = split(line);
  const std::size_t cols = header.size();
  require(cols >= 3, ErrorCode::IoError, "trace header is too short");
  // 3 + K^2 + 2K columns
  int k = 0;
  while (3 + static_cast<std::size_t>(k * k + 2 * k) < cols) ++k;
  require(3 + static_cast<std::size_t>(k * k + 2 * k) == cols, ErrorCode::IoError,
          "trace header does not describe a K-state model");
  McmcTrace t;
  t.k = k;
  long row = 1;
  while (std::getline(records, line)) {
    ++row;
    if (line.empty()) continue;
    const auto c = split(line);
    const std::string where = "trace line " + std::to_string(row);
    require(c.size() == cols, ErrorCode::IoError, where + " has the wrong column count");
    TraceRecord r;
    r.iteration = to_long(c[0], where);
    r.k_a = static_cast<int>(to_long(c[1], where));
    r.component = static_cast<int>(to_long(c[2], where));
    r.q.resize(k, k);
    std::size_t p = 3;
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) r.q(i, j) = to_double(c[p++], where);
    }
    for (int i = 0; i < k; ++i) r.means.push_back(to_double(c[p++], where));
    for (int i = 0; i < k; ++i) r.counts.push_back(static_cast<int>(to_long(c[p++], where)));
    t.records.push_back(std::move(r));
  }
  if (allocations) {
    require(static_cast<bool>(std::getline(*allocations, line)), ErrorCode::IoError,
            "allocation file is empty");
    t.n = split(line).size() - 1;
    row = 1;
    while (std::getline(*allocations, line)) {
      ++row;
      if (line.empty()) continue;
      const auto c = split(line);
      const std::string where = "allocations line " + std::to_string(row);
      require(c.size() == t.n + 1, ErrorCode::IoError, where + " has the wrong column count");
      AllocationRecord a;
      a.iteration = to_long(c[0], where);
      for (std::size_t s = 1; s < c.size(); ++s) {
        const long x = to_long(c[s], where);
        require(x >= 1 && x <= k, ErrorCode::LabelOutOfRange, where + ": label outside 1..K");
        a.states.push_back(static_cast<int>(x - 1));
      }
      t.allocations.push_back(std::move(a));
    }
  }
  return t;
}

inline McmcTrace read_trace_csv(const fs::path& trace_path, const fs::path& alloc_path) {
  auto rec = open_in(trace_path);
  if (alloc_path.empty()) return read_trace_csv(rec, nullptr);
  auto alloc = open_in(alloc_path);
  return read_trace_csv(rec, &alloc);
}

inline json trace_to_json(const McmcTrace& t) {
  json records = json::array();
  for (const auto& r : t.records) {
    std::vector<double> q(r.q.size());
    for (Eigen::Index i = 0; i < r.q.rows(); ++i) {
      for (Eigen::Index j = 0; j < r.q.cols(); ++j) q[i * r.q.cols() + j] = r.q(i, j);
    }
    records.push_back({{"iteration", r.iteration},
                       {"q", q},
                       {"gamma", r.means},
                       {"counts", r.counts},
                       {"k_a", r.k_a},
                       {"component", r.component}});
  }
  json alloc = json::array();
  for (const auto& a : t.allocations) {
    std::vector<int> x(a.states.size());
    for (std::size_t s = 0; s < x.size(); ++s) x[s] = a.states[s] + 1;
    alloc.push_back({{"iteration", a.iteration}, {"x", x}});
  }
  return {{"k", t.k}, {"n", t.n}, {"records", records}, {"allocations", alloc}};
}

inline McmcTrace trace_from_json(const json& j) {
  McmcTrace t;
  t.k = j.at("k").get<int>();
  t.n = j.at("n").get<std::size_t>();
  for (const auto& r : j.at("records")) {
    TraceRecord rec;
    rec.iteration = r.at("iteration").get<long>();
    const auto q = r.at("q").get<std::vector<double>>();
    require(q.size() == static_cast<std::size_t>(t.k * t.k), ErrorCode::IoError,
            "trace record has the wrong Q size");
    rec.q.resize(t.k, t.k);
    for (int a = 0; a < t.k; ++a) {
      for (int b = 0; b < t.k; ++b) rec.q(a, b) = q[a * t.k + b];
    }
    rec.means = r.at("gamma").get<std::vector<double>>();
    rec.counts = r.at("counts").get<std::vector<int>>();
    rec.k_a = r.at("k_a").get<int>();
    rec.component = r.value("component", -1);
    t.records.push_back(std::move(rec));
  }
  for (const auto& a : j.at("allocations")) {
    AllocationRecord rec;
    rec.iteration = a.at("iteration").get<long>();
    for (int x : a.at("x").get<std::vector<int>>()) rec.states.push_back(x - 1);
    t.allocations.push_back(std::move(rec));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Ledger, report, grids, bounds.

inline void write_ledger_csv(std::ostream& out, const SwapLedger& l) {
  out << "pair,attempts,accepts,rate\n";
  for (int z = 0; z < l.pairs(); ++z) {
    out << z + 1 << ',' << l.attempts[z] << ',' << l.accepts[z] << ',' << fmt(l.rate(z)) << '\n';
  }
}

inline json estimate_json(const Estimate& e) {
  return {{"mean", e.mean}, {"lower", e.lower}, {"upper", e.upper}};
}

inline json report_to_json(const FitReport& r) {
  json dist = json::object();
  for (const auto& [k_a, p] : r.occupancy.distribution) dist[std::to_string(k_a)] = p;
  json states = json::array();
  for (std::size_t s = 0; s < r.estimates.size(); ++s) {
    states.push_back({{"state", s + 1},
                      {"mu", estimate_json(r.estimates[s].weight)},
                      {"gamma", estimate_json(r.estimates[s].mean)}});
  }
  json out = {{"k_hat", r.k_hat},
              {"p_k_hat", r.p_k_hat},
              {"occupancy", dist},
              {"estimates", states},
              {"mae", r.metrics.mae},
              {"mse", r.metrics.mse},
              {"concordance", r.predictive.concordance},
              {"mape", r.predictive.mape},
              {"mspe", r.predictive.mspe},
              {"predictive_replicates", r.predictive.replicates}};
  out["reclass_pct"] = r.metrics.reclass_pct ? json(*r.metrics.reclass_pct) : json(nullptr);
  return out;
}

inline void write_estimates_csv(std::ostream& out, const std::vector<StateEstimate>& est) {
  out << "state,mu_mean,mu_lower,mu_upper,gamma_mean,gamma_lower,gamma_upper\n";
  for (std::size_t s = 0; s < est.size(); ++s) {
    const auto& e = est[s];
    out << s + 1 << ',' << fmt(e.weight.mean) << ',' << fmt(e.weight.lower) << ','
        << fmt(e.weight.upper) << ',' << fmt(e.mean.mean) << ',' << fmt(e.mean.lower) << ','
        << fmt(e.mean.upper) << '\n';
  }
}

inline void write_density_csv(std::ostream& out, const DensityGrid& g) {
  out << "mu_bin,gamma_bin,density\n";
  for (const auto& c : g.cells) out << fmt(c.mu) << ',' << fmt(c.gamma) << ',' << fmt(c.density) << '\n';
}

inline void write_bound_header(std::ostream& out) {
  out << "K,d,alpha_low,p,threshold,alpha_bar_min,feasible\n";
}

inline void write_bound_row(std::ostream& out, const TheoremBound& b) {
  out << b.k << ',' << b.d << ',' << fmt(b.alpha_low) << ',' << b.p << ',';
  if (b.feasible) {
    out << fmt(b.threshold) << ',' << fmt(b.alpha_bar_min) << ",true\n";
  } else {
    out << ",,false\n";
  }
}

inline json error_json(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    return {{"error", std::string(to_string(err->code()))}, {"message", err->what()}};
  }
  return {{"error", "Internal"}, {"message", e.what()}};
}

}  // namespace overhmm::io
