#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "overhmm/analysis.hpp"
#include "overhmm/error.hpp"
#include "overhmm/io.hpp"
#include "overhmm/model.hpp"
#include "overhmm/priors.hpp"
#include "overhmm/sampler.hpp"
#include "overhmm/tempering.hpp"

namespace overhmm {

// ---------------------------------------------------------------------------
// Simulation presets.

inline HmmParams preset_params(const std::string& name) {
  if (name == "Sim1" || name == "sim1") {
    return {TransitionMatrix({{0.2, 0.3, 0.5}, {0.5, 0.25, 0.25}, {0.25, 0.65, 0.1}}),
            {1.0, 3.0, 6.0}};
  }
  if (name == "Sim2" || name == "sim2") {
    return {TransitionMatrix({{0.8, 0.1, 0.1}, {0.2, 0.4, 0.4}, {0.3, 0.2, 0.5}}),
            {-5.0, 5.0, 9.0}};
  }
  if (name == "Sim3" || name == "sim3") {
    return {TransitionMatrix({{0.2, 0.3, 0.1, 0.2, 0.2},
                              {0.1, 0.6, 0.1, 0.1, 0.1},
                              {0.1, 0.1, 0.6, 0.1, 0.1},
                              {0.1, 0.1, 0.1, 0.6, 0.1},
                              {0.1, 0.1, 0.1, 0.1, 0.6}}),
            {-10.0, -5.0, 0.0, 5.0, 10.0}};
  }
  // two-state model of the large-sample emptying experiment
  if (name == "Large" || name == "large") {
    return {TransitionMatrix({{0.6, 0.4}, {0.7, 0.3}}), {-1.0, 3.0}};
  }
  throw Error(ErrorCode::ConfigError, "unknown preset '" + name + "' (Sim1, Sim2, Sim3, Large)");
}

inline SimulatedDataset preset_simulation(const std::string& name, std::size_t n,
                                          std::uint64_t seed) {
  return simulate_hmm(preset_params(name), n, seed);
}

// ---------------------------------------------------------------------------
// Symbolic hyperparameters: a number, or one of "theory", "n", "K", "1",
// "1/n", "1/10n". "theory" is only meaningful for alpha_bar.

inline double resolve_hyper(const std::string& spec, std::size_t n, int k, int d, int p,
                            std::optional<double> alpha_low = std::nullopt) {
  const double nn = static_cast<double>(n);
  if (spec == "n") return nn;
  if (spec == "K") return k;
  if (spec == "1/n") return 1.0 / nn;
  if (spec == "1/10n") return 1.0 / (10.0 * nn);
  if (spec == "theory") {
    require(alpha_low.has_value(), ErrorCode::ConfigError, "'theory' only applies to alpha_bar");
    return conservative_alpha_bound(k, d, *alpha_low, p).suggested_alpha_bar();
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(spec, &used);
    if (used == spec.size() && v > 0.0 && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ConfigError, "cannot resolve hyperparameter '" + spec + "'");
}

inline std::string hyper_from_json(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number()) return io::fmt(j.get<double>());
  throw Error(ErrorCode::ConfigError, "hyperparameters must be numbers or strings");
}

struct DataSource {
  std::string preset;  // Sim1/Sim2/Sim3, or empty when csv is set
  std::size_t n = 100;
  std::optional<std::uint64_t> seed;  // defaults to the master seed
  std::string csv;
};

struct ExperimentConfig {
  DataSource data;
  int k = 10;
  PriorKind prior = PriorKind::Column;
  std::string alpha_bar = "1";
  std::string alpha_low = "1/n";
  int p = 1;
  int d = 1;
  int chains = 30;
  long iterations = 20000;
  long burn_in = 10000;
  std::uint64_t seed = 1;
  int threads = 1;
  int allocation_thin = 10;
  int predictive_replicates = 10000;
  InitKind init = InitKind::Uniform;
  double prior_variance = 100.0;
  double min_swap_rate = 0.01;
  bool strict_swaps = false;
  bool trace_json = false;
  std::string output_dir;  // empty: nothing persisted

  // Checks everything that does not need the data.
  void validate() const {
    require(data.preset.empty() != data.csv.empty(), ErrorCode::ConfigError,
            "data needs exactly one of 'preset' or 'csv'");
    if (!data.preset.empty()) {
      preset_params(data.preset);
      require(data.n >= 1, ErrorCode::ConfigError, "data.n must be positive");
    }
    require(k >= 1, ErrorCode::ConfigError, "k must be positive");
    require(p >= 1 && p <= k, ErrorCode::ConfigError, "p must lie in 1..k");
    require(d >= 1, ErrorCode::ConfigError, "d must be positive");
    require(chains >= 1, ErrorCode::ConfigError, "chains must be positive");
    require(iterations >= 1, ErrorCode::ConfigError, "iterations must be positive");
    require(burn_in >= 0 && burn_in < iterations, ErrorCode::ConfigError,
            "burn_in must be non-negative and below iterations");
    require(threads >= 1, ErrorCode::ConfigError, "threads must be positive");
    require(allocation_thin >= 1, ErrorCode::ConfigError, "allocation_thin must be positive");
    require(predictive_replicates >= 1, ErrorCode::ConfigError,
            "predictive_replicates must be positive");
    require(prior_variance > 0.0, ErrorCode::ConfigError, "prior_variance must be positive");
  }

  // Hyperparameters resolved against the dataset's actual length.
  PriorStructure structure(std::size_t n) const {
    PriorStructure s;
    s.kind = prior;
    s.k = k;
    s.p = p;
    s.alpha_low = resolve_hyper(alpha_low, n, k, d, p);
    s.alpha_bar = resolve_hyper(alpha_bar, n, k, d, p, s.alpha_low);
    require(s.alpha_bar >= s.alpha_low, ErrorCode::ConfigError,
            "alpha_bar resolves below alpha_low");
    return s;
  }
};

inline std::string to_string(InitKind k) { return k == InitKind::Uniform ? "uniform" : "quantile"; }

inline InitKind parse_init_kind(const std::string& s) {
  if (s == "uniform") return InitKind::Uniform;
  if (s == "quantile") return InitKind::Quantile;
  throw Error(ErrorCode::ConfigError, "unknown init '" + s + "' (uniform, quantile)");
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json data;
  if (!c.data.preset.empty()) {
    data = {{"preset", c.data.preset}, {"n", c.data.n}};
    if (c.data.seed) data["seed"] = *c.data.seed;
  } else {
    data = {{"csv", c.data.csv}};
  }
  return {{"data", data},
          {"k", c.k},
          {"prior", std::string(to_string(c.prior))},
          {"alpha_bar", c.alpha_bar},
          {"alpha_low", c.alpha_low},
          {"p", c.p},
          {"d", c.d},
          {"chains", c.chains},
          {"iterations", c.iterations},
          {"burn_in", c.burn_in},
          {"seed", c.seed},
          {"threads", c.threads},
          {"allocation_thin", c.allocation_thin},
          {"predictive_replicates", c.predictive_replicates},
          {"init", to_string(c.init)},
          {"prior_variance", c.prior_variance},
          {"min_swap_rate", c.min_swap_rate},
          {"strict_swaps", c.strict_swaps},
          {"trace_json", c.trace_json},
          {"output_dir", c.output_dir}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  static const char* known[] = {"data", "k", "prior", "alpha_bar", "alpha_low", "p", "d",
                                "chains", "iterations", "burn_in", "seed", "threads",
                                "allocation_thin", "predictive_replicates", "init",
                                "prior_variance", "min_swap_rate", "strict_swaps",
                                "trace_json", "output_dir"};
  require(j.is_object(), ErrorCode::ConfigError, "config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    require(ok, ErrorCode::ConfigError, "unknown config key '" + key + "'");
  }
  ExperimentConfig c;
  try {
    const auto& data = j.at("data");
    c.data.preset = data.value("preset", std::string());
    c.data.csv = data.value("csv", std::string());
    c.data.n = data.value("n", c.data.n);
    if (data.contains("seed")) c.data.seed = data.at("seed").get<std::uint64_t>();
    c.k = j.value("k", c.k);
    if (j.contains("prior")) c.prior = parse_prior_kind(j.at("prior").get<std::string>());
    if (j.contains("alpha_bar")) c.alpha_bar = hyper_from_json(j.at("alpha_bar"));
    if (j.contains("alpha_low")) c.alpha_low = hyper_from_json(j.at("alpha_low"));
    c.p = j.value("p", c.p);
    c.d = j.value("d", c.d);
    c.chains = j.value("chains", c.chains);
    c.iterations = j.value("iterations", c.iterations);
    c.burn_in = j.value("burn_in", c.burn_in);
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    c.allocation_thin = j.value("allocation_thin", c.allocation_thin);
    c.predictive_replicates = j.value("predictive_replicates", c.predictive_replicates);
    if (j.contains("init")) c.init = parse_init_kind(j.at("init").get<std::string>());
    c.prior_variance = j.value("prior_variance", c.prior_variance);
    c.min_swap_rate = j.value("min_swap_rate", c.min_swap_rate);
    c.strict_swaps = j.value("strict_swaps", c.strict_swaps);
    c.trace_json = j.value("trace_json", c.trace_json);
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& run_manifest() {
  static const std::vector<std::string> files = {
      "config.json", "data.csv",   "trace.csv",     "allocations.csv", "ledger.csv",
      "metadata.json", "report.json", "estimates.csv", "density.csv"};
  return files;
}

struct ExperimentResult {
  SimulatedDataset data;
  PriorStructure structure;
  PptResult run;
  FitReport report;
};

inline SimulatedDataset load_data(const ExperimentConfig& c) {
  if (!c.data.csv.empty()) return io::read_dataset_csv(c.data.csv);
  return preset_simulation(c.data.preset, c.data.n, c.data.seed.value_or(c.seed));
}

inline ExperimentResult run_experiment_unchecked(const ExperimentConfig& c) {
  c.validate();
  ExperimentResult out;
  out.data = load_data(c);
  const auto& y = out.data.observations;
  out.structure = c.structure(y.size());

  PptConfig ppt;
  ppt.chains = c.chains;
  ppt.iterations = c.iterations;
  ppt.burn_in = c.burn_in;
  ppt.base = out.structure;
  ppt.ladder = tempering_ladder(out.structure.alpha_bar, out.structure.alpha_low, c.chains);
  ppt.seed = c.seed;
  ppt.init = c.init;
  ppt.allocation_thin = c.allocation_thin;
  ppt.threads = c.threads;
  ppt.min_swap_rate = c.min_swap_rate;
  ppt.strict_swaps = c.strict_swaps;
  ppt.validate();
  const auto eprior = EmissionPrior::from_data(y, c.prior_variance);

  out.run = ppt_run(y, ppt, eprior);
  std::optional<std::span<const int>> truth;
  if (out.data.states.size() == y.size()) truth = std::span<const int>(out.data.states);
  out.report = analyze(y, truth, out.run.trace, c.predictive_replicates,
                       derive_seed(c.seed, StreamTag::Predictive, 0), c.threads);

  if (!c.output_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir(c.output_dir);
    fs::create_directories(dir);
    auto echo = config_to_json(c);
    echo["resolved"] = {{"n", y.size()},
                        {"alpha_bar", out.structure.alpha_bar},
                        {"alpha_low", out.structure.alpha_low},
                        {"ladder", ppt.ladder.rungs},
                        {"prior_mean", eprior.mean0}};
    io::write_json(dir / "config.json", echo);
    io::write_dataset_csv(dir / "data.csv", out.data);
    {
      auto f = io::open_out(dir / "trace.csv");
      io::write_trace_csv(f, out.run.trace);
    }
    {
      auto f = io::open_out(dir / "allocations.csv");
      io::write_allocations_csv(f, out.run.trace);
    }
    if (c.trace_json) io::write_json(dir / "trace.json", io::trace_to_json(out.run.trace));
    {
      auto f = io::open_out(dir / "ledger.csv");
      io::write_ledger_csv(f, out.run.ledger);
    }
    io::write_json(dir / "metadata.json",
                   {{"seed", c.seed},
                    {"data_seed", out.data.seed},
                    {"wall_seconds", out.run.seconds},
                    {"kept_iterations", out.run.trace.records.size()},
                    {"target_mh_accepts", out.run.target_mh_accepts},
                    {"warnings", out.run.warnings}});
    io::write_json(dir / "report.json", io::report_to_json(out.report));
    {
      auto f = io::open_out(dir / "estimates.csv");
      io::write_estimates_csv(f, out.report.estimates);
    }
    {
      auto f = io::open_out(dir / "density.csv");
      io::write_density_csv(f, density_grid(out.run.trace));
    }
  }
  return out;
}

// On failure an error.json is left in the output directory before rethrowing.
inline ExperimentResult run_experiment(const ExperimentConfig& c) {
  try {
    return run_experiment_unchecked(c);
  } catch (const std::exception& e) {
    if (!c.output_dir.empty()) {
      try {
        io::write_json(std::filesystem::path(c.output_dir) / "error.json", io::error_json(e));
      } catch (...) {
      }
    }
    throw;
  }
}

// ---------------------------------------------------------------------------
// Replicate studies.

struct StudyCell {
  PriorKind prior = PriorKind::Column;
  std::string alpha_bar = "1";
  std::string alpha_low = "1/n";

  std::string label() const {
    return std::string(to_string(prior)) + "|" + alpha_bar + "|" + alpha_low;
  }
};

struct StudyRun {
  int cell = 0;
  int replicate = 0;
  std::uint64_t seed = 0;
  int k_hat = 0;  // 0 when the run failed
  double p_k_hat = 0.0;
  std::string error;
};

struct StudyRow {
  StudyCell cell;
  int replicates = 0;
  int failures = 0;
  std::map<int, int> k_hat_counts;

  double proportion(int k_a) const {
    const int ok = replicates - failures;
    const auto it = k_hat_counts.find(k_a);
    return ok > 0 && it != k_hat_counts.end() ? static_cast<double>(it->second) / ok : 0.0;
  }
};

struct StudyResult {
  int k = 0;
  std::vector<StudyRow> rows;
  std::vector<StudyRun> runs;
};

// Replicate r simulates its data and seeds its sampler from
// derive_seed(master, Replicate, r), so every cell sees the same datasets.
// Cells and replicates run on a pool of `parallelism` workers; a failed run is
// recorded and the study carries on.
inline StudyResult replicate_study(const ExperimentConfig& base, const std::vector<StudyCell>& cells,
                                   int replicates, int parallelism = 1) {
  require(replicates >= 1, ErrorCode::ConfigError, "replicates must be positive");
  require(!cells.empty(), ErrorCode::ConfigError, "study needs at least one cell");
  require(parallelism >= 1, ErrorCode::ConfigError, "parallelism must be positive");
  require(!base.data.preset.empty(), ErrorCode::ConfigError, "replicate studies need a preset");
  base.validate();

  StudyResult out;
  out.k = base.k;
  const int tasks = static_cast<int>(cells.size()) * replicates;
  out.runs.resize(tasks);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (int t = next++; t < tasks; t = next++) {
      StudyRun& run = out.runs[t];
      run.cell = t / replicates;
      run.replicate = t % replicates;
      run.seed = derive_seed(base.seed, StreamTag::Replicate, static_cast<std::uint64_t>(run.replicate));
      ExperimentConfig c = base;
      c.prior = cells[run.cell].prior;
      c.alpha_bar = cells[run.cell].alpha_bar;
      c.alpha_low = cells[run.cell].alpha_low;
      c.seed = run.seed;
      c.data.seed = run.seed;
      c.output_dir.clear();
      if (parallelism > 1) c.threads = 1;
      try {
        const auto r = run_experiment(c);
        run.k_hat = r.report.k_hat;
        run.p_k_hat = r.report.p_k_hat;
      } catch (const std::exception& e) {
        run.error = e.what();
      }
    }
  };
  if (parallelism == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < std::min(parallelism, tasks); ++w) pool.emplace_back(worker);
  }

  for (const auto& cell : cells) out.rows.push_back({cell, replicates, 0, {}});
  for (const auto& run : out.runs) {
    auto& row = out.rows[run.cell];
    if (!run.error.empty()) {
      ++row.failures;
    } else {
      ++row.k_hat_counts[run.k_hat];
    }
  }
  return out;
}

// One row per cell; columns K_A=1..K hold the proportion of successful
// replicates whose modal occupied count was that value.
inline void write_study_csv(std::ostream& out, const StudyResult& s) {
  out << "prior,alpha_bar,alpha_low,replicates,failures";
  for (int j = 1; j <= s.k; ++j) out << ",K_A_" << j;
  out << '\n';
  for (const auto& r : s.rows) {
    out << to_string(r.cell.prior) << ',' << r.cell.alpha_bar << ',' << r.cell.alpha_low << ','
        << r.replicates << ',' << r.failures;
    for (int j = 1; j <= s.k; ++j) out << ',' << io::fmt(r.proportion(j));
    out << '\n';
  }
}

inline void write_study_runs_csv(std::ostream& out, const StudyResult& s) {
  out << "prior,alpha_bar,alpha_low,replicate,seed,k_hat,p_k_hat,error\n";
  for (const auto& r : s.runs) {
    const auto& cell = s.rows[r.cell].cell;
    std::string err = r.error;
    for (char& ch : err) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << to_string(cell.prior) << ',' << cell.alpha_bar << ',' << cell.alpha_low << ','
        << r.replicate + 1 << ',' << r.seed << ',' << r.k_hat << ',' << io::fmt(r.p_k_hat) << ','
        << err << '\n';
  }
}

}  // namespace overhmm
