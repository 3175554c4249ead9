#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "overhmm/overhmm.hpp"

using namespace overhmm;
using nlohmann::json;

namespace {

int fail(const std::exception& e) {
  std::cerr << io::error_json(e).dump() << '\n';
  return 2;
}

std::vector<std::string> split_list(const std::string& s) {
  return s.empty() ? std::vector<std::string>{} : io::split(s);
}

// Flags shared by fit and replicate; every one is optional and overrides the
// config file when given.
struct FitFlags {
  std::string config;
  std::optional<std::string> preset, csv, prior, alpha_bar, alpha_low, init, out;
  std::optional<std::size_t> n;
  std::optional<int> k, p, chains, threads, thin, predictive;
  std::optional<long> iterations, burn_in;
  std::optional<std::uint64_t> seed, data_seed;
  bool strict_swaps = false;
  bool trace_json = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "JSON experiment config");
    app->add_option("--preset", preset, "simulation preset: Sim1, Sim2, Sim3, Large");
    app->add_option("--csv", csv, "data CSV with columns t,y and optional x");
    app->add_option("--n", n, "preset sample size");
    app->add_option("--data-seed", data_seed, "preset data seed (default: --seed)");
    app->add_option("-K,--states", k, "number of states fitted");
    app->add_option("--prior", prior, "column, diagonal or mixture");
    app->add_option("--alpha-bar", alpha_bar, "number or theory|n|K|1");
    app->add_option("--alpha-low", alpha_low, "number or 1/n|1/10n");
    app->add_option("--p", p, "large entries per row for the column prior");
    app->add_option("--chains", chains, "tempered chains J");
    app->add_option("--iterations", iterations, "total iterations M");
    app->add_option("--burn-in", burn_in, "discarded iterations");
    app->add_option("--seed", seed, "master seed");
    app->add_option("--threads", threads, "worker threads per run");
    app->add_option("--thin", thin, "keep every n-th allocation vector");
    app->add_option("--predictive", predictive, "posterior predictive replicates");
    app->add_option("--init", init, "uniform or quantile");
    app->add_option("--out", out, "output directory");
    app->add_flag("--strict-swaps", strict_swaps, "abort when an adjacent swap rate is too low");
    app->add_flag("--trace-json", trace_json, "also write trace.json");
  }

  ExperimentConfig build() const {
    ExperimentConfig c;
    if (!config.empty()) c = config_from_json(io::read_json(config));
    if (preset) {
      c.data.preset = *preset;
      c.data.csv.clear();
    }
    if (csv) {
      c.data.csv = *csv;
      c.data.preset.clear();
    }
    if (n) c.data.n = *n;
    if (data_seed) c.data.seed = *data_seed;
    if (k) c.k = *k;
    if (prior) c.prior = parse_prior_kind(*prior);
    if (alpha_bar) c.alpha_bar = *alpha_bar;
    if (alpha_low) c.alpha_low = *alpha_low;
    if (p) c.p = *p;
    if (chains) c.chains = *chains;
    if (iterations) c.iterations = *iterations;
    if (burn_in) c.burn_in = *burn_in;
    if (seed) c.seed = *seed;
    if (threads) c.threads = *threads;
    if (thin) c.allocation_thin = *thin;
    if (predictive) c.predictive_replicates = *predictive;
    if (init) c.init = parse_init_kind(*init);
    if (out) c.output_dir = *out;
    if (strict_swaps) c.strict_swaps = true;
    if (trace_json) c.trace_json = true;
    return c;
  }
};

void print_report(const ExperimentResult& r) {
  std::printf("n=%zu  K=%d  prior=%s  alpha_bar=%g  alpha_low=%g\n", r.data.size(), r.structure.k,
              std::string(to_string(r.structure.kind)).c_str(), r.structure.alpha_bar,
              r.structure.alpha_low);
  std::printf("occupied states:");
  for (const auto& [k_a, prop] : r.report.occupancy.distribution) std::printf("  %d:%.4f", k_a, prop);
  std::printf("\nK_A mode %d  P=%.4f\n", r.report.k_hat, r.report.p_k_hat);
  std::printf("%5s %24s %30s\n", "state", "mu (95% CI)", "gamma (95% CI)");
  for (std::size_t s = 0; s < r.report.estimates.size(); ++s) {
    const auto& e = r.report.estimates[s];
    std::printf("%5zu   %.3f (%.3f, %.3f)   %8.3f (%.3f, %.3f)\n", s + 1, e.weight.mean,
                e.weight.lower, e.weight.upper, e.mean.mean, e.mean.lower, e.mean.upper);
  }
  std::printf("MAE %.2f  MSE %.2f", r.report.metrics.mae, r.report.metrics.mse);
  if (r.report.metrics.reclass_pct) std::printf("  reclassified %.1f%%", 100 * *r.report.metrics.reclass_pct);
  std::printf("\nconcordance %.3f  MAPE %.2f  MSPE %.2f\n", r.report.predictive.concordance,
              r.report.predictive.mape, r.report.predictive.mspe);
  for (int z = 0; z < r.run.ledger.pairs(); ++z) {
    if (z == 0) std::printf("swap rates:");
    std::printf(" %.2f", r.run.ledger.rate(z));
    if (z + 1 == r.run.ledger.pairs()) std::printf("\n");
  }
  for (const auto& w : r.run.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("%.1f s\n", r.run.seconds);
}

std::vector<StudyCell> parse_cells(const std::string& spec) {
  std::vector<StudyCell> cells;
  if (spec == "grid") {
    // every prior with alpha_bar in {n, K, 1} and alpha_low in {1/n, 1/10n}
    for (auto kind : {PriorKind::Column, PriorKind::Diagonal, PriorKind::Mixture}) {
      for (const char* abar : {"n", "K", "1"}) {
        for (const char* alow : {"1/n", "1/10n"}) cells.push_back({kind, abar, alow});
      }
    }
    return cells;
  }
  // prior:alpha_bar:alpha_low, comma separated
  for (const auto& item : split_list(spec)) {
    const auto parts = io::split(item, ':');
    if (parts.size() != 3) {
      throw Error(ErrorCode::ConfigError, "cell '" + item + "' is not prior:alpha_bar:alpha_low");
    }
    cells.push_back({parse_prior_kind(parts[0]), parts[1], parts[2]});
  }
  return cells;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Overfitted Gaussian HMMs with asymmetric Dirichlet priors and prior parallel tempering"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "draw a dataset from a preset");
  std::string sim_preset = "Sim2";
  std::size_t sim_n = 100;
  std::uint64_t sim_seed = 1;
  std::string sim_out, sim_json;
  sim->add_option("--preset", sim_preset, "Sim1, Sim2, Sim3 or Large")->capture_default_str();
  sim->add_option("--n", sim_n, "sample size")->capture_default_str();
  sim->add_option("--seed", sim_seed, "data seed")->capture_default_str();
  sim->add_option("--out", sim_out, "CSV path (default stdout)");
  sim->add_option("--json", sim_json, "also write JSON here");

  // bound
  auto* bnd = app.add_subcommand("bound", "threshold table for the column prior hyperparameters");
  std::string b_k = "2,3,5,10", b_alpha = "0.001";
  int b_d = 1, b_p = 1, b_kstar = 0;
  std::string b_out;
  bnd->add_option("--K", b_k, "comma-separated K values")->capture_default_str();
  bnd->add_option("--alpha-low", b_alpha, "comma-separated alpha_low values")->capture_default_str();
  bnd->add_option("--d", b_d, "free parameters per state")->capture_default_str();
  bnd->add_option("--p", b_p, "large entries per row")->capture_default_str();
  bnd->add_option("--k-star", b_kstar, "assumed true K* (0: conservative bound)");
  bnd->add_option("--out", b_out, "CSV path (default stdout)");

  // fit
  auto* fit = app.add_subcommand("fit", "fit one dataset with tempered Gibbs sampling");
  FitFlags fit_flags;
  fit_flags.attach(fit);

  // replicate
  auto* rep = app.add_subcommand("replicate", "replicate study over a grid of priors");
  FitFlags rep_flags;
  rep_flags.attach(rep);
  int rep_count = 10, rep_parallel = 1;
  std::string rep_cells = "column:1:1/n", rep_table, rep_runs;
  rep->add_option("--replicates", rep_count, "datasets per cell")->capture_default_str();
  rep->add_option("--parallelism", rep_parallel, "concurrent runs")->capture_default_str();
  rep->add_option("--cells", rep_cells, "prior:alpha_bar:alpha_low list, or 'grid' for all 18 cells")
      ->capture_default_str();
  rep->add_option("--table", rep_table, "aggregate CSV path (default stdout)");
  rep->add_option("--runs", rep_runs, "per-run CSV path");

  // report
  auto* rpt = app.add_subcommand("report", "recompute the fit report from a run directory");
  std::string rpt_dir;
  int rpt_predictive = 0;
  rpt->add_option("run_dir", rpt_dir, "directory written by fit")->required();
  rpt->add_option("--predictive", rpt_predictive, "predictive replicates (default: as in the run)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const auto d = preset_simulation(sim_preset, sim_n, sim_seed);
      if (sim_out.empty()) {
        io::write_dataset_csv(std::cout, d);
      } else {
        io::write_dataset_csv(sim_out, d);
      }
      if (!sim_json.empty()) io::write_json(sim_json, io::dataset_to_json(d));
      return 0;
    }

    if (*bnd) {
      std::ofstream file;
      if (!b_out.empty()) file = io::open_out(b_out);
      std::ostream& out = b_out.empty() ? std::cout : file;
      io::write_bound_header(out);
      for (const auto& ks : split_list(b_k)) {
        const int k = static_cast<int>(io::to_long(ks, "--K"));
        for (const auto& as : split_list(b_alpha)) {
          const double a = io::to_double(as, "--alpha-low");
          const int k_star = b_kstar > 0 ? b_kstar : k - 1;
          const int k_star_denom = b_kstar > 0 ? b_kstar : 1;
          io::write_bound_row(out, alpha_bound_terms(k, k_star, k_star_denom, b_d, a, b_p));
        }
      }
      return 0;
    }

    if (*fit) {
      const auto config = fit_flags.build();
      const auto r = run_experiment(config);
      print_report(r);
      return 0;
    }

    if (*rep) {
      auto base = rep_flags.build();
      const auto cells = parse_cells(rep_cells);
      const auto study = replicate_study(base, cells, rep_count, rep_parallel);
      if (rep_table.empty()) {
        write_study_csv(std::cout, study);
      } else {
        auto f = io::open_out(rep_table);
        write_study_csv(f, study);
      }
      if (!rep_runs.empty()) {
        auto f = io::open_out(rep_runs);
        write_study_runs_csv(f, study);
      }
      for (const auto& run : study.runs) {
        if (!run.error.empty()) std::fprintf(stderr, "replicate %d failed: %s\n", run.replicate + 1, run.error.c_str());
      }
      return 0;
    }

    if (*rpt) {
      namespace fs = std::filesystem;
      const fs::path dir(rpt_dir);
      const auto echo = io::read_json(dir / "config.json");
      auto config = config_from_json([&] {
        auto j = echo;
        j.erase("resolved");
        return j;
      }());
      const auto data = io::read_dataset_csv(dir / "data.csv");
      auto trace = io::read_trace_csv(dir / "trace.csv", dir / "allocations.csv");
      trace.n = data.size();
      std::optional<std::span<const int>> truth;
      if (data.states.size() == data.size()) truth = std::span<const int>(data.states);
      const int reps = rpt_predictive > 0 ? rpt_predictive : config.predictive_replicates;
      const auto report = analyze(data.observations, truth, trace, reps,
                                  derive_seed(config.seed, StreamTag::Predictive, 0), config.threads);
      std::cout << io::report_to_json(report).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    return fail(e);
  }
  return 0;
}
