// cttest: simulate multi-resolution datasets, run the treatment-effect test,
// and run Monte Carlo power studies and sweeps.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cttest/cttest.hpp"

namespace {

using namespace cttest;

// Flags shared by `test`, `power` and `sweep`; unset flags leave the config alone.
struct EstimatorFlags {
  std::optional<double> gamma;
  std::optional<std::string> basis;
  std::optional<std::string> measure;
  std::optional<std::string> alternative;

  void add(CLI::App& app) {
    app.add_option("--gamma", gamma, "discount rate in (0,1)");
    app.add_option("--basis", basis, "value basis: poly<k> (total degree k) or bspline<m> (m per dim)");
    app.add_option("--measure", measure, "reference measure: empirical | point:x1,x2,... ");
    app.add_option("--alternative", alternative, "greater | two-sided");
  }

  void apply(EstimatorConfig& c) const {
    if (gamma) c.gamma = *gamma;
    if (basis) c.basis_spec = parse_basis(*basis);
    if (measure) c.reference_measure = parse_measure(*measure);
    if (alternative) c.alternative = parse_alternative(*alternative);
  }

  static FeatureSpec parse_basis(const std::string& s) {
    FeatureSpec f;
    try {
      if (s.rfind("poly", 0) == 0) {
        f.kind = FeatureKind::PolynomialTensor;
        f.max_total_degree = std::stoi(s.substr(4));
        return f;
      }
      if (s.rfind("bspline", 0) == 0) {
        f.kind = FeatureKind::AdditiveBSpline;
        f.n_basis = std::stoi(s.substr(7));
        return f;
      }
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidArgument, "basis must look like poly1 or bspline6, got '" + s + "'");
  }

  static ReferenceMeasure parse_measure(const std::string& s) {
    if (s == "empirical") return ReferenceMeasure::empirical();
    if (s.rfind("point:", 0) == 0) {
      std::vector<double> xs;
      std::stringstream ss(s.substr(6));
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        try {
          xs.push_back(std::stod(tok));
        } catch (const std::exception&) {
          throw Error(ErrorCode::InvalidArgument, "bad point coordinate '" + tok + "'");
        }
      }
      if (xs.empty()) throw Error(ErrorCode::InvalidArgument, "point measure needs coordinates");
      return ReferenceMeasure::point_mass(Eigen::Map<Vec>(xs.data(), static_cast<Eigen::Index>(xs.size())));
    }
    throw Error(ErrorCode::InvalidArgument, "measure must be 'empirical' or 'point:x1,...', got '" + s + "'");
  }
};

Schedule parse_schedule(const std::string& s) { return schedule_from_json(json(s)); }

void emit(const std::string& out_path, const std::string& content) {
  if (out_path.empty() || out_path == "-") {
    std::cout << content;
  } else {
    write_file(out_path, content);
  }
}

std::string sibling(const std::string& path, const std::string& suffix) {
  const auto dot = path.rfind('.');
  const auto slash = path.rfind('/');
  const std::string stem = (dot == std::string::npos || (slash != std::string::npos && dot < slash)) ? path
                                                                                                    : path.substr(0, dot);
  return stem + suffix;
}

std::string format_tables(const std::vector<PowerTable>& tables) {
  std::string out;
  char buf[160];
  for (const auto& t : tables) {
    out += t.label + "\n";
    for (const auto& m : t.methods) {
      std::snprintf(buf, sizeof buf, "  %-9s %.3f (%.3f)%s\n", m.method.c_str(), m.p_hat, m.se,
                    m.failures > 0 ? ("  failures=" + std::to_string(m.failures)).c_str() : "");
      out += buf;
    }
  }
  return out;
}

// Writes the table CSV (to --out or stdout), plus the replication log and
// manifest next to --out when a file is given.
void emit_power(const std::string& out_path, const std::vector<StudyConfig>& studies,
                const std::vector<PowerTable>& tables, bool quiet) {
  const std::string csv = power_tables_to_csv(tables);
  if (out_path.empty() || out_path == "-") {
    std::cout << csv;
  } else {
    const std::string log_path = sibling(out_path, ".replications.csv");
    const std::string manifest_path = sibling(out_path, ".manifest.json");
    write_file(out_path, csv);
    write_file(log_path, replication_log_to_csv(tables));
    write_file(manifest_path, run_manifest(studies, tables, out_path, log_path).dump(2) + "\n");
    if (!quiet) std::cerr << format_tables(tables);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time treatment-effect test for multi-resolution data"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate a dataset and write long-format CSV");
  std::string sim_scenario = "sim0";
  double sim_delta = 0.3, sim_eps = 0.1;
  std::string sim_schedule = "T2";
  int sim_subjects = 20;
  std::uint64_t sim_seed = 1;
  SamplingPlan sim_plan;
  std::string sim_out;
  sim->add_option("--scenario", sim_scenario, "sim0 | sim1 | sim2 | sim3")->capture_default_str();
  sim->add_option("--delta", sim_delta, "treatment effect")->capture_default_str();
  sim->add_option("--eps", sim_eps, "sim0 diffusion level")->capture_default_str();
  sim->add_option("--schedule", sim_schedule, "T1 | T2 | off | on")->capture_default_str();
  sim->add_option("--subjects", sim_subjects, "number of subjects")->capture_default_str();
  sim->add_option("--seed", sim_seed, "master seed")->capture_default_str();
  sim->add_option("--state-interval", sim_plan.state_interval)->capture_default_str();
  sim->add_option("--outcome-interval", sim_plan.outcome_interval)->capture_default_str();
  sim->add_option("--ns", sim_plan.state_count, "state samples per subject (overrides interval)");
  sim->add_option("--ny", sim_plan.outcome_count, "outcome samples per subject (overrides interval)");
  sim->add_option("--obs-noise", sim_plan.obs_noise_sd, "state observation noise sd");
  sim->add_option("--jitter", sim_plan.jitter, "uniform time jitter half-width");
  sim->add_option("--out", sim_out, "output CSV (default stdout)");

  // test
  auto* tst = app.add_subcommand("test", "run one method on a dataset CSV and write result JSON");
  std::string tst_data, tst_config, tst_out, tst_method = "proposed";
  double tst_alpha = 0.05;
  EstimatorFlags tst_flags;
  tst->add_option("--data", tst_data, "dataset CSV")->required()->check(CLI::ExistingFile);
  tst->add_option("--config", tst_config, "estimator config JSON")->check(CLI::ExistingFile);
  tst->add_option("--method", tst_method, "proposed | t | dml | dtvalue")
      ->check(CLI::IsMember(known_methods()))
      ->capture_default_str();
  tst->add_option("--alpha", tst_alpha, "significance level")->capture_default_str();
  tst_flags.add(*tst);
  tst->add_option("--out", tst_out, "output JSON (default stdout)");

  // power
  auto* pow = app.add_subcommand("power", "Monte Carlo power study");
  std::string pow_config, pow_out, pow_preset;
  std::optional<int> pow_reps, pow_subjects;
  std::optional<std::uint64_t> pow_seed;
  std::optional<double> pow_alpha;
  std::vector<std::string> pow_methods;
  int pow_workers = 0;
  bool pow_quiet = false;
  EstimatorFlags pow_flags;
  pow->add_option("--config", pow_config, "study config JSON")->check(CLI::ExistingFile);
  pow->add_option("--paper-table", pow_preset, "preset: 1 | 2 | sim2 | sim3")
      ->check(CLI::IsMember({"1", "2", "sim2", "sim3"}));
  pow->add_option("--reps", pow_reps, "replications");
  pow->add_option("--subjects", pow_subjects, "subjects per replication");
  pow->add_option("--seed", pow_seed, "master seed");
  pow->add_option("--alpha", pow_alpha, "significance level");
  pow->add_option("--method", pow_methods, "methods to run (repeatable)")->check(CLI::IsMember(known_methods()));
  pow->add_option("--workers", pow_workers, "worker threads (0 = all cores)");
  pow->add_flag("--quiet", pow_quiet, "no summary on stderr");
  pow_flags.add(*pow);
  pow->add_option("--out", pow_out, "table CSV (default stdout); log and manifest are written alongside");

  // sweep
  auto* swp = app.add_subcommand("sweep", "power over a grid of deltas or sample sizes");
  std::string swp_config, swp_out;
  std::vector<double> swp_deltas;
  std::vector<std::string> swp_sizes;
  std::optional<int> swp_reps, swp_subjects;
  std::optional<std::uint64_t> swp_seed;
  std::optional<double> swp_alpha;
  std::vector<std::string> swp_methods;
  int swp_workers = 0;
  bool swp_quiet = false;
  EstimatorFlags swp_flags;
  swp->add_option("--config", swp_config, "study config JSON, optionally with a \"sweep\" key")
      ->check(CLI::ExistingFile);
  swp->add_option("--deltas", swp_deltas, "delta grid");
  swp->add_option("--sizes", swp_sizes, "sample-size grid as ns:ny entries");
  swp->add_option("--reps", swp_reps, "replications");
  swp->add_option("--subjects", swp_subjects, "subjects per replication");
  swp->add_option("--seed", swp_seed, "master seed");
  swp->add_option("--alpha", swp_alpha, "significance level");
  swp->add_option("--method", swp_methods, "methods to run (repeatable)")->check(CLI::IsMember(known_methods()));
  swp->add_option("--workers", swp_workers, "worker threads (0 = all cores)");
  swp->add_flag("--quiet", swp_quiet, "no summary on stderr");
  swp_flags.add(*swp);
  swp->add_option("--out", swp_out, "table CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  auto override_study = [](StudyConfig& c, const std::optional<int>& reps, const std::optional<int>& subjects,
                           const std::optional<std::uint64_t>& seed, const std::optional<double>& alpha,
                           const std::vector<std::string>& methods, const EstimatorFlags& flags) {
    if (reps) c.reps = *reps;
    if (subjects) c.subjects = *subjects;
    if (seed) c.master_seed = *seed;
    if (alpha) c.alpha = *alpha;
    if (!methods.empty()) c.methods = methods;
    flags.apply(c.estimator);
    if (flags.alternative) c.alternative = c.estimator.alternative;
  };

  try {
    if (*sim) {
      const Scenario sc = scenario_by_name(sim_scenario, sim_delta, sim_eps);
      const Dataset ds = simulate_dataset(sc, parse_schedule(sim_schedule), sim_plan, sim_subjects, sim_seed);
      emit(sim_out, dataset_to_csv(ds));
    } else if (*tst) {
      EstimatorConfig cfg;
      if (!tst_config.empty()) cfg = estimator_config_from_json(parse_json_text(read_file(tst_config)));
      tst_flags.apply(cfg);
      if (!(tst_alpha > 0.0 && tst_alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
      const Dataset ds = parse_dataset_csv(tst_data);
      if (tst_method == "proposed") {
        const AteTestResult r = run_test(ds, cfg);
        emit(tst_out, result_document(r, cfg, tst_alpha).dump(2) + "\n");
      } else {
        StudyConfig sc;
        sc.estimator = cfg;
        const BaselineResult r = run_method(tst_method, ds, sc);
        json doc{{"version", std::string(kVersion)},
                 {"method", r.method},
                 {"estimate", r.estimate},
                 {"statistic", r.statistic},
                 {"p_one_sided", r.p_one_sided},
                 {"p_two_sided", r.p_two_sided},
                 {"n", r.n},
                 {"diagnostics", r.diagnostics},
                 {"alpha", tst_alpha},
                 {"reject", r.p_value(cfg.alternative) < tst_alpha},
                 {"config", to_json(cfg)}};
        emit(tst_out, doc.dump(2) + "\n");
      }
    } else if (*pow) {
      if (pow_config.empty() == pow_preset.empty()) {
        throw Error(ErrorCode::InvalidArgument, "give exactly one of --config or --paper-table");
      }
      std::vector<StudyConfig> studies;
      if (!pow_preset.empty()) {
        studies = preset_configs(paper_preset(pow_preset, pow_seed.value_or(1)));
        for (auto& s : studies) override_study(s, pow_reps, pow_subjects, std::nullopt, pow_alpha, pow_methods, pow_flags);
      } else {
        SweepGrid grid;
        StudyConfig c = study_config_from_json(parse_json_text(read_file(pow_config)), &grid);
        override_study(c, pow_reps, pow_subjects, pow_seed, pow_alpha, pow_methods, pow_flags);
        studies = has_grid(grid) ? sweep_configs(c, grid) : std::vector<StudyConfig>{c};
      }
      std::vector<PowerTable> tables;
      for (const auto& s : studies) tables.push_back(run_power_study(s, pow_workers));
      emit_power(pow_out, studies, tables, pow_quiet);
    } else if (*swp) {
      SweepGrid grid;
      StudyConfig c;
      if (!swp_config.empty()) c = study_config_from_json(parse_json_text(read_file(swp_config)), &grid);
      override_study(c, swp_reps, swp_subjects, swp_seed, swp_alpha, swp_methods, swp_flags);
      if (!swp_deltas.empty()) grid.deltas = swp_deltas;
      if (!swp_sizes.empty()) {
        grid.sample_sizes.clear();
        for (const auto& s : swp_sizes) {
          const auto colon = s.find(':');
          try {
            if (colon == std::string::npos) throw std::invalid_argument(s);
            grid.sample_sizes.emplace_back(std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1)));
          } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidArgument, "size must be ns:ny, got '" + s + "'");
          }
        }
      }
      const auto studies = sweep_configs(c, grid);
      std::vector<PowerTable> tables;
      for (const auto& s : studies) tables.push_back(run_power_study(s, swp_workers));
      emit_power(swp_out, studies, tables, swp_quiet);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::InvalidArgument || e.code() == ErrorCode::ParseError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
