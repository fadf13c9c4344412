#pragma once

// Monte Carlo power studies: simulate, run every method, aggregate rejection
// rates. Replications run on worker threads but each one depends only on its
// index, so results do not depend on scheduling or worker count.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cttest/baselines.hpp"
#include "cttest/core.hpp"
#include "cttest/estimator.hpp"
#include "cttest/simulate.hpp"

namespace cttest {

inline const std::vector<std::string>& known_methods() {
  static const std::vector<std::string> names{"proposed", "t", "dml", "dtvalue"};
  return names;
}

struct StudyConfig {
  std::string scenario = "sim0";
  double delta = 0.3;
  double eps = 0.1;
  Schedule schedule = Schedule::treatment2();
  SamplingPlan plan;
  int subjects = 20;
  int reps = 200;
  double alpha = 0.05;
  Alternative alternative = Alternative::OneSidedGreater;
  std::vector<std::string> methods = known_methods();
  std::uint64_t master_seed = 1;
  EstimatorConfig estimator;
  int dml_folds = 2;

  void validate() const {
    if (reps < 1) throw Error(ErrorCode::InvalidArgument, "reps must be >= 1");
    if (subjects < 1) throw Error(ErrorCode::InvalidArgument, "subjects must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
    if (methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods selected");
    for (const auto& m : methods) {
      if (std::find(known_methods().begin(), known_methods().end(), m) == known_methods().end()) {
        throw Error(ErrorCode::InvalidArgument, "unknown method '" + m + "'");
      }
    }
    if (dml_folds < 2) throw Error(ErrorCode::InvalidArgument, "dml_folds must be >= 2");
    estimator.validate();
    (void)scenario_by_name(scenario, delta, eps).steps();
  }

  std::string label() const {
    std::string out = scenario + " " + schedule.label() + " delta=" + format_number(delta);
    if (scenario == "sim0") out += " eps=" + format_number(eps);
    if (plan.state_count > 0 || plan.outcome_count > 0) {
      out += " ns=" + std::to_string(plan.state_count) + " ny=" + std::to_string(plan.outcome_count);
    }
    return out;
  }

  static std::string format_number(double x) {
    std::string s = std::to_string(x);
    s.erase(s.find_last_not_of('0') + 1);
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }
};

/// One method on one replication.
struct ReplicationRecord {
  int replication = 0;
  std::uint64_t seed = 0;
  std::string method;
  double estimate = 0.0;
  double statistic = 0.0;
  double p_value = 1.0;
  bool reject = false;
  bool failed = false;
  std::string diagnostic;
};

struct MethodPower {
  std::string method;
  int reps = 0;
  int rejections = 0;
  int failures = 0;
  double p_hat = 0.0;
  double se = 0.0;
};

struct PowerTable {
  std::string label;
  std::vector<MethodPower> methods;
  std::vector<ReplicationRecord> log;  // replication-major, methods in config order

  const MethodPower& at(const std::string& method) const {
    for (const auto& m : methods) {
      if (m.method == method) return m;
    }
    throw Error(ErrorCode::InvalidArgument, "method '" + method + "' not in table");
  }
};

inline double monte_carlo_se(double p_hat, int reps) { return std::sqrt(p_hat * (1.0 - p_hat) / reps); }

inline BaselineResult run_method(const std::string& method, const Dataset& dataset, const StudyConfig& config) {
  if (method == "proposed") return as_method_result(run_test(dataset, config.estimator));
  if (method == "t") return welch_t_test(dataset);
  if (method == "dml") return dml_test(dataset, config.dml_folds);
  if (method == "dtvalue") return discrete_time_value_test(dataset, config.estimator);
  throw Error(ErrorCode::InvalidArgument, "unknown method '" + method + "'");
}

inline std::uint64_t replication_seed(std::uint64_t master_seed, int replication) {
  return derive_seed(master_seed, static_cast<std::uint64_t>(replication));
}

namespace detail {

inline std::vector<ReplicationRecord> run_replication(const StudyConfig& config, const Scenario& sc, int r) {
  const std::uint64_t seed = replication_seed(config.master_seed, r);
  std::vector<ReplicationRecord> out;
  out.reserve(config.methods.size());
  Dataset ds;
  std::string sim_error;
  try {
    ds = simulate_dataset(sc, config.schedule, config.plan, config.subjects, seed);
  } catch (const std::exception& e) {
    sim_error = e.what();
  }
  for (const auto& method : config.methods) {
    ReplicationRecord rec;
    rec.replication = r;
    rec.seed = seed;
    rec.method = method;
    if (!sim_error.empty()) {
      rec.failed = true;
      rec.diagnostic = "simulation failed: " + sim_error;
      out.push_back(std::move(rec));
      continue;
    }
    try {
      const BaselineResult res = run_method(method, ds, config);
      rec.estimate = res.estimate;
      rec.statistic = res.statistic;
      rec.p_value = res.p_value(config.alternative);
      rec.reject = rec.p_value < config.alpha;
      for (const auto& d : res.diagnostics) rec.diagnostic += (rec.diagnostic.empty() ? "" : "; ") + d;
    } catch (const std::exception& e) {
      // Counted as a non-rejection and flagged.
      rec.failed = true;
      rec.diagnostic = e.what();
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace detail

/// workers = 0 uses the hardware concurrency.
inline PowerTable run_power_study(const StudyConfig& config, int workers = 0) {
  config.validate();
  const Scenario sc = scenario_by_name(config.scenario, config.delta, config.eps);
  const int reps = config.reps;
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, reps);

  std::vector<std::vector<ReplicationRecord>> per_rep(reps);
  std::atomic<int> next{0};
  auto work = [&] {
    for (int r = next++; r < reps; r = next++) per_rep[r] = detail::run_replication(config, sc, r);
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }

  PowerTable table;
  table.label = config.label();
  for (const auto& m : config.methods) table.methods.push_back({m, reps, 0, 0, 0.0, 0.0});
  for (auto& recs : per_rep) {
    for (std::size_t k = 0; k < recs.size(); ++k) {
      table.methods[k].rejections += recs[k].reject ? 1 : 0;
      table.methods[k].failures += recs[k].failed ? 1 : 0;
      table.log.push_back(std::move(recs[k]));
    }
  }
  for (auto& m : table.methods) {
    m.p_hat = static_cast<double>(m.rejections) / reps;
    m.se = monte_carlo_se(m.p_hat, reps);
  }
  return table;
}

struct SweepGrid {
  std::vector<double> deltas;
  std::vector<std::pair<int, int>> sample_sizes;  // (n_s, n_y) per subject over [0, t_end]
};

/// Configs for each grid point; point g uses master_seed + g. Deltas come
/// first, then sample sizes.
inline std::vector<StudyConfig> sweep_configs(const StudyConfig& config, const SweepGrid& grid) {
  std::vector<StudyConfig> out;
  std::uint64_t g = 0;
  for (double delta : grid.deltas) {
    StudyConfig c = config;
    c.delta = delta;
    c.master_seed = config.master_seed + g++;
    out.push_back(c);
  }
  for (const auto& [ns, ny] : grid.sample_sizes) {
    if (ns < 2 || ny < 1) throw Error(ErrorCode::InvalidArgument, "sample sizes need n_s >= 2 and n_y >= 1");
    StudyConfig c = config;
    c.plan.state_count = ns;
    c.plan.outcome_count = ny;
    c.master_seed = config.master_seed + g++;
    out.push_back(c);
  }
  return out;
}

/// One study per grid point. An empty grid yields no tables.
inline std::vector<PowerTable> sweep(const StudyConfig& config, const SweepGrid& grid, int workers = 0) {
  std::vector<PowerTable> out;
  for (const auto& c : sweep_configs(config, grid)) out.push_back(run_power_study(c, workers));
  return out;
}

/// Study configurations behind each reproduced table.
///   "1"    Sim0, both schedules, eps in {0.1, 0.3}, delta in {0.3, 0}
///   "2"    Sim1, Sim2, Sim3 at delta = 0.3 (long-period schedule)
///   "sim2" Sim1 sample-size sweep {(25,12), (50,25), (100,50)}
///   "sim3" Sim1 delta sweep {0, 0.1, 0.2, 0.3}
struct Preset {
  std::vector<StudyConfig> studies;
  SweepGrid grid;  // applied to studies.front() when non-empty
};

inline Preset paper_preset(const std::string& name, std::uint64_t seed) {
  Preset p;
  StudyConfig base;
  base.master_seed = seed;
  if (name == "1") {
    std::uint64_t k = 0;
    for (int sched : {1, 2}) {
      for (double eps : {0.1, 0.3}) {
        for (double delta : {0.3, 0.0}) {
          StudyConfig c = base;
          c.scenario = "sim0";
          c.schedule = sched == 1 ? Schedule::treatment1() : Schedule::treatment2();
          c.eps = eps;
          c.delta = delta;
          c.master_seed = seed + k++;
          p.studies.push_back(c);
        }
      }
    }
  } else if (name == "2") {
    std::uint64_t k = 0;
    for (const char* sc : {"sim1", "sim2", "sim3"}) {
      StudyConfig c = base;
      c.scenario = sc;
      c.delta = 0.3;
      c.master_seed = seed + k++;
      p.studies.push_back(c);
    }
  } else if (name == "sim2" || name == "sim3") {
    StudyConfig c = base;
    c.scenario = "sim1";
    c.delta = 0.3;
    p.studies.push_back(c);
    if (name == "sim2") {
      p.grid.sample_sizes = {{25, 12}, {50, 25}, {100, 50}};
    } else {
      p.grid.deltas = {0.0, 0.1, 0.2, 0.3};
    }
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown paper table '" + name + "' (expected 1, 2, sim2, sim3)");
  }
  return p;
}

inline bool has_grid(const SweepGrid& g) { return !g.deltas.empty() || !g.sample_sizes.empty(); }

/// Every study a preset runs, in order.
inline std::vector<StudyConfig> preset_configs(const Preset& preset) {
  return has_grid(preset.grid) ? sweep_configs(preset.studies.front(), preset.grid) : preset.studies;
}

inline std::vector<PowerTable> run_preset(const Preset& preset, int workers = 0) {
  std::vector<PowerTable> out;
  for (const auto& s : preset_configs(preset)) out.push_back(run_power_study(s, workers));
  return out;
}

}  // namespace cttest
