#pragma once

// Dataset CSV, JSON configuration and results, power-table CSV, run manifest.
//
// Dataset CSV is long format with the header `subject,time,channel,value`.
// Channels: s1..sd (state coordinates), y (outcome), a (0/1 treatment).

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "cttest/core.hpp"
#include "cttest/harness.hpp"
#include "cttest/simulate.hpp"

namespace cttest {

using json = nlohmann::ordered_json;

inline std::string format_g(double x, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

[[noreturn]] inline void parse_fail(std::size_t line, const std::string& reason) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + reason);
}

struct RawSubject {
  std::map<double, std::map<int, double>> states;  // time -> channel index -> value
  std::map<double, double> outcomes;
  std::map<double, int> actions;
};

// Exact-or-near match against existing keys, to honour the time tolerance.
template <typename V>
bool has_time(const std::map<double, V>& m, double t) {
  auto it = m.lower_bound(t - kTimeTolerance);
  return it != m.end() && std::abs(it->first - t) <= kTimeTolerance;
}

}  // namespace detail

/// Parses long-format CSV text. Rows may be in any order; they are sorted per
/// subject and `a` rows are compressed to change points. Subjects keep the
/// order of their first appearance.
inline Dataset parse_dataset_csv_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) detail::parse_fail(1, "missing header");
  ++line_no;
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (detail::trim(line) != "subject,time,channel,value") {
    detail::parse_fail(1, "header must be exactly 'subject,time,channel,value'");
  }

  std::vector<std::string> order;
  std::map<std::string, detail::RawSubject> raw;
  int d = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto fields = detail::split_commas(line);
    if (fields.size() != 4) detail::parse_fail(line_no, "expected 4 fields, found " + std::to_string(fields.size()));
    const std::string subject(detail::trim(fields[0]));
    if (subject.empty()) detail::parse_fail(line_no, "empty subject id");
    double t = 0.0;
    double value = 0.0;
    if (!detail::parse_double(detail::trim(fields[1]), t)) detail::parse_fail(line_no, "bad time");
    if (!detail::parse_double(detail::trim(fields[3]), value)) detail::parse_fail(line_no, "bad value");
    const std::string_view channel = detail::trim(fields[2]);

    auto [it, inserted] = raw.try_emplace(subject);
    if (inserted) order.push_back(subject);
    auto& rs = it->second;
    if (channel == "y") {
      if (detail::has_time(rs.outcomes, t)) {
        throw Error(ErrorCode::DuplicateTimestamp, "line " + std::to_string(line_no) + ": duplicate y at time " +
                                                       format_g(t, 12) + " for subject '" + subject + "'");
      }
      rs.outcomes[t] = value;
    } else if (channel == "a") {
      if (value != 0.0 && value != 1.0) {
        throw Error(ErrorCode::NonBinaryAction, "line " + std::to_string(line_no) + ": action " + format_g(value, 12) +
                                                    " is not 0 or 1");
      }
      if (detail::has_time(rs.actions, t)) {
        throw Error(ErrorCode::DuplicateTimestamp, "line " + std::to_string(line_no) + ": duplicate a at time " +
                                                       format_g(t, 12) + " for subject '" + subject + "'");
      }
      rs.actions[t] = static_cast<int>(value);
    } else if (channel.size() >= 2 && channel.front() == 's') {
      int k = 0;
      const auto res = std::from_chars(channel.data() + 1, channel.data() + channel.size(), k);
      if (res.ec != std::errc() || res.ptr != channel.data() + channel.size() || k < 1) {
        detail::parse_fail(line_no, "unknown channel '" + std::string(channel) + "'");
      }
      auto slot = rs.states.lower_bound(t - kTimeTolerance);
      if (slot == rs.states.end() || std::abs(slot->first - t) > kTimeTolerance) {
        slot = rs.states.emplace(t, std::map<int, double>{}).first;
      }
      if (!slot->second.emplace(k, value).second) {
        throw Error(ErrorCode::DuplicateTimestamp, "line " + std::to_string(line_no) + ": duplicate s" +
                                                       std::to_string(k) + " at time " + format_g(t, 12) +
                                                       " for subject '" + subject + "'");
      }
      d = std::max(d, k);
    } else {
      detail::parse_fail(line_no, "unknown channel '" + std::string(channel) + "'");
    }
  }

  Dataset ds;
  ds.d = std::max(d, 1);
  for (const auto& id : order) {
    const auto& rs = raw.at(id);
    MultiResTrajectory tr;
    tr.subject_id = id;
    for (const auto& [t, chans] : rs.states) {
      if (static_cast<int>(chans.size()) != d || chans.rbegin()->first != d) {
        throw Error(ErrorCode::MixedDimensions, "subject '" + id + "' at time " + format_g(t, 12) + " has " +
                                                    std::to_string(chans.size()) + " of " + std::to_string(d) +
                                                    " state channels");
      }
      Vec x(d);
      for (const auto& [k, v] : chans) x[k - 1] = v;
      tr.state_obs.push_back({t, std::move(x)});
    }
    for (const auto& [t, y] : rs.outcomes) tr.outcome_obs.push_back({t, y});
    std::vector<ActionChange> sampled;
    for (const auto& [t, a] : rs.actions) sampled.push_back({t, a});
    tr.action_obs = compress_actions(sampled);
    ds.trajectories.push_back(std::move(tr));
  }
  return ds;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot open '" + path + "' for writing");
  out << content;
  out.flush();
  if (!out) throw Error(ErrorCode::IoError, "write to '" + path + "' failed");
}

inline Dataset parse_dataset_csv(const std::string& path) { return parse_dataset_csv_text(read_file(path)); }

/// Times and values with 12 significant digits; actions as change points.
inline std::string dataset_to_csv(const Dataset& ds) {
  std::string out = "subject,time,channel,value\n";
  for (const auto& tr : ds.trajectories) {
    for (const auto& c : tr.action_obs) {
      out += tr.subject_id + "," + format_g(c.time, 12) + ",a," + std::to_string(c.action) + "\n";
    }
    for (const auto& s : tr.state_obs) {
      for (int k = 0; k < s.values.size(); ++k) {
        out += tr.subject_id + "," + format_g(s.time, 12) + ",s" + std::to_string(k + 1) + "," +
               format_g(s.values[k], 12) + "\n";
      }
    }
    for (const auto& y : tr.outcome_obs) {
      out += tr.subject_id + "," + format_g(y.time, 12) + ",y," + format_g(y.value, 12) + "\n";
    }
  }
  return out;
}

inline void write_dataset_csv(const std::string& path, const Dataset& ds) { write_file(path, dataset_to_csv(ds)); }

// ---------------------------------------------------------------- JSON config

namespace detail {

[[noreturn]] inline void config_fail(const std::string& reason) { throw Error(ErrorCode::ParseError, reason); }

inline void reject_unknown(const json& j, std::initializer_list<std::string_view> keys, const char* where) {
  if (!j.is_object()) config_fail(std::string(where) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (auto key : keys) ok = ok || key == k;
    if (!ok) config_fail(std::string(where) + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    config_fail(std::string("key '") + key + "': " + e.what());
  }
}

inline Vec read_vec(const json& j, const char* key) {
  std::vector<double> v;
  read_opt(j, key, v);
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

inline std::string to_string(Alternative a) { return a == Alternative::TwoSided ? "two-sided" : "greater"; }

inline Alternative parse_alternative(const std::string& s) {
  if (s == "greater" || s == "one-sided") return Alternative::OneSidedGreater;
  if (s == "two-sided") return Alternative::TwoSided;
  throw Error(ErrorCode::InvalidArgument, "alternative must be 'greater' or 'two-sided', got '" + s + "'");
}

inline json to_json(const FeatureSpec& f) {
  return json{{"kind", f.kind == FeatureKind::AdditiveBSpline ? "bspline" : "polynomial"},
              {"n_basis", f.n_basis},
              {"degree", f.degree},
              {"max_total_degree", f.max_total_degree},
              {"include_intercept", f.include_intercept},
              {"domain_lo", f.domain_lo},
              {"domain_hi", f.domain_hi}};
}

inline FeatureSpec feature_spec_from_json(const json& j) {
  detail::reject_unknown(j, {"kind", "n_basis", "degree", "max_total_degree", "include_intercept", "domain_lo",
                             "domain_hi"},
                         "basis");
  FeatureSpec f;
  std::string kind = "polynomial";
  detail::read_opt(j, "kind", kind);
  if (kind == "bspline") {
    f.kind = FeatureKind::AdditiveBSpline;
  } else if (kind == "polynomial") {
    f.kind = FeatureKind::PolynomialTensor;
  } else {
    detail::config_fail("basis.kind must be 'bspline' or 'polynomial'");
  }
  detail::read_opt(j, "n_basis", f.n_basis);
  detail::read_opt(j, "degree", f.degree);
  detail::read_opt(j, "max_total_degree", f.max_total_degree);
  detail::read_opt(j, "include_intercept", f.include_intercept);
  detail::read_opt(j, "domain_lo", f.domain_lo);
  detail::read_opt(j, "domain_hi", f.domain_hi);
  return f;
}

inline json to_json(const SmoothingSpec& s) {
  return json{{"degree", s.degree},
              {"n_basis", s.n_basis},
              {"ridge", s.ridge},
              {"knots", s.knot_placement == KnotPlacement::Uniform ? "uniform" : "quantile"},
              {"drift", s.drift_method == DriftMethod::SplineDerivative ? "spline" : "forward"}};
}

inline SmoothingSpec smoothing_spec_from_json(const json& j) {
  detail::reject_unknown(j, {"degree", "n_basis", "ridge", "knots", "drift"}, "smoothing");
  SmoothingSpec s;
  detail::read_opt(j, "degree", s.degree);
  detail::read_opt(j, "n_basis", s.n_basis);
  detail::read_opt(j, "ridge", s.ridge);
  std::string knots = "quantile";
  std::string drift = "forward";
  detail::read_opt(j, "knots", knots);
  detail::read_opt(j, "drift", drift);
  if (knots == "uniform") {
    s.knot_placement = KnotPlacement::Uniform;
  } else if (knots != "quantile") {
    detail::config_fail("smoothing.knots must be 'quantile' or 'uniform'");
  }
  if (drift == "spline") {
    s.drift_method = DriftMethod::SplineDerivative;
  } else if (drift != "forward") {
    detail::config_fail("smoothing.drift must be 'forward' or 'spline'");
  }
  return s;
}

inline json to_json(const ReferenceMeasure& m) {
  switch (m.kind) {
    case ReferenceMeasure::Kind::PointMass: return json{{"kind", "point"}, {"point", detail::to_std(m.point)}};
    case ReferenceMeasure::Kind::UniformGrid:
      return json{{"kind", "grid"}, {"lo", detail::to_std(m.lo)}, {"hi", detail::to_std(m.hi)}, {"n_grid", m.n_grid}};
    case ReferenceMeasure::Kind::EmpiricalInitialStates: break;
  }
  return json{{"kind", "empirical"}};
}

inline ReferenceMeasure reference_measure_from_json(const json& j) {
  detail::reject_unknown(j, {"kind", "point", "lo", "hi", "n_grid"}, "measure");
  std::string kind = "empirical";
  detail::read_opt(j, "kind", kind);
  if (kind == "empirical") return ReferenceMeasure::empirical();
  if (kind == "point") return ReferenceMeasure::point_mass(detail::read_vec(j, "point"));
  if (kind == "grid") {
    int n = 21;
    detail::read_opt(j, "n_grid", n);
    return ReferenceMeasure::uniform_grid(detail::read_vec(j, "lo"), detail::read_vec(j, "hi"), n);
  }
  detail::config_fail("measure.kind must be 'empirical', 'point' or 'grid'");
}

inline json to_json(const EstimatorConfig& c) {
  return json{{"gamma", c.gamma},
              {"ridge", c.ridge},
              {"alternative", to_string(c.alternative)},
              {"basis", to_json(c.basis_spec)},
              {"smoothing", to_json(c.smoothing_spec)},
              {"measure", to_json(c.reference_measure)}};
}

inline EstimatorConfig estimator_config_from_json(const json& j) {
  detail::reject_unknown(j, {"gamma", "ridge", "alternative", "basis", "smoothing", "measure"}, "estimator");
  EstimatorConfig c;
  detail::read_opt(j, "gamma", c.gamma);
  detail::read_opt(j, "ridge", c.ridge);
  if (j.contains("alternative")) c.alternative = parse_alternative(j.at("alternative").get<std::string>());
  if (j.contains("basis")) c.basis_spec = feature_spec_from_json(j.at("basis"));
  if (j.contains("smoothing")) c.smoothing_spec = smoothing_spec_from_json(j.at("smoothing"));
  if (j.contains("measure")) c.reference_measure = reference_measure_from_json(j.at("measure"));
  return c;
}

inline json to_json(const Schedule& s) {
  switch (s.kind) {
    case Schedule::Kind::AlwaysOn: return json{{"kind", "on"}};
    case Schedule::Kind::SquareWave:
      return json{{"kind", "square"}, {"period", s.period}, {"duty", s.duty}, {"phase", s.phase}};
    case Schedule::Kind::Pulses: return json{{"kind", "pulses"}, {"times", s.pulse_times}, {"width", s.width}};
    case Schedule::Kind::AlwaysOff: break;
  }
  return json{{"kind", "off"}};
}

/// Accepts "T1", "T2", "off", "on", or an object with a "kind" key.
inline Schedule schedule_from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "T1") return Schedule::treatment1();
    if (s == "T2") return Schedule::treatment2();
    if (s == "off") return Schedule::always_off();
    if (s == "on") return Schedule::always_on();
    detail::config_fail("schedule must be T1, T2, off, on, or an object");
  }
  detail::reject_unknown(j, {"kind", "period", "duty", "phase", "times", "width"}, "schedule");
  std::string kind;
  detail::read_opt(j, "kind", kind);
  if (kind == "off") return Schedule::always_off();
  if (kind == "on") return Schedule::always_on();
  if (kind == "square") {
    double period = 1.0, duty = 0.5, phase = 0.0;
    detail::read_opt(j, "period", period);
    detail::read_opt(j, "duty", duty);
    detail::read_opt(j, "phase", phase);
    return Schedule::square_wave(period, duty, phase);
  }
  if (kind == "pulses") {
    std::vector<double> times;
    double width = 0.0;
    detail::read_opt(j, "times", times);
    detail::read_opt(j, "width", width);
    return Schedule::pulses(times, width);
  }
  detail::config_fail("schedule.kind must be off, on, square or pulses");
}

inline json to_json(const SamplingPlan& p) {
  return json{{"state_interval", p.state_interval}, {"outcome_interval", p.outcome_interval},
              {"state_count", p.state_count},       {"outcome_count", p.outcome_count},
              {"obs_noise_sd", p.obs_noise_sd},     {"jitter", p.jitter}};
}

inline SamplingPlan sampling_plan_from_json(const json& j) {
  detail::reject_unknown(j, {"state_interval", "outcome_interval", "state_count", "outcome_count", "obs_noise_sd",
                             "jitter"},
                         "plan");
  SamplingPlan p;
  detail::read_opt(j, "state_interval", p.state_interval);
  detail::read_opt(j, "outcome_interval", p.outcome_interval);
  detail::read_opt(j, "state_count", p.state_count);
  detail::read_opt(j, "outcome_count", p.outcome_count);
  detail::read_opt(j, "obs_noise_sd", p.obs_noise_sd);
  detail::read_opt(j, "jitter", p.jitter);
  return p;
}

inline json to_json(const StudyConfig& c) {
  return json{{"scenario", c.scenario},
              {"delta", c.delta},
              {"eps", c.eps},
              {"schedule", to_json(c.schedule)},
              {"plan", to_json(c.plan)},
              {"subjects", c.subjects},
              {"reps", c.reps},
              {"alpha", c.alpha},
              {"alternative", to_string(c.alternative)},
              {"methods", c.methods},
              {"seed", c.master_seed},
              {"dml_folds", c.dml_folds},
              {"estimator", to_json(c.estimator)}};
}

inline json to_json(const SweepGrid& g) {
  json sizes = json::array();
  for (const auto& [ns, ny] : g.sample_sizes) sizes.push_back({ns, ny});
  return json{{"deltas", g.deltas}, {"sample_sizes", sizes}};
}

inline SweepGrid sweep_grid_from_json(const json& j) {
  detail::reject_unknown(j, {"deltas", "sample_sizes"}, "sweep");
  SweepGrid g;
  detail::read_opt(j, "deltas", g.deltas);
  std::vector<std::vector<int>> sizes;
  detail::read_opt(j, "sample_sizes", sizes);
  for (const auto& s : sizes) {
    if (s.size() != 2) detail::config_fail("sweep.sample_sizes entries must be [n_s, n_y]");
    g.sample_sizes.emplace_back(s[0], s[1]);
  }
  return g;
}

/// Study config; an optional "sweep" key is returned through `grid`.
inline StudyConfig study_config_from_json(const json& j, SweepGrid* grid = nullptr) {
  detail::reject_unknown(j, {"scenario", "delta", "eps", "schedule", "plan", "subjects", "reps", "alpha", "alternative",
                             "methods", "seed", "dml_folds", "estimator", "sweep"},
                         "study");
  StudyConfig c;
  detail::read_opt(j, "scenario", c.scenario);
  detail::read_opt(j, "delta", c.delta);
  detail::read_opt(j, "eps", c.eps);
  if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("plan")) c.plan = sampling_plan_from_json(j.at("plan"));
  detail::read_opt(j, "subjects", c.subjects);
  detail::read_opt(j, "reps", c.reps);
  detail::read_opt(j, "alpha", c.alpha);
  if (j.contains("alternative")) c.alternative = parse_alternative(j.at("alternative").get<std::string>());
  detail::read_opt(j, "methods", c.methods);
  detail::read_opt(j, "seed", c.master_seed);
  detail::read_opt(j, "dml_folds", c.dml_folds);
  if (j.contains("estimator")) c.estimator = estimator_config_from_json(j.at("estimator"));
  if (grid != nullptr && j.contains("sweep")) *grid = sweep_grid_from_json(j.at("sweep"));
  return c;
}

inline json parse_json_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("invalid JSON: ") + e.what());
  }
}

// ---------------------------------------------------------------- results

inline json to_json(const AteTestResult& r) {
  return json{{"tau_hat", r.tau_hat},
              {"sigma_hat", r.sigma_hat},
              {"z", r.z},
              {"p_one_sided", r.p_one_sided},
              {"p_two_sided", r.p_two_sided},
              {"beta0", detail::to_std(r.beta0)},
              {"beta1", detail::to_std(r.beta1)},
              {"n_eff", r.n_eff},
              {"cond_sigma", r.cond_sigma},
              {"diagnostics", r.diagnostics}};
}

inline AteTestResult ate_result_from_json(const json& j) {
  AteTestResult r;
  try {
    r.tau_hat = j.at("tau_hat").get<double>();
    r.sigma_hat = j.at("sigma_hat").get<double>();
    r.z = j.at("z").get<double>();
    r.p_one_sided = j.at("p_one_sided").get<double>();
    r.p_two_sided = j.at("p_two_sided").get<double>();
    r.beta0 = detail::read_vec(j, "beta0");
    r.beta1 = detail::read_vec(j, "beta1");
    r.n_eff = j.at("n_eff").get<std::int64_t>();
    r.cond_sigma = j.at("cond_sigma").get<double>();
    r.diagnostics = j.at("diagnostics").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("result JSON: ") + e.what());
  }
  return r;
}

/// Result document: version, the result fields, the decision at alpha, and the config echo.
inline json result_document(const AteTestResult& r, const EstimatorConfig& config, double alpha) {
  json doc{{"version", std::string(kVersion)}, {"method", "proposed"}};
  const json fields = to_json(r);
  for (const auto& [k, v] : fields.items()) doc[k] = v;
  doc["alpha"] = alpha;
  doc["reject"] = r.p_value(config.alternative) < alpha;
  doc["config"] = to_json(config);
  return doc;
}

inline void write_result_json(const std::string& path, const AteTestResult& r, const EstimatorConfig& config,
                              double alpha) {
  write_file(path, result_document(r, config, alpha).dump(2) + "\n");
}

inline AteTestResult read_result_json(const std::string& path) {
  return ate_result_from_json(parse_json_text(read_file(path)));
}

// ---------------------------------------------------------------- power tables

inline constexpr std::string_view kPowerCsvHeader = "label,method,p_hat,se,failures,rejections,reps";

namespace detail {

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Splits one CSV record honouring double quotes.
inline std::vector<std::string> split_quoted(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  if (quoted) parse_fail(line_no, "unterminated quote");
  return out;
}

}  // namespace detail

inline std::string power_tables_to_csv(const std::vector<PowerTable>& tables) {
  std::string out = std::string(kPowerCsvHeader) + "\n";
  for (const auto& t : tables) {
    for (const auto& m : t.methods) {
      out += detail::csv_quote(t.label) + "," + m.method + "," + format_g(m.p_hat, 17) + "," + format_g(m.se, 17) +
             "," + std::to_string(m.failures) + "," + std::to_string(m.rejections) + "," + std::to_string(m.reps) +
             "\n";
    }
  }
  return out;
}

/// Inverse of power_tables_to_csv; consecutive rows with one label form one table.
inline std::vector<PowerTable> parse_power_csv_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kPowerCsvHeader) {
    detail::parse_fail(1, "header must be '" + std::string(kPowerCsvHeader) + "'");
  }
  std::vector<PowerTable> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split_quoted(line, line_no);
    if (f.size() != 7) detail::parse_fail(line_no, "expected 7 fields");
    MethodPower m;
    m.method = f[1];
    try {
      m.p_hat = std::stod(f[2]);
      m.se = std::stod(f[3]);
      m.failures = std::stoi(f[4]);
      m.rejections = std::stoi(f[5]);
      m.reps = std::stoi(f[6]);
    } catch (const std::exception&) {
      detail::parse_fail(line_no, "bad numeric field");
    }
    if (out.empty() || out.back().label != f[0]) out.push_back(PowerTable{f[0], {}, {}});
    out.back().methods.push_back(m);
  }
  return out;
}

inline void write_power_csv(const std::string& path, const std::vector<PowerTable>& tables) {
  write_file(path, power_tables_to_csv(tables));
}

inline std::vector<PowerTable> read_power_csv(const std::string& path) {
  return parse_power_csv_text(read_file(path));
}

inline std::string replication_log_to_csv(const std::vector<PowerTable>& tables) {
  std::string out = "label,replication,seed,method,estimate,statistic,p_value,reject,failed,diagnostic\n";
  for (const auto& t : tables) {
    for (const auto& r : t.log) {
      out += detail::csv_quote(t.label) + "," + std::to_string(r.replication) + "," + std::to_string(r.seed) + "," +
             r.method + "," + format_g(r.estimate, 17) + "," + format_g(r.statistic, 17) + "," +
             format_g(r.p_value, 17) + "," + (r.reject ? "1" : "0") + "," + (r.failed ? "1" : "0") + "," +
             detail::csv_quote(r.diagnostic) + "\n";
    }
  }
  return out;
}

/// Manifest for a power run: configs, per-study seeds, output paths.
inline json run_manifest(const std::vector<StudyConfig>& studies, const std::vector<PowerTable>& tables,
                         const std::string& table_path, const std::string& log_path) {
  json doc{{"version", std::string(kVersion)}};
  json entries = json::array();
  for (std::size_t k = 0; k < studies.size(); ++k) {
    json e = to_json(studies[k]);
    e["label"] = k < tables.size() ? tables[k].label : studies[k].label();
    entries.push_back(e);
  }
  doc["studies"] = entries;
  doc["table_csv"] = table_path;
  doc["replication_log_csv"] = log_path;
  return doc;
}

}  // namespace cttest
