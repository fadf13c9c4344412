#pragma once

// Shared domain types: multi-resolution trajectories, datasets, estimator
// configuration, test results, the error type and dataset validation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cttest {

inline constexpr std::string_view kVersion = "1.0.0";

/// Two times closer than this are treated as the same instant.
inline constexpr double kTimeTolerance = 1e-9;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class ErrorCode {
  InvalidArgument,
  InvalidDataset,
  DegenerateDomain,
  InsufficientObservations,
  SingularDesign,
  NoSamples,
  EmptySystem,
  SingleActionSystem,
  SingularSigma,
  NonPositiveVariance,
  GridMismatch,
  EmptyGroup,
  SingularNuisance,
  ParseError,
  MixedDimensions,
  NonBinaryAction,
  DuplicateTimestamp,
  IoError,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidDataset: return "InvalidDataset";
    case ErrorCode::DegenerateDomain: return "DegenerateDomain";
    case ErrorCode::InsufficientObservations: return "InsufficientObservations";
    case ErrorCode::SingularDesign: return "SingularDesign";
    case ErrorCode::NoSamples: return "NoSamples";
    case ErrorCode::EmptySystem: return "EmptySystem";
    case ErrorCode::SingleActionSystem: return "SingleActionSystem";
    case ErrorCode::SingularSigma: return "SingularSigma";
    case ErrorCode::NonPositiveVariance: return "NonPositiveVariance";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::SingularNuisance: return "SingularNuisance";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MixedDimensions: return "MixedDimensions";
    case ErrorCode::NonBinaryAction: return "NonBinaryAction";
    case ErrorCode::DuplicateTimestamp: return "DuplicateTimestamp";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct StateObservation {
  double time = 0.0;
  Vec values;
};

struct OutcomeObservation {
  double time = 0.0;
  double value = 0.0;
};

/// A change point of the piecewise-constant treatment process.
struct ActionChange {
  double time = 0.0;
  int action = 0;
};

/// One subject's state, outcome and treatment channels, each on its own grid.
struct MultiResTrajectory {
  std::string subject_id;
  std::vector<StateObservation> state_obs;
  std::vector<OutcomeObservation> outcome_obs;
  std::vector<ActionChange> action_obs;

  /// Action in force at t: the latest change point at or before t.
  /// Times before the first change point resolve to the first action.
  int resolve_action(double t) const {
    if (action_obs.empty()) return 0;
    auto it = std::upper_bound(action_obs.begin(), action_obs.end(), t + kTimeTolerance,
                               [](double x, const ActionChange& c) { return x < c.time; });
    if (it == action_obs.begin()) return action_obs.front().action;
    return std::prev(it)->action;
  }

  /// True if a change point lies strictly inside (t0, t1).
  bool action_changes_within(double t0, double t1) const {
    for (const auto& c : action_obs) {
      if (c.time > t0 + kTimeTolerance && c.time < t1 - kTimeTolerance &&
          resolve_action(c.time) != resolve_action(t0)) {
        return true;
      }
    }
    return false;
  }

  /// Index of the state observation at time t (within kTimeTolerance), if any.
  std::optional<std::size_t> state_index_at(double t) const {
    auto it = std::lower_bound(state_obs.begin(), state_obs.end(), t - kTimeTolerance,
                               [](const StateObservation& o, double x) { return o.time < x; });
    if (it != state_obs.end() && std::abs(it->time - t) <= kTimeTolerance) {
      return static_cast<std::size_t>(it - state_obs.begin());
    }
    return std::nullopt;
  }
};

/// Collapses a sampled 0/1 action series to change points. Input must be time-sorted.
inline std::vector<ActionChange> compress_actions(const std::vector<ActionChange>& sampled) {
  std::vector<ActionChange> out;
  for (const auto& s : sampled) {
    if (out.empty() || out.back().action != s.action) out.push_back(s);
  }
  return out;
}

struct Dataset {
  std::vector<MultiResTrajectory> trajectories;
  int d = 1;
};

enum class DiagnosticKind {
  EmptyDataset,
  EmptyTrajectory,
  NonMonotoneTimes,
  MissingInitialAction,
  NonBinaryAction,
  DimensionMismatch,
  SingleActionData,
};

inline std::string_view to_string(DiagnosticKind k) {
  switch (k) {
    case DiagnosticKind::EmptyDataset: return "EmptyDataset";
    case DiagnosticKind::EmptyTrajectory: return "EmptyTrajectory";
    case DiagnosticKind::NonMonotoneTimes: return "NonMonotoneTimes";
    case DiagnosticKind::MissingInitialAction: return "MissingInitialAction";
    case DiagnosticKind::NonBinaryAction: return "NonBinaryAction";
    case DiagnosticKind::DimensionMismatch: return "DimensionMismatch";
    case DiagnosticKind::SingleActionData: return "SingleActionData";
  }
  return "Unknown";
}

struct Diagnostic {
  DiagnosticKind kind;
  std::string message;
};

namespace detail {

template <typename Obs>
bool strictly_increasing(const std::vector<Obs>& obs) {
  for (std::size_t k = 1; k < obs.size(); ++k) {
    if (!(obs[k].time > obs[k - 1].time)) return false;
  }
  return true;
}

}  // namespace detail

/// Checks every dataset invariant and reports one diagnostic per violation.
inline std::vector<Diagnostic> validate_dataset(const Dataset& dataset) {
  std::vector<Diagnostic> out;
  if (dataset.trajectories.empty()) {
    out.push_back({DiagnosticKind::EmptyDataset, "dataset has no trajectories"});
    return out;
  }
  if (dataset.d < 1) {
    out.push_back({DiagnosticKind::DimensionMismatch, "state dimension must be >= 1"});
  }
  bool seen[2] = {false, false};
  for (const auto& tr : dataset.trajectories) {
    const std::string who = "subject '" + tr.subject_id + "': ";
    if (tr.state_obs.empty() || tr.outcome_obs.empty()) {
      out.push_back({DiagnosticKind::EmptyTrajectory, who + "no state or no outcome observations"});
    }
    if (!detail::strictly_increasing(tr.state_obs)) {
      out.push_back({DiagnosticKind::NonMonotoneTimes, who + "state times not strictly increasing"});
    }
    if (!detail::strictly_increasing(tr.outcome_obs)) {
      out.push_back({DiagnosticKind::NonMonotoneTimes, who + "outcome times not strictly increasing"});
    }
    if (!detail::strictly_increasing(tr.action_obs)) {
      out.push_back({DiagnosticKind::NonMonotoneTimes, who + "action times not strictly increasing"});
    }
    if (tr.action_obs.empty() || std::abs(tr.action_obs.front().time) > kTimeTolerance) {
      out.push_back({DiagnosticKind::MissingInitialAction, who + "no action recorded at time 0"});
    }
    bool bad_dim = false;
    for (const auto& s : tr.state_obs) {
      if (s.values.size() != dataset.d) bad_dim = true;
    }
    if (bad_dim) {
      out.push_back({DiagnosticKind::DimensionMismatch,
                     who + "state vectors do not all have dimension " + std::to_string(dataset.d)});
    }
    bool bad_action = false;
    for (const auto& a : tr.action_obs) {
      if (a.action != 0 && a.action != 1) bad_action = true;
    }
    if (bad_action) out.push_back({DiagnosticKind::NonBinaryAction, who + "action outside {0,1}"});
    for (const auto& y : tr.outcome_obs) {
      int a = tr.resolve_action(y.time);
      if (a == 0 || a == 1) seen[a] = true;
    }
  }
  if (!(seen[0] && seen[1])) {
    out.push_back({DiagnosticKind::SingleActionData,
                   "outcomes observed under only one action; one value block has no data"});
  }
  return out;
}

enum class Alternative { OneSidedGreater, TwoSided };

enum class KnotPlacement { TimeQuantiles, Uniform };

/// How the drift D(t) at an observed state is estimated.
/// ForwardDifference: (X(t') - X(t)) / (t' - t), with t' the last state sample
/// before the next outcome time or action change; non-anticipating, so it stays valid under
/// process noise. SplineDerivative: derivative of the fitted spline.
/// Imputed states always use the spline derivative.
enum class DriftMethod { ForwardDifference, SplineDerivative };

struct SmoothingSpec {
  int degree = 3;
  /// 0 selects the rule min(floor(n_s / 2), 15).
  int n_basis = 0;
  double ridge = 1e-8;
  KnotPlacement knot_placement = KnotPlacement::TimeQuantiles;
  DriftMethod drift_method = DriftMethod::ForwardDifference;

  int resolve_n_basis(std::size_t n_obs) const {
    if (n_basis > 0) return n_basis;
    return std::max(degree + 1, std::min(static_cast<int>(n_obs / 2), 15));
  }
};

enum class FeatureKind { AdditiveBSpline, PolynomialTensor };

struct FeatureSpec {
  FeatureKind kind = FeatureKind::PolynomialTensor;
  int n_basis = 6;
  int degree = 3;
  int max_total_degree = 1;
  bool include_intercept = true;
  /// Per-dimension domain; empty means pooled empirical range expanded by 5%.
  std::vector<double> domain_lo;
  std::vector<double> domain_hi;
};

struct ReferenceMeasure {
  enum class Kind { EmpiricalInitialStates, PointMass, UniformGrid };
  Kind kind = Kind::EmpiricalInitialStates;
  Vec point;
  Vec lo;
  Vec hi;
  int n_grid = 21;

  static ReferenceMeasure empirical() { return {}; }
  static ReferenceMeasure point_mass(Vec s0) {
    ReferenceMeasure m;
    m.kind = Kind::PointMass;
    m.point = std::move(s0);
    return m;
  }
  static ReferenceMeasure uniform_grid(Vec lo, Vec hi, int n_grid) {
    ReferenceMeasure m;
    m.kind = Kind::UniformGrid;
    m.lo = std::move(lo);
    m.hi = std::move(hi);
    m.n_grid = n_grid;
    return m;
  }
};

struct EstimatorConfig {
  double gamma = 0.9;
  FeatureSpec basis_spec;
  SmoothingSpec smoothing_spec;
  ReferenceMeasure reference_measure;
  double ridge = 1e-8;
  Alternative alternative = Alternative::OneSidedGreater;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw Error(ErrorCode::InvalidArgument, "gamma must lie in (0,1)");
    if (!(ridge >= 0.0)) throw Error(ErrorCode::InvalidArgument, "ridge must be >= 0");
    if (!(smoothing_spec.ridge >= 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing ridge must be >= 0");
  }
};

struct AteTestResult {
  double tau_hat = 0.0;
  double sigma_hat = 0.0;
  double z = 0.0;
  double p_one_sided = 1.0;
  double p_two_sided = 1.0;
  Vec beta0;
  Vec beta1;
  std::int64_t n_eff = 0;
  double cond_sigma = 0.0;
  std::vector<std::string> diagnostics;

  double p_value(Alternative alt) const {
    return alt == Alternative::TwoSided ? p_two_sided : p_one_sided;
  }
};

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Upper-tail p-value 1 - Phi(z), computed without cancellation.
inline double normal_upper_tail(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace cttest
