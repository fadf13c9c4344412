#pragma once

// Estimating-equation system for the two constant-policy value functions,
// the plug-in ATE, its sandwich variance and the resulting Z-test.
//
// For every outcome time t with action a, the value-function coefficients
// beta_a satisfy in expectation
//
//   Psi(S_t) * { y_t + log(gamma) Psi(S_t)' beta_a + <grad Psi(S_t)' beta_a, D_t> } = 0,
//
// where D_t is the drift of the state path. Stacking these over subjects and
// times gives a block-diagonal linear system Sigma beta = eta.

#include <array>
#include <concepts>
#include <span>
#include <string>
#include <vector>

#include "cttest/core.hpp"
#include "cttest/features.hpp"
#include "cttest/splines.hpp"

namespace cttest {

/// Anything that supplies a state path and its time derivative on [t_min, t_max].
template <typename T>
concept TrajectoryModel = requires(const T& m, double t) {
  { m.state(t) } -> std::convertible_to<Vec>;
  { m.drift(t) } -> std::convertible_to<Vec>;
  { m.t_min() } -> std::convertible_to<double>;
  { m.t_max() } -> std::convertible_to<double>;
};

/// One row of the estimating equation. The temporal-difference error at a
/// coefficient vector beta is `outcome - row_vec' beta`.
struct TdTerm {
  std::size_t subject = 0;
  double time = 0.0;
  int action = 0;
  Vec psi_vec;
  Vec row_vec;
  double outcome = 0.0;
  Vec state;
  Vec drift;
};

struct AssembledSystem {
  int m = 0;
  std::array<Mat, 2> sigma_blocks;
  std::array<Vec, 2> eta_blocks;
  std::vector<TdTerm> terms;
  std::int64_t n_eff = 0;
  std::vector<std::string> diagnostics;

  Mat sigma_hat() const {
    Mat out = Mat::Zero(2 * m, 2 * m);
    out.topLeftCorner(m, m) = sigma_blocks[0];
    out.bottomRightCorner(m, m) = sigma_blocks[1];
    return out;
  }

  Vec eta_hat() const {
    Vec out(2 * m);
    out << eta_blocks[0], eta_blocks[1];
    return out;
  }
};

/// Averages the per-term blocks with weight 1/n_eff. Summation runs in term
/// order, so the result is deterministic.
inline AssembledSystem make_system(std::vector<TdTerm> terms, int m, std::vector<std::string> diagnostics = {}) {
  if (terms.empty()) throw Error(ErrorCode::EmptySystem, "no temporal-difference terms survived assembly");
  AssembledSystem sys;
  sys.m = m;
  sys.diagnostics = std::move(diagnostics);
  for (int a = 0; a < 2; ++a) {
    sys.sigma_blocks[a] = Mat::Zero(m, m);
    sys.eta_blocks[a] = Vec::Zero(m);
  }
  std::array<std::int64_t, 2> counts{0, 0};
  for (const auto& term : terms) {
    const int a = term.action;
    sys.sigma_blocks[a].noalias() += term.psi_vec * term.row_vec.transpose();
    sys.eta_blocks[a] += term.psi_vec * term.outcome;
    ++counts[a];
  }
  if (counts[0] == 0 || counts[1] == 0) {
    throw Error(ErrorCode::SingleActionSystem,
                "all terms share action " + std::to_string(counts[0] == 0 ? 1 : 0));
  }
  sys.n_eff = static_cast<std::int64_t>(terms.size());
  const double inv_n = 1.0 / static_cast<double>(sys.n_eff);
  for (int a = 0; a < 2; ++a) {
    sys.sigma_blocks[a] *= inv_n;
    sys.eta_blocks[a] *= inv_n;
  }
  sys.terms = std::move(terms);
  return sys;
}

/// Continuous-time row: -log(gamma) Psi(s) - grad Psi(s)' D.
inline Vec continuous_row(const FeatureMap& fm, const Vec& state, const Vec& drift, double gamma) {
  return -std::log(gamma) * fm.psi(state) - fm.grad_psi(state).transpose() * drift;
}

/// One term per outcome observation. The state is the exact observation when
/// one exists at the outcome time, otherwise the model's imputed state; the
/// drift always comes from the model.
template <TrajectoryModel Model>
AssembledSystem assemble(const Dataset& dataset, const EstimatorConfig& config, std::span<const Model> models,
                         const FeatureMap& fm) {
  if (models.size() != dataset.trajectories.size()) {
    throw Error(ErrorCode::InvalidArgument, "need one trajectory model per subject");
  }
  std::vector<TdTerm> terms;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    const auto& tr = dataset.trajectories[i];
    const auto& model = models[i];
    for (const auto& y : tr.outcome_obs) {
      if (y.time < model.t_min() - kTimeTolerance || y.time > model.t_max() + kTimeTolerance) {
        ++dropped;
        continue;
      }
      TdTerm term;
      term.subject = i;
      term.time = y.time;
      term.action = tr.resolve_action(y.time);
      if (auto idx = tr.state_index_at(y.time)) {
        term.state = tr.state_obs[*idx].values;
      } else {
        term.state = model.state(y.time);
      }
      term.drift = model.drift(y.time);
      term.psi_vec = fm.psi(term.state);
      term.row_vec = continuous_row(fm, term.state, term.drift, config.gamma);
      term.outcome = y.value;
      terms.push_back(std::move(term));
    }
  }
  std::vector<std::string> diagnostics;
  if (dropped > 0) {
    diagnostics.push_back(std::to_string(dropped) + " outcome times outside their spline domain were dropped");
  }
  return make_system(std::move(terms), fm.size(), std::move(diagnostics));
}

inline constexpr double kConditionThreshold = 1e10;

struct BetaSolution {
  Vec beta0;
  Vec beta1;
  /// Per-block linear map eta_a -> beta_a actually used (inverse or ridge inverse).
  std::array<Mat, 2> solve_map;
  std::array<double, 2> condition{0.0, 0.0};
  std::array<bool, 2> regularized{false, false};
  std::vector<std::string> diagnostics;

  const Vec& beta(int a) const { return a == 0 ? beta0 : beta1; }
  double max_condition() const { return std::max(condition[0], condition[1]); }
};

/// Solves each action block on its own. A block whose condition number
/// exceeds 1e10 is re-solved as (S'S + lambda I)^{-1} S' eta with
/// lambda = ridge * tr(S'S) / M.
inline BetaSolution solve_beta(const AssembledSystem& system, double ridge) {
  if (!(ridge >= 0.0)) throw Error(ErrorCode::InvalidArgument, "ridge must be >= 0");
  BetaSolution sol;
  const int m = system.m;
  for (int a = 0; a < 2; ++a) {
    const Mat& block = system.sigma_blocks[a];
    Eigen::JacobiSVD<Mat> svd(block);
    const auto& sv = svd.singularValues();
    const double smax = sv(0);
    const double smin = sv(sv.size() - 1);
    const bool singular = !(smax > 0.0) || smin <= smax * m * std::numeric_limits<double>::epsilon();
    sol.condition[a] = singular ? std::numeric_limits<double>::infinity() : smax / smin;

    if (sol.condition[a] > kConditionThreshold) {
      if (ridge == 0.0) {
        if (singular) {
          throw Error(ErrorCode::SingularSigma, "Sigma block " + std::to_string(a) + " is singular and ridge = 0");
        }
        sol.solve_map[a] = block.fullPivLu().inverse();
        sol.diagnostics.push_back("Sigma block " + std::to_string(a) + " ill-conditioned (cond " +
                                  std::to_string(sol.condition[a]) + "), solved without ridge");
      } else {
        const Mat gram = block.transpose() * block;
        const double lambda = ridge * gram.trace() / m;
        if (!(lambda > 0.0)) {
          throw Error(ErrorCode::SingularSigma, "Sigma block " + std::to_string(a) + " is identically zero");
        }
        Mat reg = gram;
        reg.diagonal().array() += lambda;
        sol.solve_map[a] = reg.ldlt().solve(block.transpose());
        sol.regularized[a] = true;
        sol.diagnostics.push_back("Sigma block " + std::to_string(a) + " ill-conditioned (cond " +
                                  std::to_string(sol.condition[a]) + "), ridge lambda " + std::to_string(lambda));
      }
    } else {
      sol.solve_map[a] = block.partialPivLu().inverse();
    }
  }
  sol.beta0 = sol.solve_map[0] * system.eta_blocks[0];
  sol.beta1 = sol.solve_map[1] * system.eta_blocks[1];
  return sol;
}

/// Plug-in ATE v'(beta1 - beta0), where v is the reference-measure average of Psi.
inline double estimate_tau(const Vec& beta0, const Vec& beta1, const Vec& psi_average) {
  if (beta0.size() != psi_average.size() || beta1.size() != psi_average.size()) {
    throw Error(ErrorCode::InvalidArgument, "beta and feature dimensions differ");
  }
  return psi_average.dot(beta1 - beta0);
}

inline double estimate_tau(const BetaSolution& sol, const FeatureMap& fm, const ReferenceMeasure& measure,
                           std::span<const Vec> samples = {}) {
  return estimate_tau(sol.beta0, sol.beta1, integrate_psi(fm, measure, samples));
}

/// Temporal-difference error of a term under its own action's coefficients.
inline double td_error(const TdTerm& term, const BetaSolution& sol) {
  return term.outcome - term.row_vec.dot(sol.beta(term.action));
}

struct VarianceEstimate {
  double sigma2 = 0.0;
  Mat omega;  // 2M x 2M
  std::vector<double> td_errors;
};

/// Sandwich variance U' S^{-1} Omega S^{-T} U with U = (-v, v). Only the
/// observed action's half of each score vector is nonzero.
inline VarianceEstimate estimate_variance(const AssembledSystem& system, const BetaSolution& sol,
                                          const Vec& psi_average) {
  const int m = system.m;
  VarianceEstimate out;
  out.omega = Mat::Zero(2 * m, 2 * m);
  out.td_errors.reserve(system.terms.size());

  // u_a = sign_a * K_a' v, so that U' K Omega K' U = mean((u_a' psi eps)^2).
  const std::array<Vec, 2> u = {-(sol.solve_map[0].transpose() * psi_average),
                                sol.solve_map[1].transpose() * psi_average};
  double acc = 0.0;
  double scale = 0.0;
  for (const auto& term : system.terms) {
    const int a = term.action;
    const double eps = td_error(term, sol);
    out.td_errors.push_back(eps);
    const Vec g = term.psi_vec * eps;
    out.omega.block(a * m, a * m, m, m).noalias() += g * g.transpose();
    const double proj = u[a].dot(term.psi_vec);
    acc += proj * proj * eps * eps;
    scale += proj * proj * term.outcome * term.outcome;
  }
  const double inv_n = 1.0 / static_cast<double>(system.n_eff);
  out.omega *= inv_n;
  out.sigma2 = acc * inv_n;
  scale *= inv_n;
  // Residuals that vanish to rounding level relative to the outcomes mean the
  // sieve interpolates the data and the variance has collapsed.
  if (!(out.sigma2 > 1e-20 * scale) || !(out.sigma2 > 0.0)) {
    throw Error(ErrorCode::NonPositiveVariance,
                "estimated variance " + std::to_string(out.sigma2) + " is not positive (residuals vanish)");
  }
  return out;
}

/// Fills tau, sigma, Z and both p-values.
inline AteTestResult make_result(double tau, double sigma2, std::int64_t n_eff, const BetaSolution& sol) {
  AteTestResult r;
  r.tau_hat = tau;
  r.sigma_hat = std::sqrt(sigma2);
  r.n_eff = n_eff;
  r.z = std::sqrt(static_cast<double>(n_eff)) * tau / r.sigma_hat;
  r.p_one_sided = normal_upper_tail(r.z);
  r.p_two_sided = std::min(1.0, 2.0 * normal_upper_tail(std::abs(r.z)));
  r.beta0 = sol.beta0;
  r.beta1 = sol.beta1;
  r.cond_sigma = sol.max_condition();
  r.diagnostics = sol.diagnostics;
  return r;
}

/// First state observation of every subject; the empirical reference measure.
inline std::vector<Vec> initial_states(const Dataset& dataset) {
  std::vector<Vec> out;
  for (const auto& tr : dataset.trajectories) {
    if (!tr.state_obs.empty()) out.push_back(tr.state_obs.front().values);
  }
  return out;
}

inline std::vector<Vec> pooled_states(const Dataset& dataset) {
  std::vector<Vec> out;
  for (const auto& tr : dataset.trajectories) {
    for (const auto& s : tr.state_obs) out.push_back(s.values);
  }
  return out;
}

/// Throws InvalidDataset on any invariant violation other than single-action
/// data, which surfaces later as SingleActionSystem.
inline void require_valid(const Dataset& dataset) {
  std::string msg;
  for (const auto& diag : validate_dataset(dataset)) {
    if (diag.kind == DiagnosticKind::SingleActionData) continue;
    if (!msg.empty()) msg += "; ";
    msg += diag.message;
  }
  if (!msg.empty()) throw Error(ErrorCode::InvalidDataset, msg);
}

/// Full test with caller-supplied trajectory models (for example exact paths).
template <TrajectoryModel Model>
AteTestResult run_test(const Dataset& dataset, const EstimatorConfig& config, std::span<const Model> models) {
  config.validate();
  require_valid(dataset);
  const auto pooled = pooled_states(dataset);
  const FeatureMap fm = build_feature_map(config.basis_spec, pooled, dataset.d);
  const AssembledSystem system = assemble(dataset, config, models, fm);
  const BetaSolution sol = solve_beta(system, config.ridge);
  const auto init = initial_states(dataset);
  const Vec v = integrate_psi(fm, config.reference_measure, init);
  const double tau = estimate_tau(sol.beta0, sol.beta1, v);
  const VarianceEstimate var = estimate_variance(system, sol, v);
  AteTestResult r = make_result(tau, var.sigma2, system.n_eff, sol);
  r.diagnostics.insert(r.diagnostics.begin(), system.diagnostics.begin(), system.diagnostics.end());
  return r;
}

inline std::vector<PathEstimate> fit_all(const Dataset& dataset, const SmoothingSpec& spec) {
  std::vector<PathEstimate> models;
  models.reserve(dataset.trajectories.size());
  for (const auto& tr : dataset.trajectories) {
    if (tr.state_obs.empty()) {
      throw Error(ErrorCode::InsufficientObservations, "subject '" + tr.subject_id + "' has no state observations");
    }
    models.emplace_back(tr, spec);
  }
  return models;
}

/// Estimates each subject's path (spline state, drift per the smoothing spec), then runs the test.
inline AteTestResult run_test(const Dataset& dataset, const EstimatorConfig& config) {
  config.validate();
  require_valid(dataset);
  const auto models = fit_all(dataset, config.smoothing_spec);
  return run_test(dataset, config, std::span<const PathEstimate>(models));
}

}  // namespace cttest
