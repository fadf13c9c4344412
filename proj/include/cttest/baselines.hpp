#pragma once

// Comparator tests used in the power studies. None of these is the packaged
// implementation of the corresponding published method; each carries its
// own method label.
//
//   "t"       Welch two-sample t-test of outcomes grouped by current action.
//   "dtvalue" Discrete-time Bellman value test on co-observed state/outcome times.
//   "dml"     DML-lite: cross-fitted partially linear model with sieve-ridge nuisances.

#include <cmath>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "cttest/core.hpp"
#include "cttest/estimator.hpp"
#include "cttest/features.hpp"

namespace cttest {

/// Common result shape for every method, including the proposed test.
struct BaselineResult {
  std::string method;
  double estimate = 0.0;
  double statistic = 0.0;
  double p_one_sided = 1.0;
  double p_two_sided = 1.0;
  std::int64_t n = 0;
  std::vector<std::string> diagnostics;

  double p_value(Alternative alt) const { return alt == Alternative::TwoSided ? p_two_sided : p_one_sided; }
};

inline BaselineResult as_method_result(const AteTestResult& r, std::string method = "proposed") {
  BaselineResult out;
  out.method = std::move(method);
  out.estimate = r.tau_hat;
  out.statistic = r.z;
  out.p_one_sided = r.p_one_sided;
  out.p_two_sided = r.p_two_sided;
  out.n = r.n_eff;
  out.diagnostics = r.diagnostics;
  return out;
}

struct WelchStatistics {
  double t = 0.0;
  double df = 0.0;
  double mean_diff = 0.0;
  double p_one_sided = 1.0;  // H1: mean(treated) > mean(control)
  double p_two_sided = 1.0;
  bool zero_variance = false;
};

/// Welch's unequal-variance t statistic for mean(treated) - mean(control),
/// with Satterthwaite degrees of freedom.
inline WelchStatistics welch_statistics(const std::vector<double>& treated, const std::vector<double>& control) {
  if (treated.empty() || control.empty()) throw Error(ErrorCode::EmptyGroup, "Welch test needs two nonempty groups");
  auto moments = [](const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    const double var = x.size() > 1 ? ss / static_cast<double>(x.size() - 1) : 0.0;
    return std::pair{mean, var};
  };
  const auto [m1, v1] = moments(treated);
  const auto [m0, v0] = moments(control);
  const double n1 = static_cast<double>(treated.size());
  const double n0 = static_cast<double>(control.size());
  const double a = v1 / n1;
  const double b = v0 / n0;

  WelchStatistics w;
  w.mean_diff = m1 - m0;
  if (a + b <= 0.0) {
    // Both groups constant: the statistic is +-infinity, or 0 for equal means.
    w.zero_variance = true;
    w.df = n1 + n0 - 2.0;
    if (w.mean_diff == 0.0) {
      w.t = 0.0;
      w.p_one_sided = 0.5;
      w.p_two_sided = 1.0;
    } else {
      w.t = w.mean_diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      w.p_one_sided = w.mean_diff > 0.0 ? 0.0 : 1.0;
      w.p_two_sided = 0.0;
    }
    return w;
  }
  w.t = w.mean_diff / std::sqrt(a + b);
  const double denom = (n1 > 1 ? a * a / (n1 - 1) : 0.0) + (n0 > 1 ? b * b / (n0 - 1) : 0.0);
  w.df = denom > 0.0 ? (a + b) * (a + b) / denom : std::numeric_limits<double>::infinity();
  if (std::isfinite(w.df)) {
    const boost::math::students_t dist(w.df);
    w.p_one_sided = boost::math::cdf(boost::math::complement(dist, w.t));
    w.p_two_sided = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(w.t))));
  } else {
    w.p_one_sided = normal_upper_tail(w.t);
    w.p_two_sided = std::min(1.0, 2.0 * normal_upper_tail(std::abs(w.t)));
  }
  return w;
}

/// Outcomes pooled across subjects and split by the action in force at each outcome time.
inline BaselineResult welch_t_test(const Dataset& dataset) {
  std::vector<double> groups[2];
  for (const auto& tr : dataset.trajectories) {
    for (const auto& y : tr.outcome_obs) groups[tr.resolve_action(y.time) == 1 ? 1 : 0].push_back(y.value);
  }
  const WelchStatistics w = welch_statistics(groups[1], groups[0]);
  BaselineResult r;
  r.method = "t";
  r.estimate = w.mean_diff;
  r.statistic = w.t;
  r.p_one_sided = w.p_one_sided;
  r.p_two_sided = w.p_two_sided;
  r.n = static_cast<std::int64_t>(groups[0].size() + groups[1].size());
  if (w.zero_variance) r.diagnostics.push_back("both outcome groups have zero variance");
  return r;
}

/// Discrete-time Bellman row for a transition of length dt:
/// (Psi(S_t) - gamma^dt Psi(S_{t+dt})) / dt. At dt = 1 this is the one-step
/// residual y + gamma V(S') - V(S); as dt -> 0 it tends to the continuous row.
inline Vec discrete_row(const FeatureMap& fm, const Vec& s, const Vec& s_next, double dt, double gamma) {
  return (fm.psi(s) - std::pow(gamma, dt) * fm.psi(s_next)) / dt;
}

/// Discrete-time system built only from outcome times that also carry a state
/// sample. A consecutive pair enters when both endpoints carry the same action
/// and the action does not change in between.
inline AssembledSystem assemble_discrete(const Dataset& dataset, const EstimatorConfig& config, const FeatureMap& fm) {
  std::vector<TdTerm> terms;
  std::size_t short_subjects = 0;
  std::size_t dropped_pairs = 0;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    const auto& tr = dataset.trajectories[i];
    std::vector<std::pair<const OutcomeObservation*, const Vec*>> co;
    for (const auto& y : tr.outcome_obs) {
      if (auto idx = tr.state_index_at(y.time)) co.emplace_back(&y, &tr.state_obs[*idx].values);
    }
    if (co.size() < 2) {
      ++short_subjects;
      continue;
    }
    for (std::size_t j = 0; j + 1 < co.size(); ++j) {
      const double t0 = co[j].first->time;
      const double t1 = co[j + 1].first->time;
      const int a = tr.resolve_action(t0);
      if (tr.resolve_action(t1) != a || tr.action_changes_within(t0, t1)) {
        ++dropped_pairs;
        continue;
      }
      TdTerm term;
      term.subject = i;
      term.time = t0;
      term.action = a;
      term.state = *co[j].second;
      term.psi_vec = fm.psi(term.state);
      term.row_vec = discrete_row(fm, term.state, *co[j + 1].second, t1 - t0, config.gamma);
      term.outcome = co[j].first->value;
      terms.push_back(std::move(term));
    }
  }
  std::vector<std::string> diagnostics;
  if (short_subjects > 0) {
    diagnostics.push_back(std::to_string(short_subjects) + " subjects had fewer than 2 co-observed times");
  }
  if (dropped_pairs > 0) diagnostics.push_back(std::to_string(dropped_pairs) + " pairs with an action switch dropped");
  return make_system(std::move(terms), fm.size(), std::move(diagnostics));
}

/// Value test on the discrete-time system, sharing the estimator's solve,
/// plug-in and variance steps.
inline BaselineResult discrete_time_value_test(const Dataset& dataset, const EstimatorConfig& config) {
  config.validate();
  require_valid(dataset);
  const auto pooled = pooled_states(dataset);
  const FeatureMap fm = build_feature_map(config.basis_spec, pooled, dataset.d);
  const AssembledSystem system = assemble_discrete(dataset, config, fm);
  const BetaSolution sol = solve_beta(system, config.ridge);
  const auto init = initial_states(dataset);
  const Vec v = integrate_psi(fm, config.reference_measure, init);
  const double tau = estimate_tau(sol.beta0, sol.beta1, v);
  const VarianceEstimate var = estimate_variance(system, sol, v);
  AteTestResult ate = make_result(tau, var.sigma2, system.n_eff, sol);
  ate.diagnostics.insert(ate.diagnostics.begin(), system.diagnostics.begin(), system.diagnostics.end());
  return as_method_result(ate, "dtvalue");
}

namespace detail {

// State at time t: the exact sample when present, else linear interpolation
// between neighbouring samples (held constant beyond the ends).
inline Vec interpolate_state(const MultiResTrajectory& tr, double t) {
  const auto& obs = tr.state_obs;
  auto it = std::lower_bound(obs.begin(), obs.end(), t,
                             [](const StateObservation& o, double x) { return o.time < x; });
  if (it != obs.end() && std::abs(it->time - t) <= kTimeTolerance) return it->values;
  if (it == obs.begin()) return obs.front().values;
  if (it == obs.end()) return obs.back().values;
  const auto& hi = *it;
  const auto& lo = *std::prev(it);
  const double w = (t - lo.time) / (hi.time - lo.time);
  return (1.0 - w) * lo.values + w * hi.values;
}

// Additive cubic polynomial sieve on standardized states; constant
// dimensions contribute nothing, leaving an intercept-only regression.
struct NuisanceSieve {
  Vec center;
  Vec scale;
  std::vector<int> active;

  explicit NuisanceSieve(const std::vector<Vec>& states) {
    const int d = static_cast<int>(states.front().size());
    center = Vec::Zero(d);
    scale = Vec::Ones(d);
    for (const auto& s : states) center += s;
    center /= static_cast<double>(states.size());
    Vec var = Vec::Zero(d);
    for (const auto& s : states) var += (s - center).cwiseAbs2();
    var /= static_cast<double>(states.size());
    for (int k = 0; k < d; ++k) {
      if (var[k] > 1e-24) {
        active.push_back(k);
        scale[k] = std::sqrt(var[k]);
      }
    }
  }

  int size() const { return 1 + 3 * static_cast<int>(active.size()); }

  Vec features(const Vec& s) const {
    Vec f(size());
    f[0] = 1.0;
    int c = 1;
    for (int k : active) {
      const double z = (s[k] - center[k]) / scale[k];
      f[c++] = z;
      f[c++] = z * z;
      f[c++] = z * z * z;
    }
    return f;
  }
};

// Ridge regression coefficients with a penalty scaled to the Gram matrix;
// the intercept is left unpenalized.
inline Vec ridge_fit(const Mat& x, const Vec& y, double ridge) {
  Mat gram = x.transpose() * x;
  const double lambda = ridge * gram.trace() / static_cast<double>(gram.rows());
  for (Eigen::Index j = 1; j < gram.rows(); ++j) gram(j, j) += lambda;
  return gram.ldlt().solve(x.transpose() * y);
}

}  // namespace detail

/// DML-lite: Y = theta A + g(S) + e, A = m(S) + v, with g and m fitted by
/// sieve ridge regression on the other folds (folds split by subject) and
/// theta from the orthogonalized residual-on-residual score.
inline BaselineResult dml_test(const Dataset& dataset, int folds = 2) {
  if (folds < 2) throw Error(ErrorCode::InvalidArgument, "DML needs at least 2 folds");
  if (static_cast<int>(dataset.trajectories.size()) < folds) {
    throw Error(ErrorCode::InvalidArgument, "DML needs at least as many subjects as folds");
  }
  struct Row {
    int fold;
    Vec s;
    double a;
    double y;
  };
  std::vector<Row> rows;
  std::vector<Vec> states;
  double n_treated = 0.0;
  for (std::size_t i = 0; i < dataset.trajectories.size(); ++i) {
    const auto& tr = dataset.trajectories[i];
    if (tr.state_obs.empty()) continue;
    for (const auto& y : tr.outcome_obs) {
      Row r{static_cast<int>(i % folds), detail::interpolate_state(tr, y.time),
            static_cast<double>(tr.resolve_action(y.time)), y.value};
      n_treated += r.a;
      states.push_back(r.s);
      rows.push_back(std::move(r));
    }
  }
  if (rows.empty() || n_treated == 0.0 || n_treated == static_cast<double>(rows.size())) {
    throw Error(ErrorCode::EmptyGroup, "DML needs outcomes under both actions");
  }
  const detail::NuisanceSieve sieve(states);
  constexpr double kRidge = 1e-6;

  std::vector<double> a_res(rows.size()), y_res(rows.size());
  for (int k = 0; k < folds; ++k) {
    std::vector<std::size_t> train, test;
    for (std::size_t j = 0; j < rows.size(); ++j) (rows[j].fold == k ? test : train).push_back(j);
    if (test.empty()) continue;
    if (train.empty()) throw Error(ErrorCode::SingularNuisance, "empty training fold");
    Mat x(train.size(), sieve.size());
    Vec ya(train.size()), yy(train.size());
    for (std::size_t r = 0; r < train.size(); ++r) {
      x.row(r) = sieve.features(rows[train[r]].s).transpose();
      ya[r] = rows[train[r]].a;
      yy[r] = rows[train[r]].y;
    }
    const Vec coef_a = detail::ridge_fit(x, ya, kRidge);
    const Vec coef_y = detail::ridge_fit(x, yy, kRidge);
    for (std::size_t j : test) {
      const Vec f = sieve.features(rows[j].s);
      a_res[j] = rows[j].a - f.dot(coef_a);
      y_res[j] = rows[j].y - f.dot(coef_y);
    }
  }
  const double n = static_cast<double>(rows.size());
  double saa = 0.0, say = 0.0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    saa += a_res[j] * a_res[j];
    say += a_res[j] * y_res[j];
  }
  if (!(saa > 1e-12 * n)) throw Error(ErrorCode::SingularNuisance, "treatment residuals have no variance");
  const double theta = say / saa;
  double spsi = 0.0;
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const double score = (y_res[j] - theta * a_res[j]) * a_res[j];
    spsi += score * score;
  }
  const double jac = saa / n;
  const double se = std::sqrt(spsi / n) / jac / std::sqrt(n);

  BaselineResult r;
  r.method = "dml";
  r.estimate = theta;
  r.n = static_cast<std::int64_t>(rows.size());
  r.diagnostics.push_back("DML-lite, not the packaged implementation");
  if (se > 0.0) {
    r.statistic = theta / se;
    r.p_one_sided = normal_upper_tail(r.statistic);
    r.p_two_sided = std::min(1.0, 2.0 * normal_upper_tail(std::abs(r.statistic)));
  } else {
    r.statistic = theta == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), theta);
    r.p_one_sided = theta > 0.0 ? 0.0 : (theta == 0.0 ? 0.5 : 1.0);
    r.p_two_sided = theta == 0.0 ? 1.0 : 0.0;
    r.diagnostics.push_back("zero score variance");
  }
  return r;
}

}  // namespace cttest
