#pragma once

// Shared fixtures: an exact Ornstein-Uhlenbeck path model and independent
// reference values computed without the library.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cttest/cttest.hpp"

namespace cttest::testing {

inline constexpr double kTheta = 0.2;

/// Closed form delta / (beta (beta + theta)) with beta = -ln gamma.
inline double ou_tau_closed_form(double delta, double gamma) {
  const double beta = -std::log(gamma);
  return delta / (beta * (beta + kTheta));
}

/// Composite Simpson quadrature of int_0^T e^{-beta t} (S1(t) - S0(t)) dt with
/// S_a(t) = (delta a / theta)(1 - e^{-theta t}) started at 0; T chosen so the
/// tail is below 1e-12.
inline double ou_tau_quadrature(double delta, double gamma) {
  const double beta = -std::log(gamma);
  const double t_end = 40.0 / beta;
  const int n = 400000;
  const double h = t_end / n;
  auto f = [&](double t) { return std::exp(-beta * t) * (delta / kTheta) * (1.0 - std::exp(-kTheta * t)); };
  double acc = f(0.0) + f(t_end);
  for (int k = 1; k < n; ++k) acc += (k % 2 == 1 ? 4.0 : 2.0) * f(k * h);
  return acc * h / 3.0;
}

/// Noise-free Sim0 path dS = (-theta S + delta A(t)) dt solved piecewise in
/// closed form between change points; drift is the exact right-hand side.
class ExactOuModel {
 public:
  ExactOuModel(double delta, Schedule schedule, double t_end, double s0 = 0.0)
      : delta_(delta), schedule_(std::move(schedule)), t_end_(t_end), s0_(s0) {
    for (const auto& c : schedule_.change_points(t_end_)) breaks_.push_back(c.time);
  }

  double t_min() const { return 0.0; }
  double t_max() const { return t_end_; }

  Vec state(double t) const {
    double s = s0_;
    double t0 = 0.0;
    for (std::size_t k = 1; k <= breaks_.size(); ++k) {
      const double t1 = k < breaks_.size() ? std::min(breaks_[k], t) : t;
      if (t1 <= t0) break;
      const double target = delta_ * action(t0) / kTheta;
      s = target + (s - target) * std::exp(-kTheta * (t1 - t0));
      t0 = t1;
      if (t1 >= t) break;
    }
    Vec out(1);
    out[0] = s;
    return out;
  }

  Vec drift(double t) const {
    Vec out(1);
    out[0] = -kTheta * state(t)[0] + delta_ * action(t);
    return out;
  }

  /// Action in force at t from the recorded change points, so a switch that
  /// falls exactly on t_end is ignored just as in the observed data.
  int action(double t) const {
    MultiResTrajectory tr;
    tr.action_obs = schedule_.change_points(t_end_);
    return tr.resolve_action(t);
  }

  /// One trajectory observed from this path: states every `ds`, outcomes Y = S every `dy`.
  MultiResTrajectory observe(double ds, double dy, std::string id = "p1") const {
    MultiResTrajectory tr;
    tr.subject_id = std::move(id);
    const int ns = static_cast<int>(std::lround(t_end_ / ds));
    const int ny = static_cast<int>(std::lround(t_end_ / dy));
    for (int k = 0; k <= ns; ++k) tr.state_obs.push_back({k * ds, state(k * ds)});
    for (int k = 1; k <= ny; ++k) tr.outcome_obs.push_back({k * dy, state(k * dy)[0]});
    tr.action_obs = schedule_.change_points(t_end_);
    return tr;
  }

 private:
  double delta_;
  Schedule schedule_;
  double t_end_;
  double s0_;
  std::vector<double> breaks_;
};

/// Small random dataset for property tests.
inline Dataset small_sim0(double delta, std::uint64_t seed, int subjects = 8) {
  return simulate_dataset(scenario_sim0(delta, 0.1), Schedule::treatment2(), SamplingPlan{}, subjects, seed);
}

/// Flips every action: 0 <-> 1.
inline Dataset swap_labels(Dataset ds) {
  for (auto& tr : ds.trajectories) {
    for (auto& c : tr.action_obs) c.action = 1 - c.action;
  }
  return ds;
}

inline Dataset scale_outcomes(Dataset ds, double c) {
  for (auto& tr : ds.trajectories) {
    for (auto& y : tr.outcome_obs) y.value *= c;
  }
  return ds;
}

}  // namespace cttest::testing
