#pragma once

// Euler-Maruyama simulation of controlled drift-diffusion processes, treatment
// schedules, and multi-resolution sampling into MultiResTrajectory records.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cttest/core.hpp"

namespace cttest {

/// SplitMix64 finalizer; combines a master seed and a stream index into an
/// independent seed, so replications can run in any order.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  std::uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

struct Scenario {
  std::string name;
  int d = 1;
  std::function<Vec(const Vec&, int)> drift;
  Vec diffusion;
  std::function<double(const Vec&)> outcome;
  double t_end = 10.0;
  double dt = 0.01;
  Vec s0;

  int steps() const {
    if (!(dt > 0.0)) throw Error(ErrorCode::InvalidArgument, "dt must be positive");
    const double ratio = t_end / dt;
    const double k = std::round(ratio);
    if (std::abs(ratio - k) > 1e-9 * std::max(1.0, ratio)) {
      throw Error(ErrorCode::GridMismatch, "t_end is not an integer multiple of dt");
    }
    return static_cast<int>(k);
  }
};

/// Deterministic treatment assignment A(t) in {0, 1}.
struct Schedule {
  enum class Kind { AlwaysOff, AlwaysOn, SquareWave, Pulses };
  Kind kind = Kind::AlwaysOff;
  double period = 1.0;
  double duty = 0.5;
  double phase = 0.0;
  std::vector<double> pulse_times;
  double width = 0.0;

  static Schedule always_off() { return {}; }
  static Schedule always_on() {
    Schedule s;
    s.kind = Kind::AlwaysOn;
    return s;
  }
  /// On during [phase + k*period, phase + k*period + duty*period).
  static Schedule square_wave(double period, double duty, double phase = 0.0) {
    if (!(period > 0.0) || !(duty >= 0.0 && duty <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "square wave needs period > 0 and duty in [0,1]");
    }
    Schedule s;
    s.kind = Kind::SquareWave;
    s.period = period;
    s.duty = duty;
    s.phase = phase;
    return s;
  }
  /// On during [t_j, t_j + width) for every pulse start t_j.
  static Schedule pulses(std::vector<double> times, double width) {
    Schedule s;
    s.kind = Kind::Pulses;
    s.pulse_times = std::move(times);
    s.width = width;
    return s;
  }
  /// Short treatment period: brief pulses, like bolus dosing.
  static Schedule treatment1() { return square_wave(1.0, 0.2); }
  /// Long treatment period: long on/off blocks, like basal dosing.
  static Schedule treatment2() { return square_wave(5.0, 0.5); }

  /// Short tag for table labels, e.g. "square(1,0.2)".
  std::string label() const {
    auto num = [](double x) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", x);
      return std::string(buf);
    };
    switch (kind) {
      case Kind::AlwaysOff: return "off";
      case Kind::AlwaysOn: return "on";
      case Kind::SquareWave:
        return "square(" + num(period) + "," + num(duty) + (phase != 0.0 ? "," + num(phase) : "") + ")";
      case Kind::Pulses: return "pulses(" + std::to_string(pulse_times.size()) + "," + num(width) + ")";
    }
    return "?";
  }

  int action_at(double t) const {
    switch (kind) {
      case Kind::AlwaysOff: return 0;
      case Kind::AlwaysOn: return 1;
      case Kind::SquareWave: {
        const double u = (t - phase) / period;
        const double k = std::floor(u + kTimeTolerance / period);
        const double offset = (u - k) * period;
        return offset < duty * period - kTimeTolerance ? 1 : 0;
      }
      case Kind::Pulses:
        for (double p : pulse_times) {
          if (t >= p - kTimeTolerance && t < p + width - kTimeTolerance) return 1;
        }
        return 0;
    }
    return 0;
  }

  /// Change points on [0, t_end], starting with the action at time 0.
  std::vector<ActionChange> change_points(double t_end) const {
    std::vector<double> candidates;
    if (kind == Kind::SquareWave) {
      const double k0 = std::floor(-phase / period) - 1.0;
      for (double k = k0; phase + k * period <= t_end + period; k += 1.0) {
        candidates.push_back(phase + k * period);
        candidates.push_back(phase + k * period + duty * period);
      }
    } else if (kind == Kind::Pulses) {
      for (double p : pulse_times) {
        candidates.push_back(p);
        candidates.push_back(p + width);
      }
    }
    std::sort(candidates.begin(), candidates.end());
    std::vector<ActionChange> out{{0.0, action_at(0.0)}};
    for (double c : candidates) {
      if (c <= kTimeTolerance || c >= t_end - kTimeTolerance) continue;
      const int a = action_at(c);
      if (a != out.back().action) out.push_back({c, a});
    }
    return out;
  }
};

struct DensePath {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<int> actions;
};

/// S_{k+1} = S_k + b(S_k, A(t_k)) dt + diffusion .* sqrt(dt) xi_k, xi_k iid N(0, I).
inline DensePath euler_maruyama(const Scenario& sc, const Schedule& schedule, std::uint64_t seed) {
  const int n = sc.steps();
  if (sc.diffusion.size() != sc.d) throw Error(ErrorCode::InvalidArgument, "diffusion must have length d");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sqrt_dt = std::sqrt(sc.dt);

  DensePath path;
  path.times.resize(n + 1);
  path.states.resize(n + 1);
  path.actions.resize(n + 1);
  Vec s = sc.s0.size() == sc.d ? sc.s0 : Vec::Zero(sc.d);
  Vec xi(sc.d);
  for (int k = 0; k <= n; ++k) {
    const double t = k * sc.dt;
    const int a = schedule.action_at(t);
    path.times[k] = t;
    path.states[k] = s;
    path.actions[k] = a;
    if (k == n) break;
    for (int j = 0; j < sc.d; ++j) xi[j] = normal(rng);
    s = s + sc.drift(s, a) * sc.dt + sc.diffusion.cwiseProduct(xi) * sqrt_dt;
  }
  return path;
}

struct SamplingPlan {
  double state_interval = 0.1;
  double outcome_interval = 0.2;
  /// When positive, overrides the interval: count points k * t_end / count,
  /// each snapped to the nearest simulation step.
  int state_count = 0;
  int outcome_count = 0;
  double obs_noise_sd = 0.0;
  /// Half-width of uniform time jitter added to each sample time.
  double jitter = 0.0;
};

namespace detail {

// Dense-path indices of a sampling grid: k = first..count.
inline std::vector<int> grid_indices(double interval, int count, int first, double t_end, double dt, int n_steps,
                                     const char* label) {
  std::vector<int> out;
  if (count > 0) {
    for (int k = first; k <= count; ++k) {
      out.push_back(static_cast<int>(std::lround(k * t_end / count / dt)));
    }
  } else {
    if (!(interval > 0.0)) throw Error(ErrorCode::GridMismatch, std::string(label) + " interval must be positive");
    const double ratio = interval / dt;
    const double stride = std::round(ratio);
    if (stride < 1.0 || std::abs(ratio - stride) > 1e-9 * std::max(1.0, ratio)) {
      throw Error(ErrorCode::GridMismatch, std::string(label) + " interval is not a multiple of dt");
    }
    const int step = static_cast<int>(stride);
    for (int idx = first * step; idx <= n_steps; idx += step) out.push_back(idx);
  }
  for (std::size_t k = 1; k < out.size(); ++k) {
    if (out[k] <= out[k - 1]) throw Error(ErrorCode::GridMismatch, std::string(label) + " grid finer than dt");
  }
  return out;
}

inline void apply_jitter(std::vector<int>& idx, double jitter, double dt, int n_steps, Rng& rng, const char* label) {
  if (jitter <= 0.0) return;
  std::uniform_real_distribution<double> unif(-jitter, jitter);
  for (auto& i : idx) {
    const double t = i * dt + unif(rng);
    i = std::clamp(static_cast<int>(std::lround(t / dt)), 0, n_steps);
  }
  for (std::size_t k = 1; k < idx.size(); ++k) {
    if (idx[k] <= idx[k - 1]) {
      throw Error(ErrorCode::GridMismatch, std::string(label) + " jitter too large for the sampling interval");
    }
  }
}

}  // namespace detail

/// Samples states (with optional observation noise) and outcomes on their own
/// grids and exports the schedule as change points.
inline MultiResTrajectory sample_multiresolution(const DensePath& path, const Scenario& sc, const Schedule& schedule,
                                                 const SamplingPlan& plan, std::uint64_t seed,
                                                 std::string subject_id = "s1") {
  const int n = static_cast<int>(path.times.size()) - 1;
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "dense path is empty");
  const double dt = sc.dt;
  const double t_end = path.times.back();
  if (!(plan.obs_noise_sd >= 0.0) || !(plan.jitter >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "noise and jitter must be >= 0");
  }
  Rng rng(seed);
  auto state_idx = detail::grid_indices(plan.state_interval, plan.state_count, 0, t_end, dt, n, "state");
  auto outcome_idx = detail::grid_indices(plan.outcome_interval, plan.outcome_count, 1, t_end, dt, n, "outcome");
  detail::apply_jitter(state_idx, plan.jitter, dt, n, rng, "state");
  detail::apply_jitter(outcome_idx, plan.jitter, dt, n, rng, "outcome");

  MultiResTrajectory tr;
  tr.subject_id = std::move(subject_id);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i : state_idx) {
    Vec x = path.states[i];
    if (plan.obs_noise_sd > 0.0) {
      for (int j = 0; j < x.size(); ++j) x[j] += plan.obs_noise_sd * normal(rng);
    }
    tr.state_obs.push_back({path.times[i], std::move(x)});
  }
  for (int i : outcome_idx) tr.outcome_obs.push_back({path.times[i], sc.outcome(path.states[i])});
  tr.action_obs = schedule.change_points(t_end);
  return tr;
}

/// dS = (-0.2 S + delta A) dt + eps dW,  Y = S.
inline Scenario scenario_sim0(double delta, double eps) {
  Scenario sc;
  sc.name = "sim0";
  sc.d = 1;
  sc.drift = [delta](const Vec& s, int a) {
    Vec out(1);
    out[0] = -0.2 * s[0] + delta * a;
    return out;
  };
  sc.diffusion = Vec::Constant(1, eps);
  sc.outcome = [](const Vec& s) { return s[0]; };
  sc.s0 = Vec::Zero(1);
  return sc;
}

namespace detail {

inline Scenario two_state(std::string name, std::function<Vec(const Vec&, int)> drift) {
  Scenario sc;
  sc.name = std::move(name);
  sc.d = 2;
  sc.drift = std::move(drift);
  sc.diffusion = (Vec(2) << 0.1, 0.2).finished();
  sc.outcome = [](const Vec& s) { return 0.5 * (s[0] + s[1]); };
  sc.s0 = Vec::Zero(2);
  return sc;
}

}  // namespace detail

/// Two independent mean-reverting states, Y = (S1 + S2) / 2.
inline Scenario scenario_sim1(double delta) {
  return detail::two_state("sim1", [delta](const Vec& s, int a) {
    Vec out(2);
    out[0] = -0.1 * s[0] + delta * a;
    out[1] = -0.3 * s[1] + 0.5 * delta * a;
    return out;
  });
}

/// Sim1 with positive cross-coupling between the states.
inline Scenario scenario_sim2(double delta) {
  return detail::two_state("sim2", [delta](const Vec& s, int a) {
    Vec out(2);
    out[0] = -0.1 * s[0] + 0.2 * s[1] + delta * a;
    out[1] = 0.1 * s[0] - 0.3 * s[1] + 0.5 * delta * a;
    return out;
  });
}

/// Sim2's state feedback with its sign set by the treatment, (2A - 1).
inline Scenario scenario_sim3(double delta) {
  return detail::two_state("sim3", [delta](const Vec& s, int a) {
    const double sign = 2.0 * a - 1.0;
    Vec out(2);
    out[0] = sign * (-0.1 * s[0] + 0.2 * s[1]) + delta * a;
    out[1] = sign * (0.1 * s[0] - 0.3 * s[1]) + 0.5 * delta * a;
    return out;
  });
}

/// Preset by name: "sim0" (uses eps as its diffusion), "sim1", "sim2", "sim3".
inline Scenario scenario_by_name(const std::string& name, double delta, double eps) {
  if (name == "sim0") return scenario_sim0(delta, eps);
  if (name == "sim1") return scenario_sim1(delta);
  if (name == "sim2") return scenario_sim2(delta);
  if (name == "sim3") return scenario_sim3(delta);
  throw Error(ErrorCode::InvalidArgument, "unknown scenario '" + name + "'");
}

/// I independent subjects; subject i draws its path and observation noise
/// from streams derived from `seed`.
inline Dataset simulate_dataset(const Scenario& sc, const Schedule& schedule, const SamplingPlan& plan, int subjects,
                                std::uint64_t seed) {
  if (subjects < 1) throw Error(ErrorCode::InvalidArgument, "need at least one subject");
  Dataset ds;
  ds.d = sc.d;
  ds.trajectories.reserve(subjects);
  for (int i = 0; i < subjects; ++i) {
    const DensePath path = euler_maruyama(sc, schedule, derive_seed(seed, 2 * static_cast<std::uint64_t>(i)));
    ds.trajectories.push_back(sample_multiresolution(path, sc, schedule, plan,
                                                     derive_seed(seed, 2 * static_cast<std::uint64_t>(i) + 1),
                                                     "s" + std::to_string(i + 1)));
  }
  return ds;
}

}  // namespace cttest
