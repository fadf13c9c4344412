#pragma once

// Clamped B-spline bases and the per-subject trajectory smoother that
// supplies the imputed state S(t) and drift estimate dS/dt.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "cttest/core.hpp"

namespace cttest {

struct KnotVector {
  int degree = 3;
  std::vector<double> knots;
  double t_min = 0.0;
  double t_max = 1.0;

  int n_basis() const { return static_cast<int>(knots.size()) - degree - 1; }
};

/// Clamped knot vector over [min(times), max(times)] with n_basis - degree - 1
/// interior knots. `times` must be sorted.
inline KnotVector make_knot_vector(std::span<const double> times, int n_basis, int degree,
                                   KnotPlacement placement) {
  if (degree < 1) throw Error(ErrorCode::InvalidArgument, "spline degree must be >= 1");
  if (n_basis < degree + 1) {
    throw Error(ErrorCode::InvalidArgument, "n_basis must be >= degree + 1");
  }
  if (times.empty()) throw Error(ErrorCode::DegenerateDomain, "no time points");
  const double lo = times.front();
  const double hi = times.back();
  if (!(hi > lo)) throw Error(ErrorCode::DegenerateDomain, "all time points coincide");

  const int n_interior = n_basis - degree - 1;
  std::vector<double> interior;
  interior.reserve(n_interior);
  if (placement == KnotPlacement::TimeQuantiles && n_interior > 0) {
    // Linear-interpolated empirical quantiles at k / (n_interior + 1).
    const double last = static_cast<double>(times.size() - 1);
    for (int k = 1; k <= n_interior; ++k) {
      const double pos = last * k / (n_interior + 1);
      const auto i = static_cast<std::size_t>(std::floor(pos));
      const double frac = pos - static_cast<double>(i);
      const double q = i + 1 < times.size() ? times[i] + frac * (times[i + 1] - times[i]) : times[i];
      interior.push_back(q);
    }
    bool ok = interior.front() > lo && interior.back() < hi;
    for (std::size_t k = 1; ok && k < interior.size(); ++k) ok = interior[k] > interior[k - 1];
    if (!ok) interior.clear();  // clustered times: fall back to uniform
  }
  if (interior.empty()) {
    for (int k = 1; k <= n_interior; ++k) interior.push_back(lo + (hi - lo) * k / (n_interior + 1));
  }

  KnotVector kv;
  kv.degree = degree;
  kv.t_min = lo;
  kv.t_max = hi;
  kv.knots.assign(degree + 1, lo);
  kv.knots.insert(kv.knots.end(), interior.begin(), interior.end());
  kv.knots.insert(kv.knots.end(), degree + 1, hi);
  return kv;
}

namespace detail {

/// Knot span index i with knots[i] <= t < knots[i+1], using the last
/// nonempty span at the right endpoint.
inline int find_span(const KnotVector& kv, double t) {
  const int n = kv.n_basis() - 1;
  if (t >= kv.knots[n + 1]) return n;
  if (t <= kv.knots[kv.degree]) return kv.degree;
  auto it = std::upper_bound(kv.knots.begin() + kv.degree, kv.knots.begin() + n + 2, t);
  return static_cast<int>(it - kv.knots.begin()) - 1;
}

/// Nonzero basis values (row 0) and first derivatives (row 1) on the span,
/// via the triangular Cox-de Boor table.
inline void basis_and_derivative(const KnotVector& kv, int span, double t, std::vector<double>& val,
                                 std::vector<double>& der) {
  const int p = kv.degree;
  const auto& U = kv.knots;
  std::vector<double> left(p + 1), right(p + 1);
  // ndu[j][r]: basis values (upper triangle) and knot differences (lower).
  std::vector<std::vector<double>> ndu(p + 1, std::vector<double>(p + 1, 0.0));
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - U[span + 1 - j];
    right[j] = U[span + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  val.assign(p + 1, 0.0);
  der.assign(p + 1, 0.0);
  for (int j = 0; j <= p; ++j) val[j] = ndu[j][p];
  // d/dt N_{i,p} = p * (N_{i,p-1} / (u_{i+p} - u_i) - N_{i+1,p-1} / (u_{i+p+1} - u_{i+1}))
  for (int r = 0; r <= p; ++r) {
    double d = 0.0;
    if (r >= 1) d += ndu[r - 1][p - 1] / ndu[p][r - 1];
    if (r <= p - 1) d -= ndu[r][p - 1] / ndu[p][r];
    der[r] = p * d;
  }
}

}  // namespace detail

/// All n_basis basis values (order 0) or first derivatives (order 1) at t.
/// t is clamped to the knot domain.
inline Vec eval_basis(const KnotVector& kv, double t, int derivative_order) {
  if (derivative_order != 0 && derivative_order != 1) {
    throw Error(ErrorCode::InvalidArgument, "derivative_order must be 0 or 1");
  }
  t = std::clamp(t, kv.t_min, kv.t_max);
  const int span = detail::find_span(kv, t);
  std::vector<double> val, der;
  detail::basis_and_derivative(kv, span, t, val, der);
  Vec out = Vec::Zero(kv.n_basis());
  const auto& src = derivative_order == 0 ? val : der;
  for (int r = 0; r <= kv.degree; ++r) out[span - kv.degree + r] = src[r];
  return out;
}

/// Per-dimension spline fit of one subject's state path.
struct SplineModel {
  KnotVector knots;
  Mat coefficients;  // n_basis x d
  Vec residual_rms;  // per dimension

  int dim() const { return static_cast<int>(coefficients.cols()); }
  double t_min() const { return knots.t_min; }
  double t_max() const { return knots.t_max; }

  Vec state(double t) const { return coefficients.transpose() * eval_basis(knots, t, 0); }
  Vec drift(double t) const { return coefficients.transpose() * eval_basis(knots, t, 1); }
};

/// Least-squares spline regression of every state dimension on a shared basis:
/// minimizes sum_j |X(t_j) - chi(t_j)' w|^2 + ridge |w|^2 per dimension.
inline SplineModel fit_trajectory(const std::vector<StateObservation>& state_obs, const SmoothingSpec& spec) {
  const std::size_t n = state_obs.size();
  const int m = spec.resolve_n_basis(n);
  if (n < static_cast<std::size_t>(m)) {
    throw Error(ErrorCode::InsufficientObservations,
                std::to_string(n) + " state observations for " + std::to_string(m) + " spline coefficients");
  }
  if (!(spec.ridge >= 0.0)) throw Error(ErrorCode::InvalidArgument, "smoothing ridge must be >= 0");
  const int d = static_cast<int>(state_obs.front().values.size());

  std::vector<double> times(n);
  for (std::size_t j = 0; j < n; ++j) times[j] = state_obs[j].time;

  SplineModel model;
  model.knots = make_knot_vector(times, m, spec.degree, spec.knot_placement);

  Mat design(n, m);
  Mat targets(n, d);
  for (std::size_t j = 0; j < n; ++j) {
    design.row(j) = eval_basis(model.knots, times[j], 0).transpose();
    targets.row(j) = state_obs[j].values.transpose();
  }
  Mat normal = design.transpose() * design;
  normal.diagonal().array() += spec.ridge;

  Eigen::FullPivLU<Mat> rank_check(normal);
  if (rank_check.rank() < m) {
    throw Error(ErrorCode::SingularDesign, "spline normal matrix is singular; add ridge or observations");
  }
  model.coefficients = normal.ldlt().solve(design.transpose() * targets);

  const Mat resid = targets - design * model.coefficients;
  model.residual_rms = (resid.colwise().squaredNorm() / static_cast<double>(n)).cwiseSqrt().transpose();
  return model;
}

inline Vec eval_state(const SplineModel& model, double t) { return model.state(t); }
inline Vec eval_drift(const SplineModel& model, double t) { return model.drift(t); }

/// Step-one path estimate of one subject: the spline fit plus the raw state
/// samples, so the drift at an observed state can be a forward difference.
class PathEstimate {
 public:
  PathEstimate(const MultiResTrajectory& tr, const SmoothingSpec& spec)
      : spline_(fit_trajectory(tr.state_obs, spec)), method_(spec.drift_method), states_(tr.state_obs) {
    stop_times_.reserve(tr.outcome_obs.size() + tr.action_obs.size());
    for (const auto& y : tr.outcome_obs) stop_times_.push_back(y.time);
    for (const auto& c : tr.action_obs) stop_times_.push_back(c.time);
    std::sort(stop_times_.begin(), stop_times_.end());
  }

  const SplineModel& spline() const { return spline_; }
  double t_min() const { return spline_.t_min(); }
  double t_max() const { return spline_.t_max(); }
  Vec state(double t) const { return spline_.state(t); }

  Vec drift(double t) const {
    if (method_ == DriftMethod::SplineDerivative) return spline_.drift(t);
    const auto here = std::lower_bound(states_.begin(), states_.end(), t - kTimeTolerance,
                                       [](const StateObservation& o, double x) { return o.time < x; });
    if (here == states_.end() || std::abs(here->time - t) > kTimeTolerance || here + 1 == states_.end()) {
      return spline_.drift(t);
    }
    // The window ends at the last state sample before the next outcome time
    // or action change, so outcome windows never overlap or straddle a switch.
    auto stop = std::upper_bound(stop_times_.begin(), stop_times_.end(), t + kTimeTolerance);
    auto end = here + 1;
    if (stop != stop_times_.end()) {
      while (end + 1 != states_.end() && (end + 1)->time <= *stop + kTimeTolerance) ++end;
    }
    return (end->values - here->values) / (end->time - here->time);
  }

 private:
  SplineModel spline_;
  DriftMethod method_;
  std::vector<StateObservation> states_;
  std::vector<double> stop_times_;
};

}  // namespace cttest
