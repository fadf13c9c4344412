#pragma once

// Linear sieve for the value functions: Psi(s), its state gradient, and the
// reference-measure average of Psi.

#include <limits>
#include <span>
#include <vector>

#include "cttest/core.hpp"
#include "cttest/splines.hpp"

namespace cttest {

class FeatureMap {
 public:
  FeatureMap() = default;

  const FeatureSpec& spec() const { return spec_; }
  int dim() const { return d_; }
  int size() const { return m_; }
  const Vec& domain_lo() const { return lo_; }
  const Vec& domain_hi() const { return hi_; }
  const std::vector<std::vector<int>>& exponents() const { return exponents_; }

  Vec psi(const Vec& s) const {
    Vec out(m_);
    if (spec_.kind == FeatureKind::PolynomialTensor) {
      for (int j = 0; j < m_; ++j) out[j] = monomial(exponents_[j], s, -1);
      return out;
    }
    int col = 0;
    if (spec_.include_intercept) out[col++] = 1.0;
    for (int k = 0; k < d_; ++k) {
      const Vec b = eval_basis(knots_[k], s[k], 0);
      const int skip = first_kept(k);
      for (int j = skip; j < b.size(); ++j) out[col++] = b[j];
    }
    return out;
  }

  /// d x M matrix; row k holds the partial derivatives with respect to s_k.
  /// Outside the domain the clamped features are flat, so their gradient is 0.
  Mat grad_psi(const Vec& s) const {
    Mat out = Mat::Zero(d_, m_);
    if (spec_.kind == FeatureKind::PolynomialTensor) {
      for (int j = 0; j < m_; ++j) {
        for (int k = 0; k < d_; ++k) out(k, j) = monomial(exponents_[j], s, k);
      }
      return out;
    }
    int col = spec_.include_intercept ? 1 : 0;
    for (int k = 0; k < d_; ++k) {
      const int skip = first_kept(k);
      const int width = knots_[k].n_basis() - skip;
      if (s[k] >= lo_[k] && s[k] <= hi_[k]) {
        const Vec db = eval_basis(knots_[k], s[k], 1);
        out.block(k, col, 1, width) = db.segment(skip, width).transpose();
      }
      col += width;
    }
    return out;
  }

 private:
  friend FeatureMap build_feature_map(const FeatureSpec&, std::span<const Vec>, int);

  // The first basis function of each dimension is dropped when an intercept
  // (or an earlier dimension) already spans the constants.
  int first_kept(int k) const { return (spec_.include_intercept || k > 0) ? 1 : 0; }

  // Value (wrt < 0) or partial derivative wrt s_wrt of the monomial.
  static double monomial(const std::vector<int>& e, const Vec& s, int wrt) {
    double v = 1.0;
    for (std::size_t k = 0; k < e.size(); ++k) {
      int p = e[k];
      if (static_cast<int>(k) == wrt) {
        if (p == 0) return 0.0;
        v *= p;
        --p;
      }
      for (int r = 0; r < p; ++r) v *= s[k];
    }
    return v;
  }

  FeatureSpec spec_;
  int d_ = 0;
  int m_ = 0;
  Vec lo_;
  Vec hi_;
  std::vector<KnotVector> knots_;
  std::vector<std::vector<int>> exponents_;
};

namespace detail {

// Exponent vectors summing to `total`, first coordinate descending.
inline void enumerate_exponents(int d, int total, std::vector<int>& cur, int k,
                                std::vector<std::vector<int>>& out) {
  if (k == d - 1) {
    cur[k] = total;
    out.push_back(cur);
    return;
  }
  for (int p = total; p >= 0; --p) {
    cur[k] = p;
    enumerate_exponents(d, total - p, cur, k + 1, out);
  }
}

}  // namespace detail

/// Builds Psi for dimension d. When the spec leaves the domain empty it is the
/// pooled min/max of `pooled_states`, widened by 5% of the range on each side.
inline FeatureMap build_feature_map(const FeatureSpec& spec, std::span<const Vec> pooled_states, int d) {
  if (d < 1) throw Error(ErrorCode::InvalidArgument, "feature dimension must be >= 1");
  FeatureMap fm;
  fm.spec_ = spec;
  fm.d_ = d;

  if (spec.kind == FeatureKind::PolynomialTensor) {
    if (spec.max_total_degree < 1) throw Error(ErrorCode::InvalidArgument, "max_total_degree must be >= 1");
    std::vector<int> cur(d, 0);
    for (int g = spec.include_intercept ? 0 : 1; g <= spec.max_total_degree; ++g) {
      detail::enumerate_exponents(d, g, cur, 0, fm.exponents_);
    }
    fm.m_ = static_cast<int>(fm.exponents_.size());
  } else {
    if (spec.n_basis < spec.degree + 1) throw Error(ErrorCode::InvalidArgument, "feature n_basis < degree + 1");
    fm.lo_.resize(d);
    fm.hi_.resize(d);
    if (!spec.domain_lo.empty() || !spec.domain_hi.empty()) {
      if (static_cast<int>(spec.domain_lo.size()) != d || static_cast<int>(spec.domain_hi.size()) != d) {
        throw Error(ErrorCode::InvalidArgument, "feature domain must give one [lo, hi] per dimension");
      }
      for (int k = 0; k < d; ++k) {
        fm.lo_[k] = spec.domain_lo[k];
        fm.hi_[k] = spec.domain_hi[k];
      }
    } else {
      if (pooled_states.empty()) throw Error(ErrorCode::NoSamples, "no pooled states for an empirical domain");
      fm.lo_.setConstant(std::numeric_limits<double>::infinity());
      fm.hi_.setConstant(-std::numeric_limits<double>::infinity());
      for (const auto& s : pooled_states) {
        fm.lo_ = fm.lo_.cwiseMin(s);
        fm.hi_ = fm.hi_.cwiseMax(s);
      }
      const Vec pad = 0.05 * (fm.hi_ - fm.lo_);
      fm.lo_ -= pad;
      fm.hi_ += pad;
    }
    fm.m_ = spec.include_intercept ? 1 : 0;
    for (int k = 0; k < d; ++k) {
      if (!(fm.hi_[k] > fm.lo_[k])) {
        throw Error(ErrorCode::DegenerateDomain, "state dimension " + std::to_string(k + 1) + " has lo == hi");
      }
      const double ends[2] = {fm.lo_[k], fm.hi_[k]};
      fm.knots_.push_back(make_knot_vector(ends, spec.n_basis, spec.degree, KnotPlacement::Uniform));
      fm.m_ += spec.n_basis - fm.first_kept(k);
    }
  }
  if (fm.m_ < 2) throw Error(ErrorCode::InvalidArgument, "feature map needs at least 2 features");
  return fm;
}

inline Vec psi(const FeatureMap& fm, const Vec& s) { return fm.psi(s); }
inline Mat grad_psi(const FeatureMap& fm, const Vec& s) { return fm.grad_psi(s); }

/// Average of Psi under the reference measure.
inline Vec integrate_psi(const FeatureMap& fm, const ReferenceMeasure& measure, std::span<const Vec> samples = {}) {
  using Kind = ReferenceMeasure::Kind;
  switch (measure.kind) {
    case Kind::PointMass:
      if (measure.point.size() != fm.dim()) throw Error(ErrorCode::InvalidArgument, "point mass has wrong dimension");
      return fm.psi(measure.point);
    case Kind::EmpiricalInitialStates: {
      if (samples.empty()) throw Error(ErrorCode::NoSamples, "empirical reference measure needs initial states");
      Vec acc = Vec::Zero(fm.size());
      for (const auto& s : samples) acc += fm.psi(s);
      return acc / static_cast<double>(samples.size());
    }
    case Kind::UniformGrid: {
      const int d = fm.dim();
      if (measure.lo.size() != d || measure.hi.size() != d || measure.n_grid < 1) {
        throw Error(ErrorCode::InvalidArgument, "uniform grid measure needs lo, hi per dimension and n_grid >= 1");
      }
      const int g = measure.n_grid;
      std::vector<int> idx(d, 0);
      Vec acc = Vec::Zero(fm.size());
      Vec s(d);
      long count = 0;
      while (true) {
        for (int k = 0; k < d; ++k) {
          s[k] = g == 1 ? 0.5 * (measure.lo[k] + measure.hi[k])
                        : measure.lo[k] + (measure.hi[k] - measure.lo[k]) * idx[k] / (g - 1);
        }
        acc += fm.psi(s);
        ++count;
        int k = 0;
        while (k < d && ++idx[k] == g) idx[k++] = 0;
        if (k == d) break;
      }
      return acc / static_cast<double>(count);
    }
  }
  return Vec::Zero(fm.size());
}

}  // namespace cttest
