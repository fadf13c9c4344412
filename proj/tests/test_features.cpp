#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "cttest/features.hpp"

namespace cttest {
namespace {

Vec v(std::initializer_list<double> xs) {
  Vec out(static_cast<Eigen::Index>(xs.size()));
  int k = 0;
  for (double x : xs) out[k++] = x;
  return out;
}

FeatureSpec poly(int degree) {
  FeatureSpec f;
  f.kind = FeatureKind::PolynomialTensor;
  f.max_total_degree = degree;
  return f;
}

FeatureSpec bspline(int n) {
  FeatureSpec f;
  f.kind = FeatureKind::AdditiveBSpline;
  f.n_basis = n;
  return f;
}

std::vector<Vec> cloud(int d, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec> out;
  for (int i = 0; i < n; ++i) {
    Vec s(d);
    for (int k = 0; k < d; ++k) s[k] = g(rng);
    out.push_back(s);
  }
  return out;
}

TEST(FeatureMap, LinearOneDimensional) {
  const auto pooled = cloud(1, 10, 1);
  const auto fm = build_feature_map(poly(1), pooled, 1);
  EXPECT_EQ(fm.size(), 2);
  EXPECT_EQ(psi(fm, v({2.0})), v({1.0, 2.0}));
  const Mat g = grad_psi(fm, v({2.0}));
  ASSERT_EQ(g.rows(), 1);
  EXPECT_EQ(g(0, 0), 0.0);
  EXPECT_EQ(g(0, 1), 1.0);
}

TEST(FeatureMap, QuadraticTwoDimensionalOrdering) {
  const auto fm = build_feature_map(poly(2), cloud(2, 10, 2), 2);
  ASSERT_EQ(fm.size(), 6);
  EXPECT_TRUE(psi(fm, v({2.0, 3.0})).isApprox(v({1.0, 2.0, 3.0, 4.0, 6.0, 9.0})));
}

TEST(FeatureMap, AdditiveBSplineCount) {
  EXPECT_EQ(build_feature_map(bspline(6), cloud(1, 30, 3), 1).size(), 6);
  EXPECT_EQ(build_feature_map(bspline(6), cloud(2, 30, 3), 2).size(), 11);
  FeatureSpec no_icpt = bspline(6);
  no_icpt.include_intercept = false;
  EXPECT_EQ(build_feature_map(no_icpt, cloud(2, 30, 3), 2).size(), 11);
}

TEST(FeatureMap, SizesAgree) {
  for (const auto& spec : {poly(1), poly(2), poly(3), bspline(5), bspline(8)}) {
    for (int d : {1, 2, 3}) {
      const auto fm = build_feature_map(spec, cloud(d, 40, 4), d);
      const Vec s = cloud(d, 1, 5).front();
      EXPECT_EQ(psi(fm, s).size(), fm.size());
      EXPECT_EQ(grad_psi(fm, s).cols(), fm.size());
      EXPECT_EQ(grad_psi(fm, s).rows(), d);
    }
  }
}

TEST(FeatureMap, GradientMatchesFiniteDifference) {
  const double h = 1e-5;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.2, 1.2);
  for (const auto& spec : {poly(1), poly(2), poly(3), bspline(4), bspline(6), bspline(9)}) {
    for (int d : {1, 2, 3}) {
      const auto fm = build_feature_map(spec, cloud(d, 200, 6 + d), d);
      for (int trial = 0; trial < 25; ++trial) {
        Vec s(d);
        for (int k = 0; k < d; ++k) s[k] = u(rng);
        const Mat g = grad_psi(fm, s);
        for (int k = 0; k < d; ++k) {
          Vec e = Vec::Zero(d);
          e[k] = h;
          const Vec fd = (psi(fm, s + e) - psi(fm, s - e)) / (2 * h);
          EXPECT_LT((fd - g.row(k).transpose()).cwiseAbs().maxCoeff(), 1e-6);
        }
        EXPECT_EQ(g.col(0).norm(), 0.0);  // intercept
      }
    }
  }
}

TEST(FeatureMap, BSplineClampsOutsideDomain) {
  const auto fm = build_feature_map(bspline(6), cloud(1, 50, 8), 1);
  const double far = fm.domain_hi()[0] + 10.0;
  EXPECT_TRUE(psi(fm, v({far})).isApprox(psi(fm, v({fm.domain_hi()[0]}))));
  EXPECT_EQ(grad_psi(fm, v({far})).norm(), 0.0);
}

TEST(FeatureMap, ExplicitDomain) {
  FeatureSpec spec = bspline(6);
  spec.domain_lo = {0.0};
  spec.domain_hi = {2.0};
  const auto fm = build_feature_map(spec, {}, 1);
  EXPECT_EQ(fm.domain_lo()[0], 0.0);
  EXPECT_EQ(fm.domain_hi()[0], 2.0);
}

TEST(FeatureMap, EmpiricalDomainWidenedFivePercent) {
  const std::vector<Vec> pooled{v({0.0}), v({10.0})};
  const auto fm = build_feature_map(bspline(6), pooled, 1);
  EXPECT_NEAR(fm.domain_lo()[0], -0.5, 1e-12);
  EXPECT_NEAR(fm.domain_hi()[0], 10.5, 1e-12);
}

TEST(FeatureMap, Errors) {
  const std::vector<Vec> flat{v({1.0}), v({1.0})};
  try {
    build_feature_map(bspline(6), flat, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateDomain);
  }
  try {
    build_feature_map(bspline(6), {}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoSamples);
  }
  EXPECT_THROW(build_feature_map(poly(0), flat, 1), Error);
}

TEST(Integrate, PointMassEmpiricalGrid) {
  const auto fm = build_feature_map(poly(1), cloud(1, 10, 1), 1);
  EXPECT_EQ(integrate_psi(fm, ReferenceMeasure::point_mass(v({0.0}))), v({1.0, 0.0}));
  const std::vector<Vec> init{v({-1.0}), v({1.0})};
  EXPECT_TRUE(integrate_psi(fm, ReferenceMeasure::empirical(), init).isApprox(v({1.0, 0.0})));
  const Vec grid = integrate_psi(fm, ReferenceMeasure::uniform_grid(v({0.0}), v({1.0}), 101));
  EXPECT_NEAR(grid[0], 1.0, 1e-12);
  EXPECT_NEAR(grid[1], 0.5, 1e-12);
}

TEST(Integrate, GridTwoDimensional) {
  const auto fm = build_feature_map(poly(2), cloud(2, 10, 1), 2);
  const Vec g = integrate_psi(fm, ReferenceMeasure::uniform_grid(v({0.0, -1.0}), v({1.0, 1.0}), 3));
  // Grid {0, .5, 1} x {-1, 0, 1}: E[s1]=.5, E[s2]=0, E[s1^2]=5/12, E[s1 s2]=0, E[s2^2]=2/3.
  EXPECT_TRUE(g.isApprox(v({1.0, 0.5, 0.0, 5.0 / 12.0, 0.0, 2.0 / 3.0}), 1e-12));
}

TEST(Integrate, EmpiricalNeedsSamples) {
  const auto fm = build_feature_map(poly(1), cloud(1, 10, 1), 1);
  try {
    integrate_psi(fm, ReferenceMeasure::empirical());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoSamples);
  }
}

}  // namespace
}  // namespace cttest
