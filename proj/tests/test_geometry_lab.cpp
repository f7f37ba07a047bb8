// Copyright 2026 The SBA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "sba/geometry_lab.hpp"
#include "sba/inference.hpp"
#include "test_util.hpp"

namespace sba {
namespace {

// Second-order coefficient of polar(U + e xi + e U S) by central differences,
// minus the -1/2 U xi^T xi part, which leaves the Delta term.
Matrix delta_oracle(const ExpansionProbe& p, double e = 1e-3) {
  const Matrix& u = p.base.matrix();
  const Matrix& xi = p.xi_t.matrix();
  const Matrix plus = polar_project(u + e * xi + e * u * p.s_mat).matrix();
  const Matrix minus = polar_project(u - e * xi - e * u * p.s_mat).matrix();
  return (plus + minus - 2.0 * u) / (2.0 * e * e) + 0.5 * u * (xi.transpose() * xi);
}

TEST(DeltaTerm, MatchesFiniteDifferenceOracle) {
  Rng rng(1);
  for (int t = 0; t < 40; ++t) {
    const Index d = 3 + static_cast<Index>(rng.next_u64() % 8);
    const Index k = 1 + static_cast<Index>(rng.next_u64() % std::min<Index>(4, d));
    const ExpansionProbe p = random_probe(d, k, rng);
    const Matrix delta = delta_term(p.base, p.xi_t, p.s_mat).matrix();
    EXPECT_LE(max_abs(delta - delta_oracle(p)), 1e-5) << "d=" << d << " k=" << k;
  }
}

TEST(DeltaTerm, IsTangentAndVanishesWithoutNormalPart) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    const ExpansionProbe p = random_probe(6, 3, rng);
    const Matrix delta = delta_term(p.base, p.xi_t, p.s_mat).matrix();
    EXPECT_LE(TangentVector::tangency_error(p.base.matrix(), delta), kDeltaTangencyTol);
  }
  const ExpansionProbe z = random_probe(6, 3, rng, true);
  EXPECT_EQ(max_abs(delta_term(z.base, z.xi_t, z.s_mat).matrix()), 0.0);
}

TEST(ExpansionResidual, ThirdOrderOnlyWithDelta) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const ExpansionProbe p = random_probe(7, 2, rng);
    EXPECT_GE(loglog_slope(p.scales, expansion_residual(p)), kExpansionSlopeMin);
    EXPECT_LT(loglog_slope(p.scales, expansion_residual(p, ExpansionVariant::kWithoutDelta)), 2.3);
    EXPECT_LT(loglog_slope(p.scales, expansion_residual(p, ExpansionVariant::kCorruptedDelta)), kExpansionSlopeMin);
  }
  const ExpansionProbe z = random_probe(7, 2, rng, true);
  EXPECT_GE(loglog_slope(z.scales, expansion_residual(z, ExpansionVariant::kWithoutDelta)),
            kExpansionSlopeMin);
}

TEST(LoglogSlope, RecoversPowerLaws) {
  const std::vector<double> x{1e-1, 3e-2, 1e-2, 3e-3};
  for (double a : {1.0, 2.5, 3.0}) {
    std::vector<double> y;
    for (double v : x) y.push_back(7.0 * std::pow(v, a));
    EXPECT_NEAR(loglog_slope(x, y), a, 1e-12);
  }
  EXPECT_THROW(loglog_slope({1.0}, {1.0}), ShapeError);
}

TEST(GeometrySuite, PassesAndNegativeControlFails) {
  const GeometrySuiteReport ok = run_geometry_suite(300, 4);
  EXPECT_TRUE(ok.passed());
  EXPECT_EQ(ok.trials, 300);
  EXPECT_GE(ok.min_slope, kExpansionSlopeMin);
  EXPECT_LE(ok.max_tangency_residual, kDeltaTangencyTol);
  const GeometrySuiteReport bad = run_geometry_suite(50, 4, ExpansionVariant::kWithoutDelta);
  EXPECT_FALSE(bad.passed());
  EXPECT_GT(bad.slope_failures, 40);
  EXPECT_EQ(bad.variant, "without_delta");
  EXPECT_THROW(run_geometry_suite(0, 1), ConfigError);
}

TEST(TangentPrecision, MatchesFiniteDifferenceHessian) {
  Rng rng(5);
  const MatrixLangevin target(3.0 * rng.normal_matrix(6, 2));
  const TangentBasis basis(target.mode());
  const Matrix h = riemannian_hessian_fd(basis, [&](const StiefelPoint&) { return target.f(); });
  EXPECT_LE(max_abs(ml_tangent_precision(target) + h), 1e-7);
  Matrix f = Matrix::Zero(5, 2);
  f.topRows(2) = 4.0 * Matrix::Identity(2, 2);
  EXPECT_LE(max_abs(ml_tangent_precision(MatrixLangevin(f)) - 4.0 * Matrix::Identity(7, 7)), 1e-12);
}

// On the sphere the polar map is the gnomonic projection with Jacobian cos^d.
TEST(KlGap, TangentKlMatchesGnomonicOracleOnSphere) {
  const Index d = 6;
  const double kappa = 20.0;
  Matrix f = Matrix::Zero(d, 1);
  f(0, 0) = kappa;
  const MatrixLangevin target(f);
  const Matrix sigma_t = Matrix::Identity(d - 1, d - 1) / kappa;
  Rng rng(6);
  const KLGapResult r = kl_gap_estimate(target, sigma_t, Matrix::Zero(1, 1), 4000, rng);

  const double nu = 0.5 * d - 1.0;
  const double log_c = std::lgamma(0.5 * d) - nu * std::log(0.5 * kappa) +
                       std::log(std::cyl_bessel_i(nu, kappa));
  const double log_vol = std::log(2.0) + 0.5 * d * std::log(std::numbers::pi) - std::lgamma(0.5 * d);
  Rng orng(60);
  const int n = 40000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const Vector z = orng.normal_vector(d - 1) / std::sqrt(kappa);
    const double r2 = z.squaredNorm();
    const double log_q = -0.5 * kappa * r2 - 0.5 * (d - 1) * std::log(2 * std::numbers::pi / kappa) +
                         0.5 * d * std::log1p(r2);
    const double log_p = kappa / std::sqrt(1.0 + r2) - log_c - log_vol;
    s += log_q - log_p;
    s2 += (log_q - log_p) * (log_q - log_p);
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  // The library normalizes the target with the saddle-point value.
  const double offset = target.log_normalizer() - log_c;
  EXPECT_LE(std::abs(r.kl_tang - (mean + offset)), 4.0 * std::hypot(se, r.kl_tang_stderr));
  EXPECT_EQ(r.gap, 0.0);
  EXPECT_EQ(r.mc_stderr, 0.0);
}

// At high concentration the tangent Gaussian matches the target up to the
// normalizer, so kl_tang reduces to the saddle-point offset from the Laplace
// asymptote of the exact normalizer.
TEST(KlGap, ConcentratedTangentKlIsNormalizerOffset) {
  const double kappa = 1e4;
  Matrix f = Matrix::Zero(5, 2);
  f.topRows(2) = kappa * Matrix::Identity(2, 2);
  const MatrixLangevin target(f);
  const Matrix prec = ml_tangent_precision(target);
  const double m = static_cast<double>(prec.rows());
  const double laplace = 2.0 * kappa + 0.5 * m * std::log(2.0 * std::numbers::pi) -
                         0.5 * std::log(prec.determinant()) - log_stiefel_volume(5, 2);
  Rng rng(7);
  const KLGapResult r = kl_gap_estimate(target, prec.inverse(), Matrix::Zero(3, 3), 1000, rng);
  EXPECT_NEAR(r.kl_tang, target.log_normalizer() - laplace, 1e-3);
}

TEST(KlGap, NormalVarianceOpensAPositiveGap) {
  KLGapGrid g;
  g.d = 6;
  g.k = 2;
  g.n_mc = 400;
  g.normal_ratios = {0.0, 8.0};
  g.importance_draws = 32;
  const std::vector<KLGapResult> rows = run_kl_gap_grid(g);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].gap, 0.0);
  EXPECT_EQ(rows[0].kl_tang, rows[1].kl_tang);
  EXPECT_GT(rows[1].gap, 3.0 * rows[1].mc_stderr);
  EXPECT_EQ(rows[1].n_mc, 400);
  EXPECT_NEAR(rows[1].kappa, 50.0, 1e-12);
}

TEST(KlGap, GapShrinksWithNormalVariance) {
  KLGapGrid g;
  g.d = 6;
  g.k = 2;
  g.n_mc = 400;
  g.normal_ratios = {1e-1, 1e-2, 1e-4};
  g.importance_draws = 32;
  const std::vector<KLGapResult> rows = run_kl_gap_grid(g);
  EXPECT_LT(std::abs(rows[2].gap), std::abs(rows[0].gap));
  EXPECT_LT(std::abs(rows[2].gap), 0.01);
}

TEST(KlGap, WorkerCountDoesNotChangeResults) {
  KLGapGrid g;
  g.d = 5;
  g.k = 2;
  g.n_mc = 200;
  g.normal_ratios = {6.0};
  g.importance_draws = 16;
  const KLGapResult a = run_kl_gap_grid(g, 1)[0];
  const KLGapResult b = run_kl_gap_grid(g, 3)[0];
  EXPECT_EQ(a.gap, b.gap);
  EXPECT_EQ(a.kl_proj, b.kl_proj);
}

TEST(KlGap, RejectsBadInputs) {
  Matrix f = Matrix::Zero(4, 2);
  f.topRows(2) = 10.0 * Matrix::Identity(2, 2);
  const MatrixLangevin target(f);
  Rng rng(8);
  const Matrix st = Matrix::Identity(5, 5) * 0.1;
  EXPECT_THROW(kl_gap_estimate(target, st, Matrix::Zero(3, 3), kKlMinSamples - 1, rng),
               DegenerateInputError);
  EXPECT_THROW(kl_gap_estimate(target, -st, Matrix::Zero(3, 3), 200, rng), ConfigError);
  EXPECT_THROW(kl_gap_estimate(target, st, Matrix::Zero(2, 2), 200, rng), ShapeError);
  KLGapGrid g;
  g.normal_ratios = {-1.0};
  EXPECT_THROW(run_kl_gap_grid(g), ConfigError);
  g = KLGapGrid{};
  g.kappa = 0.0;
  EXPECT_THROW(run_kl_gap_grid(g), ConfigError);
}

}  // namespace
}  // namespace sba
