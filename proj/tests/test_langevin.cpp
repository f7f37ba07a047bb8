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

#include "sba/langevin.hpp"
#include "test_util.hpp"

namespace sba {
namespace {

using testing::random_tangent;
using testing::rel_diff;

// 0F1(d/2; kappa^2/4) = Gamma(d/2) (kappa/2)^{1-d/2} I_{d/2-1}(kappa).
double log_bessel_normalizer(double kappa, Index d) {
  const double nu = 0.5 * d - 1.0;
  return std::lgamma(0.5 * d) - nu * std::log(0.5 * kappa) + std::log(std::cyl_bessel_i(nu, kappa));
}

Matrix kappa_frame(Index d, Index k, double kappa) {
  Matrix f = Matrix::Zero(d, k);
  f.topRows(k) = kappa * Matrix::Identity(k, k);
  return f;
}

// Plain Haar average of exp(tr(F^T U)), no variance reduction.
McEstimate naive_mc(const Matrix& f, int n, Rng& rng) {
  std::vector<double> v(n);
  double mx = -1e300;
  for (int i = 0; i < n; ++i) {
    v[i] = (f.array() * haar_sample(f.rows(), f.cols(), rng).matrix().array()).sum();
    mx = std::max(mx, v[i]);
  }
  double s = 0.0, s2 = 0.0;
  for (double x : v) {
    const double e = std::exp(x - mx);
    s += e;
    s2 += e * e;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  return {mx + std::log(mean), std::sqrt(var / n) / mean};
}

TEST(MatrixLangevinDensity, UniformCaseIsZero) {
  Rng rng(1);
  const MatrixLangevin dist(Matrix::Zero(5, 2));
  for (int i = 0; i < 10; ++i) EXPECT_EQ(ml_log_density_unnorm(dist, haar_sample(5, 2, rng)), 0.0);
}

TEST(MatrixLangevinDensity, ValueAtModeIsKappaTimesK) {
  Rng rng(2);
  const StiefelPoint u0 = haar_sample(7, 3, rng);
  const MatrixLangevin dist(2.5 * u0.matrix());
  EXPECT_NEAR(ml_log_density_unnorm(dist, dist.mode()), 2.5 * 3, 1e-12);
}

TEST(MatrixLangevinDensity, MatchesElementwiseSum) {
  Rng rng(3);
  const Matrix f = rng.normal_matrix(6, 2);
  const StiefelPoint u = haar_sample(6, 2, rng);
  double oracle = 0.0;
  for (Index i = 0; i < 6; ++i) {
    for (Index j = 0; j < 2; ++j) oracle += f(i, j) * u.matrix()(i, j);
  }
  EXPECT_NEAR(ml_log_density_unnorm(MatrixLangevin(f), u), oracle, 1e-12);
}

TEST(MatrixLangevinMode, OrthonormalAndScaledInputs) {
  Rng rng(4);
  const StiefelPoint u0 = haar_sample(6, 3, rng);
  EXPECT_LE(max_abs(ml_mode(MatrixLangevin(u0.matrix())).matrix() - u0.matrix()), 1e-12);
  EXPECT_LE(max_abs(ml_mode(MatrixLangevin(3.0 * u0.matrix())).matrix() - u0.matrix()), 1e-12);
}

TEST(MatrixLangevinMode, NoHaarSampleBeatsTheMode) {
  Rng rng(5);
  const MatrixLangevin dist(rng.normal_matrix(5, 2));
  const double best = ml_log_density_unnorm(dist, ml_mode(dist));
  for (int i = 0; i < 10000; ++i) {
    EXPECT_LE(ml_log_density_unnorm(dist, haar_sample(5, 2, rng)), best + 1e-12);
  }
}

TEST(MatrixLangevinMode, RankDeficientHasNoMode) {
  Matrix f = Matrix::Zero(4, 2);
  f(0, 0) = 1.0;
  const MatrixLangevin dist(f);
  EXPECT_FALSE(dist.has_mode());
  EXPECT_THROW(dist.mode(), RankDeficiencyError);
}

TEST(NormalizerMc, ZeroParameterIsExactlyZero) {
  Rng rng(6);
  const McEstimate e = ml_log_normalizer_mc(Matrix::Zero(8, 3), 1000, rng);
  EXPECT_EQ(e.estimate, 0.0);
  EXPECT_EQ(e.std_error, 0.0);
}

TEST(NormalizerMc, MatchesBesselForSingleColumn) {
  for (Index d : {3, 8, 20}) {
    for (double kappa : {0.5, 2.0, 6.0}) {
      Rng rng(7 + d);
      const McEstimate e = ml_log_normalizer_mc(kappa_frame(d, 1, kappa), 200000, rng);
      const double exact = log_bessel_normalizer(kappa, d);
      EXPECT_LE(std::abs(e.estimate - exact), 4.0 * e.std_error + 1e-12)
          << "d=" << d << " kappa=" << kappa;
    }
  }
}

TEST(NormalizerMc, MatchesPlainHaarAverage) {
  Rng rng(8);
  const Matrix f = 0.8 * rng.normal_matrix(5, 2);
  Rng r1(9), r2(10);
  const McEstimate fast = ml_log_normalizer_mc(f, 100000, r1);
  const McEstimate slow = naive_mc(f, 200000, r2);
  EXPECT_LE(std::abs(fast.estimate - slow.estimate),
            4.0 * std::hypot(fast.std_error, slow.std_error));
}

TEST(NormalizerMc, InvariantUnderOrthogonalTransforms) {
  Rng rng(11);
  const Matrix f = 0.8 * rng.normal_matrix(5, 2);
  const Matrix q = haar_sample(2, 2, rng).matrix();
  const Matrix qd = haar_sample(5, 5, rng).matrix();
  Rng a(12), b(13), c(14);
  const McEstimate e0 = naive_mc(f, 100000, a);
  const McEstimate e1 = naive_mc(f * q, 100000, b);
  const McEstimate e2 = naive_mc(qd * f, 100000, c);
  EXPECT_LE(std::abs(e0.estimate - e1.estimate), 4.0 * std::hypot(e0.std_error, e1.std_error));
  EXPECT_LE(std::abs(e0.estimate - e2.estimate), 4.0 * std::hypot(e0.std_error, e2.std_error));
  EXPECT_NEAR(ml_log_normalizer_saddlepoint(f), ml_log_normalizer_saddlepoint(qd * f * q), 1e-12);
}

TEST(NormalizerMc, StandardErrorScalesWithSampleSize) {
  const Matrix f = kappa_frame(16, 4, 2.0);
  Rng a(15), b(16);
  const McEstimate small = ml_log_normalizer_mc(f, 50000, a);
  const McEstimate large = ml_log_normalizer_mc(f, 100000, b);
  const double ratio = small.std_error / large.std_error;
  EXPECT_GT(ratio, 1.25);
  EXPECT_LT(ratio, 1.6);
}

TEST(NormalizerMc, ShardedMatchesWorkerCountIndependence) {
  const Matrix f = kappa_frame(12, 3, 1.5);
  Rng a(17), b(17);
  const McEstimate one = ml_log_normalizer_mc_sharded(f, 40000, a, 8, 1);
  const McEstimate four = ml_log_normalizer_mc_sharded(f, 40000, b, 8, 4);
  EXPECT_EQ(one.estimate, four.estimate);
  EXPECT_EQ(one.std_error, four.std_error);
}

TEST(NormalizerMc, RejectsEmptyBudget) {
  Rng rng(18);
  EXPECT_THROW(ml_log_normalizer_mc(kappa_frame(4, 2, 1.0), 0, rng), DegenerateInputError);
}

TEST(NormalizerSaddlepoint, ZeroParameter) {
  EXPECT_EQ(ml_log_normalizer_saddlepoint(Matrix::Zero(10, 3)), 0.0);
}

TEST(NormalizerSaddlepoint, WithinTolerancesOfMonteCarlo) {
  for (Index d : {64, 128}) {
    for (double kappa : {1.0, 5.0}) {
      const Matrix f = kappa_frame(d, 4, kappa);
      Rng rng(19);
      const McEstimate mc = ml_log_normalizer_mc(f, 100000, rng);
      const double rel = std::abs(std::expm1(ml_log_normalizer_saddlepoint(f) - mc.estimate));
      EXPECT_LT(rel, d == 64 ? 0.02 : 0.005) << "d=" << d << " kappa=" << kappa;
    }
  }
}

TEST(NormalizerSaddlepoint, ErrorDecreasesWithDimensionForSingleColumn) {
  for (double kappa : {0.1, 0.5, 1.0, 2.0, 5.0}) {
    double prev = 1e300;
    for (Index d : {32, 64, 128}) {
      const double err = std::abs(std::expm1(ml_log_normalizer_saddlepoint(kappa_frame(d, 1, kappa)) -
                                             log_bessel_normalizer(kappa, d)));
      EXPECT_LE(err, prev) << "d=" << d << " kappa=" << kappa;
      prev = err;
    }
  }
}

TEST(MakePrior, ConcentrationControlsParameter) {
  Rng rng(20);
  const StiefelPoint u0 = haar_sample(6, 2, rng);
  PriorConfig cfg;
  cfg.kappa0 = 0.0;
  EXPECT_EQ(max_abs(make_prior(u0, cfg).f()), 0.0);
  cfg.kappa0 = 2.0;
  const MatrixLangevin p = make_prior(u0, cfg);
  EXPECT_LE(max_abs(p.mode().matrix() - u0.matrix()), 1e-12);
  EXPECT_EQ(PriorConfig{}.kappa0, 1.0);
  cfg.tau = 0.0;
  EXPECT_THROW(make_prior(u0, cfg), ConfigError);
}

TEST(LangevinGradient, ZeroAndStationaryCases) {
  Rng rng(21);
  const StiefelPoint u = haar_sample(6, 2, rng);
  EXPECT_EQ(max_abs(ml_riemannian_grad_log_density(MatrixLangevin(Matrix::Zero(6, 2)), u).matrix()), 0.0);
  const MatrixLangevin dist(rng.normal_matrix(6, 2));
  EXPECT_LE(ml_riemannian_grad_log_density(dist, dist.mode()).matrix().norm(), 1e-8);
}

TEST(LangevinGradient, MatchesFiniteDifferences) {
  Rng rng(22);
  const MatrixLangevin dist(rng.normal_matrix(7, 3));
  const StiefelPoint u = haar_sample(7, 3, rng);
  const Matrix g = ml_riemannian_grad_log_density(dist, u).matrix();
  const double h = 1e-5;
  for (int t = 0; t < 5; ++t) {
    const Matrix xi = random_tangent(u, rng);
    const double fp = ml_log_density_unnorm(dist, qr_retract(u, TangentVector(u, h * xi)));
    const double fm = ml_log_density_unnorm(dist, qr_retract(u, TangentVector(u, -h * xi)));
    EXPECT_LE(rel_diff((fp - fm) / (2 * h), (g.array() * xi.array()).sum()), 1e-5);
  }
}

}  // namespace
}  // namespace sba
