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

#ifndef SBA_GEOMETRY_LAB_HPP_
#define SBA_GEOMETRY_LAB_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "sba/common.hpp"
#include "sba/langevin.hpp"
#include "sba/manifold.hpp"

namespace sba {

// Second-order cross term of the polar projection of U + xi_T + U S:
// -xi_T S + 1/2 U (U^T xi_T S - S U^T xi_T).
TangentVector delta_term(const StiefelPoint& u, const TangentVector& xi_t,
                         const Matrix& s);

struct ExpansionProbe {
  StiefelPoint base;
  TangentVector xi_t;  // unit Frobenius norm
  Matrix s_mat;        // symmetric, unit Frobenius norm (or zero)
  std::vector<double> scales;
};

// kWithoutDelta drops the delta term from the comparison; kCorruptedDelta
// flips the sign of its second summand. Both serve as negative controls.
enum class ExpansionVariant { kFull, kWithoutDelta, kCorruptedDelta };

std::vector<double> default_expansion_scales();

ExpansionProbe random_probe(Index d, Index k, Rng& rng, bool zero_s = false);

// r(eps) = || polar(U + eps xi + eps U S)
//            - [U + eps xi - eps^2/2 U xi^T xi + eps^2 delta] ||_F
std::vector<double> expansion_residual(const ExpansionProbe& probe,
                                       ExpansionVariant variant = ExpansionVariant::kFull);

// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

struct GeometrySuiteReport {
  long trials = 0;
  long tangency_failures = 0;
  long slope_failures = 0;
  double max_tangency_residual = 0.0;
  double min_slope = 0.0;
  double max_slope = 0.0;
  std::string variant;
  bool passed() const { return tangency_failures == 0 && slope_failures == 0; }
};

inline constexpr double kDeltaTangencyTol = 1e-12;
inline constexpr double kExpansionSlopeMin = 2.7;

// Random probes with d uniform in [4, 16] and k uniform in [1, min(4, d)].
GeometrySuiteReport run_geometry_suite(long trials, std::uint64_t seed,
                                       ExpansionVariant variant = ExpansionVariant::kFull);

std::string to_string(ExpansionVariant v);

// Negative Riemannian Hessian of tr(F^T U) at the mode, in the coordinates
// of tangent_basis(mode).
Matrix ml_tangent_precision(const MatrixLangevin& target);

struct KLGapResult {
  double kl_tang = 0.0;
  double kl_proj = 0.0;
  double gap = 0.0;
  double mc_stderr = 0.0;  // standard error of the gap (paired samples)
  double kl_tang_stderr = 0.0;
  double kl_proj_stderr = 0.0;
  // Configuration snapshot.
  Index d = 0;
  Index k = 0;
  double kappa = 0.0;  // mean singular value of F
  double trace_sigma_t = 0.0;
  double trace_sigma_n = 0.0;
  long n_mc = 0;
  std::uint64_t seed = 0;
  int importance_draws = 0;
};

inline constexpr long kKlMinSamples = 100;

// Monte Carlo KL(q || p_ML) for the tangent construction (Gaussian in the
// tangent chart at the mode, mapped by the polar retraction) and the
// projected construction (ambient Gaussian with tangent covariance sigma_t
// and normal covariance sigma_n, projected by polar_project).
// sigma_t: m x m in tangent_basis(mode) coordinates; sigma_n: p x p in the
// orthonormal normal coordinates of sym_to_normal_coords, p = k(k+1)/2.
// The projected density is evaluated by integrating the ambient density over
// the polar fibre {U Q : Q symmetric positive definite} with Laplace-proposal
// importance sampling (`importance_draws` draws). When sigma_n is exactly zero
// both constructions coincide and the same draws are used for both.
KLGapResult kl_gap_estimate(const MatrixLangevin& target, const Matrix& sigma_t,
                            const Matrix& sigma_n, long n_mc, Rng& rng,
                            int importance_draws = 64, int workers = 1);

struct KLGapGrid {
  Index d = 16;
  Index k = 3;
  double kappa = 50.0;
  long n_mc = 100000;
  std::uint64_t seed = 0;
  double tangent_scale = 1.0;  // sigma_t = tangent_scale * (tangent precision)^-1
  // Per-coordinate normal variance as a multiple of the mean tangent variance.
  std::vector<double> normal_ratios = {0.0, 4.0, 6.0, 8.0};
  int importance_draws = 64;
};

// Below this normal/tangent variance ratio the gap at kappa = 50, d = 16,
// k = 3 is not positive; see the README.
inline constexpr double kKlGapRatioThreshold = 3.0;

// Runs kl_gap_estimate for each ratio with the same seed (common random
// numbers across the grid). Target: F = kappa * [I_k; 0].
std::vector<KLGapResult> run_kl_gap_grid(const KLGapGrid& grid, int workers = 1);

}  // namespace sba

#endif  // SBA_GEOMETRY_LAB_HPP_
