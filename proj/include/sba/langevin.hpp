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

#ifndef SBA_LANGEVIN_HPP_
#define SBA_LANGEVIN_HPP_

#include <optional>

#include "sba/common.hpp"
#include "sba/manifold.hpp"

namespace sba {

struct PriorConfig {
  double kappa0 = 1.0;
  double tau = 0.1;

  void validate() const;
};

// Matrix Langevin distribution on St(k, d), density exp(tr(F^T U)) / c(F)
// with respect to the normalized Haar measure.
class MatrixLangevin {
 public:
  explicit MatrixLangevin(Matrix f);

  const Matrix& f() const { return f_; }
  Index d() const { return f_.rows(); }
  Index k() const { return f_.cols(); }
  bool has_mode() const { return mode_.has_value(); }
  // Throws RankDeficiencyError when F is rank deficient.
  const StiefelPoint& mode() const;
  // Saddle-point log c(F), cached at construction.
  double log_normalizer() const { return log_normalizer_; }

 private:
  Matrix f_;
  std::optional<StiefelPoint> mode_;
  double log_normalizer_;
};

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

double ml_log_density_unnorm(const MatrixLangevin& dist, const StiefelPoint& u);

StiefelPoint ml_mode(const MatrixLangevin& dist);

// Monte Carlo estimate of log E_Haar[exp(tr(F^T U))]. Each Haar draw is
// averaged over its column sign-flip orbit, which is exact for the Haar law
// and leaves the expectation unchanged. Accumulation is max-shifted.
McEstimate ml_log_normalizer_mc(const Matrix& f, long n, Rng& rng);

// Same estimator with the sample budget split over `shards` independent
// streams derived from `rng`, combined by log-sum-exp in shard order.
McEstimate ml_log_normalizer_mc_sharded(const Matrix& f, long n, Rng& rng,
                                        int shards, int workers);

// Saddle-point approximation to log 0F1(d/2; F^T F / 4). Depends on F only
// through its singular values; exactly 0 at F = 0.
double ml_log_normalizer_saddlepoint(const Matrix& f);
double ml_log_normalizer_saddlepoint(const Vector& singular_values, Index d);

MatrixLangevin make_prior(const StiefelPoint& u_init, const PriorConfig& config);

TangentVector ml_riemannian_grad_log_density(const MatrixLangevin& dist,
                                             const StiefelPoint& u);

}  // namespace sba

#endif  // SBA_LANGEVIN_HPP_
