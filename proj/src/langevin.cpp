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

#include "sba/langevin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>
#include <vector>

namespace sba {
namespace {

// Streaming max-shifted accumulator for log-mean-exp and its delta-method
// standard error.
struct LogMeanExp {
  double shift = -std::numeric_limits<double>::infinity();
  double sum1 = 0.0;  // sum exp(v - shift)
  double sum2 = 0.0;  // sum exp(2 (v - shift))
  long n = 0;

  void add(double v) {
    if (v > shift) {
      const double r = std::exp(shift - v);
      sum1 *= r;
      sum2 *= r * r;
      shift = v;
    }
    const double e = std::exp(v - shift);
    sum1 += e;
    sum2 += e * e;
    ++n;
  }

  void merge(const LogMeanExp& o) {
    if (o.n == 0) return;
    if (n == 0) {
      *this = o;
      return;
    }
    const double s = std::max(shift, o.shift);
    const double a = std::exp(shift - s);
    const double b = std::exp(o.shift - s);
    sum1 = sum1 * a + o.sum1 * b;
    sum2 = sum2 * a * a + o.sum2 * b * b;
    shift = s;
    n += o.n;
  }

  McEstimate result() const {
    const double nd = static_cast<double>(n);
    const double mean = sum1 / nd;
    const double var = std::max(0.0, sum2 / nd - mean * mean);
    return {shift + std::log(mean), std::sqrt(var) / (mean * std::sqrt(nd))};
  }
};

double log_cosh(double x) {
  const double a = std::abs(x);
  return a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
}

// Diagonal of the top k x k block of a Haar d x k frame, sampled without
// forming the frame: Q = Z R^{-1} with R^T R = Z^T Z, where the bottom
// (d-k) rows contribute a Wishart_k(d-k, I) term.
void haar_top_diagonal(Index d, Index k, Rng& rng, Matrix& z_top, Matrix& gram,
                       Vector& diag_out) {
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < k; ++i) z_top(i, j) = rng.normal();
  }
  const Index n_bot = d - k;
  if (n_bot >= k) {
    // Bartlett decomposition.
    Matrix a = Matrix::Zero(k, k);
    for (Index i = 0; i < k; ++i) {
      a(i, i) = std::sqrt(rng.chi_squared(static_cast<double>(n_bot - i)));
      for (Index j = 0; j < i; ++j) a(i, j) = rng.normal();
    }
    gram.noalias() = a * a.transpose();
  } else {
    Matrix z_bot = rng.normal_matrix(n_bot, k);
    gram.noalias() = z_bot.transpose() * z_bot;
  }
  gram.noalias() += z_top.transpose() * z_top;
  Eigen::LLT<Matrix> llt(gram);
  // T^T = R^{-T} Z_top^T with R^T = L.
  const Matrix tt = llt.matrixL().solve(z_top.transpose());
  diag_out = tt.diagonal();
}

LogMeanExp mc_accumulate(const Vector& s, Index d, long n, Rng& rng) {
  const Index k = s.size();
  LogMeanExp acc;
  Matrix z_top(k, k), gram(k, k);
  Vector diag(k);
  for (long t = 0; t < n; ++t) {
    haar_top_diagonal(d, k, rng, z_top, gram, diag);
    double v = 0.0;
    for (Index j = 0; j < k; ++j) v += log_cosh(s(j) * diag(j));
    acc.add(v);
  }
  return acc;
}

// Laplace-type saddle-point density of X^T X at the identity for X with
// independent N(M, I/d)-scaled columns; omega are the squared singular values.
double saddle_log_density(const Vector& omega, double d) {
  const Index k = omega.size();
  Vector phi(k), theta(k), lambda(k);
  for (Index j = 0; j < k; ++j) {
    const double w = omega(j);
    phi(j) = 2.0 / (d + std::sqrt(d * d + 4.0 * w));
    theta(j) = 0.5 * (1.0 - 1.0 / phi(j));
    lambda(j) = phi(j) * phi(j) * w;
  }
  double kfun = 0.0;
  double logdet = 0.0;
  double theta_sum = 0.0;
  for (Index j = 0; j < k; ++j) {
    kfun += 0.5 * d * std::log(phi(j)) + omega(j) * theta(j) * phi(j);
    logdet += std::log(2.0 * d * phi(j) * phi(j) + 4.0 * lambda(j) * phi(j));
    theta_sum += theta(j);
  }
  for (Index a = 0; a < k; ++a) {
    for (Index b = a + 1; b < k; ++b) {
      logdet += std::log(d * phi(a) * phi(b) + lambda(a) * phi(b) +
                         lambda(b) * phi(a));
    }
  }
  const double p = 0.5 * static_cast<double>(k * (k + 1));
  return -0.5 * p * std::log(2.0 * std::numbers::pi) - 0.5 * logdet + kfun -
         theta_sum;
}

}  // namespace

void PriorConfig::validate() const {
  if (!(kappa0 >= 0.0) || !std::isfinite(kappa0)) {
    throw ConfigError("prior.kappa0 must be finite and >= 0");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("prior.tau must be finite and > 0");
  }
}

MatrixLangevin::MatrixLangevin(Matrix f) : f_(std::move(f)) {
  if (f_.cols() < 1 || f_.rows() < f_.cols()) {
    throw ShapeError("MatrixLangevin: F must be d x k with 1 <= k <= d");
  }
  if (!f_.allFinite()) throw NumericalError("MatrixLangevin: non-finite F");
  try {
    mode_.emplace(polar_project(f_));
  } catch (const RankDeficiencyError&) {
    mode_.reset();
  }
  log_normalizer_ = ml_log_normalizer_saddlepoint(f_);
}

const StiefelPoint& MatrixLangevin::mode() const {
  if (!mode_) throw RankDeficiencyError("MatrixLangevin: F is rank deficient");
  return *mode_;
}

double ml_log_density_unnorm(const MatrixLangevin& dist, const StiefelPoint& u) {
  require_shape(u.matrix(), dist.d(), dist.k(), "ml_log_density_unnorm");
  return dist.f().cwiseProduct(u.matrix()).sum();
}

StiefelPoint ml_mode(const MatrixLangevin& dist) { return dist.mode(); }

McEstimate ml_log_normalizer_mc(const Matrix& f, long n, Rng& rng) {
  if (n < 1) throw DegenerateInputError("ml_log_normalizer_mc: n must be >= 1");
  if (f.cols() < 1 || f.rows() < f.cols()) {
    throw ShapeError("ml_log_normalizer_mc: F must be d x k with k <= d");
  }
  const Vector s = f.jacobiSvd().singularValues();
  return mc_accumulate(s, f.rows(), n, rng).result();
}

McEstimate ml_log_normalizer_mc_sharded(const Matrix& f, long n, Rng& rng,
                                        int shards, int workers) {
  if (n < 1) throw DegenerateInputError("ml_log_normalizer_mc: n must be >= 1");
  if (shards < 1) shards = 1;
  workers = std::max(1, std::min(workers, shards));
  const Vector s = f.jacobiSvd().singularValues();
  std::vector<LogMeanExp> parts(static_cast<std::size_t>(shards));
  std::vector<Rng> streams;
  for (int i = 0; i < shards; ++i) streams.push_back(rng.split(static_cast<std::uint64_t>(i)));
  auto run = [&](int w) {
    for (int i = w; i < shards; i += workers) {
      const long lo = n * i / shards;
      const long hi = n * (i + 1) / shards;
      parts[i] = mc_accumulate(s, f.rows(), hi - lo, streams[i]);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  LogMeanExp total;
  for (const auto& p : parts) total.merge(p);
  return total.result();
}

double ml_log_normalizer_saddlepoint(const Vector& singular_values, Index d) {
  const Index k = singular_values.size();
  if (k < 1 || d < k) throw ShapeError("saddlepoint: need 1 <= k <= d");
  const Vector omega = singular_values.array().square();
  if (omega.maxCoeff() == 0.0) return 0.0;
  const double dd = static_cast<double>(d);
  return saddle_log_density(omega, dd) -
         saddle_log_density(Vector::Zero(k), dd) + 0.5 * omega.sum();
}

double ml_log_normalizer_saddlepoint(const Matrix& f) {
  if (f.cols() < 1 || f.rows() < f.cols()) {
    throw ShapeError("saddlepoint: F must be d x k with k <= d");
  }
  return ml_log_normalizer_saddlepoint(Vector(f.jacobiSvd().singularValues()),
                                       f.rows());
}

MatrixLangevin make_prior(const StiefelPoint& u_init, const PriorConfig& config) {
  config.validate();
  return MatrixLangevin(config.kappa0 * u_init.matrix());
}

TangentVector ml_riemannian_grad_log_density(const MatrixLangevin& dist,
                                             const StiefelPoint& u) {
  return tangent_project(u, dist.f());
}

}  // namespace sba
