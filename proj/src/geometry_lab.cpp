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

#include "sba/geometry_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

namespace sba {

TangentVector delta_term(const StiefelPoint& u, const TangentVector& xi_t,
                         const Matrix& s) {
  require_shape(s, u.k(), u.k(), "delta_term: S");
  require_shape(xi_t.matrix(), u.d(), u.k(), "delta_term: xi_T");
  const Matrix& um = u.matrix();
  const Matrix& xi = xi_t.matrix();
  const Matrix utx = um.transpose() * xi;
  return TangentVector(u, -xi * s + 0.5 * um * (utx * s - s * utx));
}

std::vector<double> default_expansion_scales() {
  return {1e-1, 3e-2, 1e-2, 3e-3, 1e-3};
}

ExpansionProbe random_probe(Index d, Index k, Rng& rng, bool zero_s) {
  StiefelPoint u = haar_sample(d, k, rng);
  Matrix xi = tangent_project(u, rng.normal_matrix(d, k)).matrix();
  xi /= xi.norm();
  Matrix s = Matrix::Zero(k, k);
  if (!zero_s) {
    s = sym(rng.normal_matrix(k, k));
    s /= s.norm();
  }
  TangentVector t(u, std::move(xi));
  return {std::move(u), std::move(t), std::move(s), default_expansion_scales()};
}

std::vector<double> expansion_residual(const ExpansionProbe& probe,
                                       ExpansionVariant variant) {
  const Matrix& u = probe.base.matrix();
  const Matrix& xi = probe.xi_t.matrix();
  const Matrix& s = probe.s_mat;
  const Matrix utx = u.transpose() * xi;
  Matrix delta = delta_term(probe.base, probe.xi_t, s).matrix();
  if (variant == ExpansionVariant::kWithoutDelta) delta.setZero();
  if (variant == ExpansionVariant::kCorruptedDelta) {
    delta = -xi * s - 0.5 * u * (utx * s - s * utx);
  }
  std::vector<double> out;
  for (double eps : probe.scales) {
    const Matrix w = u + eps * xi + eps * u * s;
    const Matrix approx =
        u + eps * xi - 0.5 * eps * eps * u * (xi.transpose() * xi) + eps * eps * delta;
    out.push_back((polar_project(w).matrix() - approx).norm());
  }
  return out;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ShapeError("loglog_slope: sizes");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]);
    const double ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::string to_string(ExpansionVariant v) {
  switch (v) {
    case ExpansionVariant::kFull: return "full";
    case ExpansionVariant::kWithoutDelta: return "without_delta";
    case ExpansionVariant::kCorruptedDelta: return "corrupted_delta";
  }
  return "full";
}

GeometrySuiteReport run_geometry_suite(long trials, std::uint64_t seed,
                                       ExpansionVariant variant) {
  if (trials < 1) throw ConfigError("trials must be >= 1");
  GeometrySuiteReport rep;
  rep.trials = trials;
  rep.variant = to_string(variant);
  rep.min_slope = std::numeric_limits<double>::infinity();
  rep.max_slope = -std::numeric_limits<double>::infinity();
  Rng rng(seed);
  for (long t = 0; t < trials; ++t) {
    const Index d = 4 + static_cast<Index>(rng.next_u64() % 13);
    const Index k = 1 + static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(std::min<Index>(4, d)));
    const ExpansionProbe probe = random_probe(d, k, rng);
    const Matrix delta = delta_term(probe.base, probe.xi_t, probe.s_mat).matrix();
    const double tres = TangentVector::tangency_error(probe.base.matrix(), delta);
    rep.max_tangency_residual = std::max(rep.max_tangency_residual, tres);
    if (!(tres <= kDeltaTangencyTol)) ++rep.tangency_failures;
    const double slope = loglog_slope(probe.scales, expansion_residual(probe, variant));
    rep.min_slope = std::min(rep.min_slope, slope);
    rep.max_slope = std::max(rep.max_slope, slope);
    if (!(slope >= kExpansionSlopeMin)) ++rep.slope_failures;
  }
  return rep;
}

Matrix ml_tangent_precision(const MatrixLangevin& target) {
  const StiefelPoint& u0 = target.mode();
  const TangentBasis basis(u0);
  const Matrix s = sym(u0.matrix().transpose() * target.f());
  Matrix p(basis.m(), basis.m());
  for (Index j = 0; j < basis.m(); ++j) {
    p.col(j) = basis.coordinates(basis.vectors()[static_cast<std::size_t>(j)].matrix() * s);
  }
  return sym(p);
}

namespace {

struct KlContext {
  Index d, k, m, p;
  const MatrixLangevin* target;
  const TangentBasis* basis;
  Matrix u0;
  Matrix chol_t;  // Sigma_T = L L^T
  Matrix prec_t;
  double log_norm_t;  // -1/2 log det(2 pi Sigma_T)
  bool has_normal;
  Matrix chol_n;
  Matrix prec_n;
  double log_norm_n;
  double log_p_const;  // -log c(F) - log Vol
  int importance_draws;
  std::vector<Matrix> sym_basis;  // d Q / d x_t: e_i e_j^T + e_j e_i^T or e_i e_i^T
};

double log_target(const KlContext& c, const Matrix& u) {
  return c.target->f().cwiseProduct(u).sum() + c.log_p_const;
}

Vector normal_coords(const KlContext& c, const Matrix& x) {
  return sym_to_normal_coords(sym(c.u0.transpose() * x));
}

// log of the polar-retraction volume factor at W = U0 + xi, i.e.
// 1/2 log det(G^T G) where G maps tangent coordinates at U0 to ambient
// displacements of polar(W).
double log_polar_jacobian(const KlContext& c, const PolarFactors& pf) {
  const Matrix& r = pf.q;
  const Vector& lam = pf.p_eigvals;
  const Matrix& v = pf.p_eigvecs;
  const Matrix pinv = v * lam.cwiseInverse().asDiagonal() * v.transpose();
  Matrix g(c.d * c.k, c.m);
  for (Index i = 0; i < c.m; ++i) {
    const Matrix& e = c.basis->vectors()[static_cast<std::size_t>(i)].matrix();
    const Matrix rte = r.transpose() * e;
    Matrix rt = v.transpose() * (rte - rte.transpose()) * v;
    for (Index a = 0; a < c.k; ++a) {
      for (Index b = 0; b < c.k; ++b) rt(a, b) /= lam(a) + lam(b);
    }
    const Matrix omega = v * rt * v.transpose();
    const Matrix ep = e * pinv;
    const Matrix dr = ep - r * (r.transpose() * ep) + r * omega;
    g.col(i) = dr.reshaped();
  }
  Eigen::LLT<Matrix> llt(g.transpose() * g);
  if (llt.info() != Eigen::Success) throw NumericalError("polar Jacobian is singular");
  return Eigen::Matrix<double, Eigen::Dynamic, 1>(llt.matrixLLT().diagonal()).array().log().sum();
}

Matrix sym_from_coords(const KlContext& c, const Vector& x) {
  Matrix q = Matrix::Zero(c.k, c.k);
  for (Index t = 0; t < c.p; ++t) q += x(t) * c.sym_basis[static_cast<std::size_t>(t)];
  return q;
}

// log density of the projected construction at U (w.r.t. the Riemannian
// volume), by integrating the ambient density over the fibre U Q.
double log_q_proj(const KlContext& c, const Matrix& u, Rng& rng) {
  const Index p = c.p;
  Matrix lt(c.m, p), ln(p, p);
  for (Index t = 0; t < p; ++t) {
    const Matrix w = u * c.sym_basis[static_cast<std::size_t>(t)];
    lt.col(t) = c.basis->coordinates(w);
    ln.col(t) = normal_coords(c, w);
  }
  const Vector t0 = c.basis->coordinates(-c.u0);
  const Vector n0 = normal_coords(c, -c.u0);
  const Matrix a = lt.transpose() * c.prec_t * lt + ln.transpose() * c.prec_n * ln;
  const Vector b = -(lt.transpose() * (c.prec_t * t0) + ln.transpose() * (c.prec_n * n0));
  const double c0 = -0.5 * (t0.dot(c.prec_t * t0) + n0.dot(c.prec_n * n0)) +
                    c.log_norm_t + c.log_norm_n;
  const double dk = static_cast<double>(c.d - c.k);

  auto log_integrand = [&](const Vector& x) {
    const Matrix q = sym_from_coords(c, x);
    Eigen::SelfAdjointEigenSolver<Matrix> es(q, Eigen::EigenvaluesOnly);
    const Vector& lam = es.eigenvalues();
    if (!(lam(0) > 0.0)) return -std::numeric_limits<double>::infinity();
    double s = 0.0;
    for (Index i = 0; i < c.k; ++i) {
      s += dk * std::log(lam(i));
      for (Index j = i + 1; j < c.k; ++j) s += std::log(lam(i) + lam(j));
    }
    return -0.5 * x.dot(a * x) + b.dot(x) + c0 + s;
  };
  // Concave part used for the mode search: quadratic + (d-k) log det Q.
  auto smooth = [&](const Vector& x, Vector* grad, Matrix* hess) {
    const Matrix q = sym_from_coords(c, x);
    Eigen::LLT<Matrix> llt(q);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const double logdet = 2.0 * Vector(llt.matrixLLT().diagonal()).array().log().sum();
    if (grad || hess) {
      const Matrix qi = llt.solve(Matrix::Identity(c.k, c.k));
      std::vector<Matrix> qb;
      for (Index t = 0; t < p; ++t) qb.push_back(qi * c.sym_basis[static_cast<std::size_t>(t)]);
      if (grad) {
        *grad = -a * x + b;
        for (Index t = 0; t < p; ++t) (*grad)(t) += dk * qb[static_cast<std::size_t>(t)].trace();
      }
      if (hess) {
        *hess = -a;
        for (Index t = 0; t < p; ++t) {
          for (Index s = 0; s < p; ++s) {
            (*hess)(t, s) -= dk * (qb[static_cast<std::size_t>(t)] * qb[static_cast<std::size_t>(s)]).trace();
          }
        }
      }
    }
    return -0.5 * x.dot(a * x) + b.dot(x) + dk * logdet;
  };

  Vector x = Vector::Zero(p);
  for (Index t = 0; t < p; ++t) {
    const Matrix& bt = c.sym_basis[static_cast<std::size_t>(t)];
    x(t) = bt.trace() > 0.0 ? 1.0 : 0.0;
  }
  Vector grad(p);
  Matrix hess(p, p);
  double val = smooth(x, &grad, &hess);
  for (int it = 0; it < 100; ++it) {
    const Vector step = hess.ldlt().solve(-grad);
    double alpha = 1.0;
    Vector xn = x + step;
    double vn = smooth(xn, nullptr, nullptr);
    while (!(vn >= val - 1e-12 * std::abs(val)) && alpha > 1e-12) {
      alpha *= 0.5;
      xn = x + alpha * step;
      vn = smooth(xn, nullptr, nullptr);
    }
    x = xn;
    val = smooth(x, &grad, &hess);
    if ((alpha * step).cwiseAbs().maxCoeff() < 1e-12) break;
  }
  const Matrix prop_prec = -hess;
  Eigen::LLT<Matrix> pl(prop_prec);
  if (pl.info() != Eigen::Success) throw NumericalError("fibre proposal is not positive definite");
  const Matrix lp = pl.matrixL();
  const double log_det_l = Vector(lp.diagonal()).array().log().sum();
  double shift = -std::numeric_limits<double>::infinity();
  std::vector<double> lw(static_cast<std::size_t>(c.importance_draws));
  for (int mdraw = 0; mdraw < c.importance_draws; ++mdraw) {
    const Vector eps = rng.normal_vector(p);
    const Vector xs = x + lp.transpose().triangularView<Eigen::Upper>().solve(eps);
    const double log_prop = -0.5 * eps.squaredNorm() + log_det_l -
                            0.5 * static_cast<double>(p) * std::log(2.0 * std::numbers::pi);
    lw[static_cast<std::size_t>(mdraw)] = log_integrand(xs) - log_prop;
    shift = std::max(shift, lw[static_cast<std::size_t>(mdraw)]);
  }
  double sum = 0.0;
  for (double w : lw) sum += std::exp(w - shift);
  return -0.25 * static_cast<double>(c.k * (c.k - 1)) * std::numbers::ln2 + shift +
         std::log(sum / static_cast<double>(c.importance_draws));
}

struct ShardOut {
  std::vector<double> kl_t, kl_p;
};

ShardOut run_shard(const KlContext& c, long n, Rng rng_xi, Rng rng_n, Rng rng_is) {
  ShardOut out;
  out.kl_t.reserve(static_cast<std::size_t>(n));
  out.kl_p.reserve(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) {
    const Vector eps = rng_xi.normal_vector(c.m);
    const Vector z = c.chol_t * eps;
    const Matrix xi = c.basis->expand(z);
    const PolarFactors pf = polar_decompose(c.u0 + xi);
    // z^T Sigma_T^{-1} z = |eps|^2.
    const double log_qt = -0.5 * eps.squaredNorm() + c.log_norm_t - log_polar_jacobian(c, pf);
    const double kt = log_qt - log_target(c, pf.q);
    out.kl_t.push_back(kt);
    if (!c.has_normal) {
      out.kl_p.push_back(kt);
      continue;
    }
    const Vector nz = c.chol_n * rng_n.normal_vector(c.p);
    const Matrix w = c.u0 + xi + c.u0 * normal_coords_to_sym(nz, c.k);
    const Matrix up = polar_project(w).matrix();
    out.kl_p.push_back(log_q_proj(c, up, rng_is) - log_target(c, up));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  const auto n = static_cast<double>(v.size());
  return std::sqrt(s / (n - 1.0) / n);
}

}  // namespace

KLGapResult kl_gap_estimate(const MatrixLangevin& target, const Matrix& sigma_t,
                            const Matrix& sigma_n, long n_mc, Rng& rng,
                            int importance_draws, int workers) {
  if (n_mc < kKlMinSamples) {
    throw DegenerateInputError("kl_gap_estimate: n_mc below the floor of " +
                               std::to_string(kKlMinSamples));
  }
  if (importance_draws < 1) throw ConfigError("importance_draws must be >= 1");
  const StiefelPoint& u0 = target.mode();
  const TangentBasis basis(u0);
  KlContext c;
  c.d = u0.d();
  c.k = u0.k();
  c.m = basis.m();
  c.p = normal_dim(c.k);
  c.target = &target;
  c.basis = &basis;
  c.u0 = u0.matrix();
  c.importance_draws = importance_draws;
  require_shape(sigma_t, c.m, c.m, "kl_gap_estimate: sigma_t");
  require_shape(sigma_n, c.p, c.p, "kl_gap_estimate: sigma_n");
  Eigen::LLT<Matrix> lt(sym(sigma_t));
  if (lt.info() != Eigen::Success) throw ConfigError("sigma_t must be positive definite");
  c.chol_t = lt.matrixL();
  c.prec_t = lt.solve(Matrix::Identity(c.m, c.m));
  const double logdet_t = 2.0 * Vector(c.chol_t.diagonal()).array().log().sum();
  c.log_norm_t = -0.5 * (static_cast<double>(c.m) * std::log(2.0 * std::numbers::pi) + logdet_t);
  c.has_normal = !sigma_n.isZero(0.0);
  c.log_norm_n = 0.0;
  c.prec_n = Matrix::Zero(c.p, c.p);
  c.chol_n = Matrix::Zero(c.p, c.p);
  if (c.has_normal) {
    Eigen::LLT<Matrix> ln(sym(sigma_n));
    if (ln.info() != Eigen::Success) {
      throw ConfigError("sigma_n must be zero or positive definite");
    }
    c.chol_n = ln.matrixL();
    c.prec_n = ln.solve(Matrix::Identity(c.p, c.p));
    const double logdet_n = 2.0 * Vector(c.chol_n.diagonal()).array().log().sum();
    c.log_norm_n = -0.5 * (static_cast<double>(c.p) * std::log(2.0 * std::numbers::pi) + logdet_n);
  }
  c.log_p_const = -target.log_normalizer() - log_stiefel_volume(c.d, c.k);
  for (Index i = 0; i < c.k; ++i) {
    for (Index j = i; j < c.k; ++j) {
      Matrix e = Matrix::Zero(c.k, c.k);
      e(i, j) = 1.0;
      e(j, i) = 1.0;
      c.sym_basis.push_back(e);
    }
  }

  // Fixed shard count so results do not depend on the worker count.
  constexpr int kShards = 8;
  std::vector<ShardOut> parts(kShards);
  const Rng xi_root = rng.split(1);
  const Rng n_root = rng.split(2);
  const Rng is_root = rng.split(3);
  auto run = [&](int w, int nw) {
    for (int s = w; s < kShards; s += nw) {
      const long lo = n_mc * s / kShards;
      const long hi = n_mc * (s + 1) / kShards;
      parts[static_cast<std::size_t>(s)] =
          run_shard(c, hi - lo, xi_root.split(static_cast<std::uint64_t>(s)),
                    n_root.split(static_cast<std::uint64_t>(s)),
                    is_root.split(static_cast<std::uint64_t>(s)));
    }
  };
  const int nw = std::max(1, std::min(workers, kShards));
  if (nw == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w) pool.emplace_back(run, w, nw);
    for (auto& t : pool) t.join();
  }
  std::vector<double> kt, kp, gap;
  for (const auto& part : parts) {
    kt.insert(kt.end(), part.kl_t.begin(), part.kl_t.end());
    kp.insert(kp.end(), part.kl_p.begin(), part.kl_p.end());
  }
  for (std::size_t i = 0; i < kt.size(); ++i) gap.push_back(kp[i] - kt[i]);
  KLGapResult r;
  r.kl_tang = mean_of(kt);
  r.kl_proj = mean_of(kp);
  r.gap = mean_of(gap);
  r.mc_stderr = stderr_of(gap);
  r.kl_tang_stderr = stderr_of(kt);
  r.kl_proj_stderr = stderr_of(kp);
  r.d = c.d;
  r.k = c.k;
  r.kappa = target.f().jacobiSvd().singularValues().mean();
  r.trace_sigma_t = sigma_t.trace();
  r.trace_sigma_n = sigma_n.trace();
  r.n_mc = n_mc;
  r.seed = rng.seed();
  r.importance_draws = importance_draws;
  return r;
}

std::vector<KLGapResult> run_kl_gap_grid(const KLGapGrid& grid, int workers) {
  if (grid.k < 1 || grid.d < grid.k) throw ConfigError("klgap: need 1 <= k <= d");
  if (!(grid.kappa > 0.0)) throw ConfigError("klgap: kappa must be > 0");
  if (!(grid.tangent_scale > 0.0)) throw ConfigError("klgap: tangent_scale must be > 0");
  if (grid.normal_ratios.empty()) throw ConfigError("klgap: normal_ratios is empty");
  Matrix f = Matrix::Zero(grid.d, grid.k);
  f.topRows(grid.k) = grid.kappa * Matrix::Identity(grid.k, grid.k);
  const MatrixLangevin target(f);
  const Matrix prec = ml_tangent_precision(target);
  const Index m = prec.rows();
  const Matrix sigma_t = grid.tangent_scale * prec.llt().solve(Matrix::Identity(m, m));
  const double mean_var = sigma_t.trace() / static_cast<double>(m);
  std::vector<KLGapResult> out;
  for (double ratio : grid.normal_ratios) {
    if (!(ratio >= 0.0)) throw ConfigError("klgap: normal_ratios must be >= 0");
    const Index p = normal_dim(grid.k);
    const Matrix sigma_n = ratio * mean_var * Matrix::Identity(p, p);
    Rng rng(grid.seed);
    out.push_back(kl_gap_estimate(target, sigma_t, sigma_n, grid.n_mc, rng,
                                  grid.importance_draws, workers));
  }
  return out;
}

}  // namespace sba
