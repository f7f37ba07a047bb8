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

#include "sba/inference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace sba {
namespace {

std::vector<Index> shuffled(Index n, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

LayerLayout layout_for(const AdapterLayer& a) {
  return {manifold_dim(a.u.d(), a.u.k()), manifold_dim(a.v.d(), a.v.k()),
          a.sigma.size()};
}

AdapterLayer retract_layer(const AdapterLayer& map, const TangentBasis& bu,
                           const TangentBasis& bv, const LayerLayout& lay,
                           const Vector& c) {
  StiefelPoint u = lay.m_u == 0 || c.segment(0, lay.m_u).isZero(0.0)
                       ? map.u
                       : qr_orthonormalize(map.u.matrix() + bu.expand(c.segment(0, lay.m_u)));
  StiefelPoint v = lay.m_v == 0 || c.segment(lay.m_u, lay.m_v).isZero(0.0)
                       ? map.v
                       : qr_orthonormalize(map.v.matrix() +
                                           bv.expand(c.segment(lay.m_u, lay.m_v)));
  return {std::move(u), map.sigma + c.tail(lay.k), std::move(v)};
}

// Riemannian gradient of the log posterior at a perturbed layer, expressed
// in the coordinates of the bases at the MAP.
Vector projected_grad_coords(const BaseModel& base, const ModelPosteriorSpec& spec,
                             const LabeledBatch& batch, double scale,
                             const AdapterSet& params, std::size_t layer,
                             const TangentBasis& bu, const TangentBasis& bv,
                             const LayerLayout& lay) {
  const GradientSet g = grad_log_posterior(base, params, spec, batch, scale);
  const AdapterLayer& a = params[layer];
  Vector out(lay.size());
  out.segment(0, lay.m_u) =
      bu.coordinates(tangent_project(a.u, g[layer].u).matrix());
  out.segment(lay.m_u, lay.m_v) =
      bv.coordinates(tangent_project(a.v, g[layer].v).matrix());
  out.tail(lay.k) = g[layer].sigma;
  return out;
}

void check_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) {
    throw NumericalError(std::string(what) + ": non-finite curvature entries");
  }
}

std::vector<Index> selected_indices(const LayerLayout& lay, BayesianComponents c) {
  std::vector<Index> idx;
  if (c.u) for (Index i = 0; i < lay.m_u; ++i) idx.push_back(i);
  if (c.v) for (Index i = 0; i < lay.m_v; ++i) idx.push_back(lay.m_u + i);
  if (c.sigma) for (Index i = 0; i < lay.k; ++i) idx.push_back(lay.m_u + lay.m_v + i);
  return idx;
}

// Lower Cholesky factor of the selected block of the precision.
Matrix block_cholesky(const Matrix& precision, const std::vector<Index>& idx) {
  const Index n = static_cast<Index>(idx.size());
  Matrix block(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) block(i, j) = precision(idx[i], idx[j]);
  }
  Eigen::LLT<Matrix> llt(block);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("laplace_sample: Cholesky of precision failed");
  }
  return llt.matrixL();
}

Vector draw_block(const Matrix& chol, const std::vector<Index>& idx, Index dim,
                  Rng& rng) {
  Vector eps = rng.normal_vector(chol.rows());
  // z = L^{-T} eps has covariance (L L^T)^{-1}.
  Vector z = chol.transpose().triangularView<Eigen::Upper>().solve(eps);
  Vector full = Vector::Zero(dim);
  for (std::size_t i = 0; i < idx.size(); ++i) full(idx[i]) = z(static_cast<Index>(i));
  return full;
}

}  // namespace

std::string to_string(HessianMode m) {
  switch (m) {
    case HessianMode::kExactFd: return "exact_fd";
    case HessianMode::kGgn: return "ggn";
    case HessianMode::kDiagonal: return "diagonal";
  }
  return "ggn";
}

HessianMode hessian_mode_from_string(const std::string& s) {
  if (s == "exact_fd") return HessianMode::kExactFd;
  if (s == "ggn") return HessianMode::kGgn;
  if (s == "diagonal") return HessianMode::kDiagonal;
  throw ConfigError("unknown hessian_mode '" + s + "' (expected exact_fd|ggn|diagonal)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (hessian_points < 1) throw ConfigError("train.hessian_points must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("train.momentum must be in [0, 1)");
  }
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw ConfigError("train.final_lr_fraction must be in (0, 1]");
  }
}

BayesianComponents BayesianComponents::from_string(const std::string& s) {
  BayesianComponents c{false, false, false};
  if (s == "none") return c;
  if (s == "all") return {};
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, '+')) {
    if (tok == "u") c.u = true;
    else if (tok == "v") c.v = true;
    else if (tok == "sigma") c.sigma = true;
    else throw ConfigError("unknown component '" + tok + "' (expected u, v, sigma, none)");
  }
  return c;
}

std::string BayesianComponents::to_string() const {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  add(u, "u");
  add(sigma, "sigma");
  add(v, "v");
  return out.empty() ? "none" : out;
}

MapResult riemannian_optimize(const BatchObjective& objective, Index n_data,
                              const TrainConfig& config, AdapterSet init) {
  config.validate();
  Rng rng(config.seed);
  MapResult out;
  out.params = std::move(init);
  AdapterSet& p = out.params;
  std::vector<Matrix> mom_u, mom_v;
  std::vector<Vector> mom_s;
  for (const auto& a : p) {
    mom_u.push_back(Matrix::Zero(a.u.d(), a.u.k()));
    mom_v.push_back(Matrix::Zero(a.v.d(), a.v.k()));
    mom_s.push_back(Vector::Zero(a.sigma.size()));
  }
  const double base_scale =
      config.learning_rate / static_cast<double>(std::max<Index>(n_data, 1));
  const Index bs = std::max<Index>(1, std::min<Index>(config.batch_size, std::max<Index>(n_data, 1)));
  const Index n_batches = n_data == 0 ? 1 : (n_data + bs - 1) / bs;
  const double total_steps = static_cast<double>(n_batches) * config.epochs;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<Index> order = shuffled(n_data, rng);
    for (Index b = 0; b < n_batches; ++b) {
      const double progress = total_steps > 1 ? step / (total_steps - 1.0) : 1.0;
      const double f = config.final_lr_fraction;
      const double step_scale =
          base_scale * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
      std::vector<Index> rows;
      for (Index i = b * bs; i < std::min(n_data, (b + 1) * bs); ++i) {
        rows.push_back(order[static_cast<std::size_t>(i)]);
      }
      GradientSet g;
      const double value = objective(p, rows, &g);
      double norm2 = 0.0;
      std::vector<Matrix> rg_u, rg_v;
      for (std::size_t l = 0; l < p.size(); ++l) {
        rg_u.push_back(tangent_project(p[l].u, g[l].u).matrix());
        rg_v.push_back(tangent_project(p[l].v, g[l].v).matrix());
        norm2 += rg_u[l].squaredNorm() + rg_v[l].squaredNorm() + g[l].sigma.squaredNorm();
      }
      const double gnorm = std::sqrt(norm2);
      if (!std::isfinite(value) || !std::isfinite(gnorm)) {
        std::ostringstream os;
        os << "optimizer diverged at step " << step << " (epoch " << epoch
           << "): objective = " << value << ", gradient norm = " << gnorm;
        throw NumericalError(os.str());
      }
      out.trace.push_back({step, value, gnorm});
      for (std::size_t l = 0; l < p.size(); ++l) {
        mom_u[l] = config.momentum * tangent_project(p[l].u, mom_u[l]).matrix() + rg_u[l];
        mom_v[l] = config.momentum * tangent_project(p[l].v, mom_v[l]).matrix() + rg_v[l];
        mom_s[l] = config.momentum * mom_s[l] + g[l].sigma;
        StiefelPoint u = qr_retract(p[l].u, TangentVector(p[l].u, step_scale * mom_u[l]));
        StiefelPoint v = qr_retract(p[l].v, TangentVector(p[l].v, step_scale * mom_v[l]));
        p[l] = {std::move(u), p[l].sigma + step_scale * mom_s[l], std::move(v)};
      }
      ++step;
    }
  }
  return out;
}

MapResult riemannian_map(const BaseModel& base, const ModelPosteriorSpec& spec,
                         const LabeledBatch& data, const TrainConfig& config,
                         AdapterSet init) {
  if (data.size() > 0) data.validate(base.n_classes());
  const double n = static_cast<double>(data.size());
  BatchObjective obj = [&](const AdapterSet& params, const std::vector<Index>& rows,
                           GradientSet* grads) {
    const LabeledBatch batch = data.subset(rows);
    const double scale = rows.empty() ? 1.0 : n / static_cast<double>(rows.size());
    if (grads) *grads = grad_log_posterior(base, params, spec, batch, scale);
    return log_posterior(base, params, spec, batch, scale);
  };
  return riemannian_optimize(obj, data.size(), config, std::move(init));
}

Index LaplacePosterior::total_dim() const {
  Index t = 0;
  for (const auto& l : layout) t += l.size();
  return t;
}

Vector LaplacePosterior::sigma_precision(std::size_t layer) const {
  const LayerLayout& lay = layout.at(layer);
  return precision.at(layer).diagonal().tail(lay.k);
}

LabeledBatch hessian_subset(const LabeledBatch& data, int points, Rng& rng) {
  if (points >= data.size()) return data;
  std::vector<Index> order = shuffled(data.size(), rng);
  order.resize(static_cast<std::size_t>(points));
  std::sort(order.begin(), order.end());
  return data.subset(order);
}

Matrix riemannian_hessian_fd(
    const TangentBasis& basis,
    const std::function<Matrix(const StiefelPoint&)>& euclidean_grad,
    double step, double* asymmetry) {
  const Index m = basis.m();
  const StiefelPoint& u0 = basis.base();
  Matrix h(m, m);
  for (Index j = 0; j < m; ++j) {
    Vector col(m);
    for (int sgn : {1, -1}) {
      const StiefelPoint u = qr_orthonormalize(
          u0.matrix() + (sgn * step) * basis.vectors()[static_cast<std::size_t>(j)].matrix());
      const Vector g = basis.coordinates(tangent_project(u, euclidean_grad(u)).matrix());
      if (sgn == 1) col = g; else col -= g;
    }
    h.col(j) = col / (2.0 * step);
  }
  if (asymmetry) *asymmetry = max_abs(h - h.transpose());
  return sym(h);
}

double damp_to_spd(Matrix& precision) {
  check_finite(precision, "damp_to_spd");
  precision = sym(precision);
  const Index n = precision.rows();
  double lambda = 1e-4 * precision.diagonal().mean();
  if (!(lambda > 0.0)) {
    lambda = 1e-4 * std::max(precision.diagonal().cwiseAbs().mean(), 1e-12);
  }
  for (int attempt = 0; attempt < 60; ++attempt) {
    Matrix trial = precision;
    trial.diagonal().array() += lambda;
    Eigen::LLT<Matrix> llt(trial);
    if (llt.info() == Eigen::Success) {
      precision = std::move(trial);
      return lambda;
    }
    lambda *= 10.0;
  }
  (void)n;
  throw NumericalError("damp_to_spd: could not reach a positive definite precision");
}

LaplacePosterior tangent_hessian(const BaseModel& base,
                                 const ModelPosteriorSpec& spec,
                                 const LabeledBatch& data_subset,
                                 const AdapterSet& map_params, HessianMode mode,
                                 double likelihood_scale,
                                 std::vector<double>* asymmetry) {
  if (data_subset.size() > 0) data_subset.validate(base.n_classes());
  LaplacePosterior post;
  post.map_params = map_params;
  post.mode = mode;
  if (asymmetry) asymmetry->clear();
  const double scale = likelihood_scale;
  for (std::size_t l = 0; l < map_params.size(); ++l) {
    const AdapterLayer& a = map_params[l];
    post.bases_u.emplace_back(a.u);
    post.bases_v.emplace_back(a.v);
    const TangentBasis& bu = post.bases_u.back();
    const TangentBasis& bv = post.bases_v.back();
    const LayerLayout lay = layout_for(a);
    post.layout.push_back(lay);
    const Index dim = lay.size();
    Matrix prec(dim, dim);

    if (mode == HessianMode::kExactFd) {
      const double t = 1e-4;
      for (Index j = 0; j < dim; ++j) {
        Vector col(dim);
        for (int sgn : {1, -1}) {
          Vector c = Vector::Zero(dim);
          c(j) = sgn * t;
          AdapterSet pert = map_params;
          pert[l] = retract_layer(a, bu, bv, lay, c);
          const Vector g =
              projected_grad_coords(base, spec, data_subset, scale, pert, l, bu, bv, lay);
          if (sgn == 1) col = g; else col -= g;
        }
        prec.col(j) = -col / (2.0 * t);
      }
      if (asymmetry) asymmetry->push_back(max_abs(prec - prec.transpose()));
    } else if (mode == HessianMode::kGgn) {
      const AmbientAdapterSet amb = to_ambient(map_params);
      const Index n = data_subset.size();
      const Index c_dim = base.n_classes();
      Matrix ggn = Matrix::Zero(dim, dim);
      if (n > 0) {
        const Matrix probs = softmax_rows(forward(base, amb, data_subset.inputs));
        Matrix b(n * c_dim, dim);
        Matrix cm(n, dim);
        const Matrix zero_u = Matrix::Zero(a.u.d(), a.u.k());
        const Matrix zero_v = Matrix::Zero(a.v.d(), a.v.k());
        const Vector zero_s = Vector::Zero(lay.k);
        for (Index j = 0; j < dim; ++j) {
          Matrix du = zero_u, dv = zero_v;
          Vector ds = zero_s;
          if (j < lay.m_u) du = bu.vectors()[static_cast<std::size_t>(j)].matrix();
          else if (j < lay.m_u + lay.m_v) dv = bv.vectors()[static_cast<std::size_t>(j - lay.m_u)].matrix();
          else ds(j - lay.m_u - lay.m_v) = 1.0;
          const Matrix jv = logits_jvp(base, amb, data_subset.inputs, l, du, ds, dv);
          for (Index i = 0; i < n; ++i) {
            double mix = 0.0;
            for (Index c = 0; c < c_dim; ++c) {
              b(i * c_dim + c, j) = std::sqrt(probs(i, c)) * jv(i, c);
              mix += probs(i, c) * jv(i, c);
            }
            cm(i, j) = mix;
          }
        }
        ggn.noalias() = b.transpose() * b;
        ggn.noalias() -= cm.transpose() * cm;
        ggn *= scale;
      }
      // Curvature of the constraint: <E_i, E_j sym(U^T G)>.
      const GradientSet g = grad_log_posterior(base, map_params, spec, data_subset, scale);
      const Matrix su = sym(a.u.matrix().transpose() * g[l].u);
      const Matrix sv = sym(a.v.matrix().transpose() * g[l].v);
      Matrix wein = Matrix::Zero(dim, dim);
      for (Index j = 0; j < lay.m_u; ++j) {
        wein.block(0, j, lay.m_u, 1) =
            bu.coordinates(bu.vectors()[static_cast<std::size_t>(j)].matrix() * su);
      }
      for (Index j = 0; j < lay.m_v; ++j) {
        wein.block(lay.m_u, lay.m_u + j, lay.m_v, 1) =
            bv.coordinates(bv.vectors()[static_cast<std::size_t>(j)].matrix() * sv);
      }
      prec = ggn + sym(wein);
      const double inv_tau2 = 1.0 / (spec.prior.tau * spec.prior.tau);
      for (Index i = 0; i < lay.k; ++i) prec(lay.m_u + lay.m_v + i, lay.m_u + lay.m_v + i) += inv_tau2;
    } else {
      const double t = 1e-3;
      const double f0 = log_posterior(base, map_params, spec, data_subset, scale);
      prec.setZero();
      for (Index j = 0; j < dim; ++j) {
        double fpm = 0.0;
        for (int sgn : {1, -1}) {
          Vector c = Vector::Zero(dim);
          c(j) = sgn * t;
          AdapterSet pert = map_params;
          pert[l] = retract_layer(a, bu, bv, lay, c);
          fpm += log_posterior(base, pert, spec, data_subset, scale);
        }
        prec(j, j) = -(fpm - 2.0 * f0) / (t * t);
      }
    }
    check_finite(prec, "tangent_hessian");
    post.damping.push_back(damp_to_spd(prec));
    post.precision.push_back(std::move(prec));
  }
  return post;
}

AdapterLayer laplace_point(const LaplacePosterior& post, std::size_t layer,
                           const Vector& coords) {
  return retract_layer(post.map_params.at(layer), post.bases_u.at(layer),
                       post.bases_v.at(layer), post.layout.at(layer), coords);
}

Matrix laplace_coordinate_draws(const LaplacePosterior& post, std::size_t layer,
                                int n, Rng& rng, BayesianComponents components) {
  const LayerLayout& lay = post.layout.at(layer);
  const std::vector<Index> idx = selected_indices(lay, components);
  Matrix out = Matrix::Zero(lay.size(), n);
  if (idx.empty()) return out;
  const Matrix chol = block_cholesky(post.precision.at(layer), idx);
  for (int s = 0; s < n; ++s) out.col(s) = draw_block(chol, idx, lay.size(), rng);
  return out;
}

PosteriorSampleSet laplace_sample(const LaplacePosterior& post, int s, Rng& rng,
                                  BayesianComponents components) {
  if (s < 1) throw ConfigError("laplace_sample: S must be >= 1");
  std::vector<Matrix> chols;
  std::vector<std::vector<Index>> idxs;
  for (std::size_t l = 0; l < post.layout.size(); ++l) {
    idxs.push_back(selected_indices(post.layout[l], components));
    chols.push_back(idxs.back().empty() ? Matrix()
                                        : block_cholesky(post.precision[l], idxs.back()));
  }
  PosteriorSampleSet out;
  for (int i = 0; i < s; ++i) {
    AdapterSet sample;
    for (std::size_t l = 0; l < post.layout.size(); ++l) {
      const Index dim = post.layout[l].size();
      if (idxs[l].empty()) {
        sample.push_back(post.map_params[l]);
        continue;
      }
      sample.push_back(laplace_point(post, l, draw_block(chols[l], idxs[l], dim, rng)));
    }
    out.samples.push_back(std::move(sample));
  }
  return out;
}

Index AmbientGaussianPosterior::layer_dim(const AmbientAdapter& a) {
  return a.u.size() + a.v.size() + a.sigma.size();
}

AmbientGaussianPosterior ambient_hessian(const BaseModel& base,
                                         const ModelPosteriorSpec& spec,
                                         const LabeledBatch& data_subset,
                                         const AdapterSet& map_params,
                                         double likelihood_scale) {
  if (data_subset.size() > 0) data_subset.validate(base.n_classes());
  AmbientGaussianPosterior post;
  post.mean = to_ambient(map_params);
  const double kappa0 = spec.prior.kappa0;
  const double inv_tau2 = 1.0 / (spec.prior.tau * spec.prior.tau);
  auto ambient_grad = [&](const AmbientAdapterSet& params, std::size_t l) {
    const GradientSet g = grad_log_likelihood(base, params, data_subset);
    const AmbientAdapter& a = params[l];
    Vector out(AmbientGaussianPosterior::layer_dim(a));
    const Matrix gu = likelihood_scale * g[l].u + spec.priors_u[l].f() - kappa0 * a.u;
    const Matrix gv = likelihood_scale * g[l].v + spec.priors_v[l].f() - kappa0 * a.v;
    out.segment(0, a.u.size()) = gu.reshaped();
    out.segment(a.u.size(), a.v.size()) = gv.reshaped();
    out.tail(a.sigma.size()) = likelihood_scale * g[l].sigma - inv_tau2 * a.sigma;
    return out;
  };
  const double t = 1e-4;
  for (std::size_t l = 0; l < post.mean.size(); ++l) {
    const AmbientAdapter& a = post.mean[l];
    const Index nu = a.u.size();
    const Index nv = a.v.size();
    const Index dim = AmbientGaussianPosterior::layer_dim(a);
    Matrix prec(dim, dim);
    for (Index j = 0; j < dim; ++j) {
      Vector col(dim);
      for (int sgn : {1, -1}) {
        AmbientAdapterSet pert = post.mean;
        AmbientAdapter& p = pert[l];
        if (j < nu) p.u.reshaped()(j) += sgn * t;
        else if (j < nu + nv) p.v.reshaped()(j - nu) += sgn * t;
        else p.sigma(j - nu - nv) += sgn * t;
        const Vector g = ambient_grad(pert, l);
        if (sgn == 1) col = g; else col -= g;
      }
      prec.col(j) = -col / (2.0 * t);
    }
    check_finite(prec, "ambient_hessian");
    post.damping.push_back(damp_to_spd(prec));
    Eigen::LLT<Matrix> llt(prec);
    const Matrix cov = llt.solve(Matrix::Identity(dim, dim));
    Eigen::LLT<Matrix> cov_llt(sym(cov));
    if (cov_llt.info() != Eigen::Success) {
      throw NumericalError("ambient_hessian: covariance factorization failed");
    }
    post.covariance_factor.push_back(cov_llt.matrixL());
  }
  return post;
}

PosteriorSampleSet gauss_proj_sample(const AmbientGaussianPosterior& post, int s,
                                     Rng& rng) {
  if (s < 1) throw ConfigError("gauss_proj_sample: S must be >= 1");
  PosteriorSampleSet out;
  for (int i = 0; i < s; ++i) {
    AdapterSet sample;
    for (std::size_t l = 0; l < post.mean.size(); ++l) {
      const AmbientAdapter& a = post.mean[l];
      const Matrix& chol = post.covariance_factor.at(l);
      const Vector eps = chol * rng.normal_vector(chol.cols());
      const Index nu = a.u.size();
      const Index nv = a.v.size();
      Matrix u = a.u;
      Matrix v = a.v;
      u.reshaped() += eps.segment(0, nu);
      v.reshaped() += eps.segment(nu, nv);
      sample.push_back({polar_project(u), a.sigma + eps.tail(a.sigma.size()),
                        polar_project(v)});
    }
    out.samples.push_back(std::move(sample));
  }
  return out;
}

std::vector<Matrix> per_sample_predictions(const BaseModel& base,
                                           const PosteriorSampleSet& samples,
                                           const Matrix& x) {
  std::vector<Matrix> out;
  out.reserve(samples.samples.size());
  for (const auto& s : samples.samples) out.push_back(softmax_rows(forward(base, s, x)));
  return out;
}

Matrix predictive(const BaseModel& base, const PosteriorSampleSet& samples,
                  const Matrix& x) {
  if (samples.size() < 1) throw ConfigError("predictive: need at least one sample");
  Matrix acc = Matrix::Zero(x.rows(), base.n_classes());
  for (const auto& s : samples.samples) acc += softmax_rows(forward(base, s, x));
  return acc / static_cast<double>(samples.size());
}

void DistillConfig::validate() const {
  if (!(temperature > 0.0)) throw ConfigError("distill.temperature must be > 0");
  if (epochs < 1) throw ConfigError("distill.epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("distill.learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("distill.batch_size must be >= 1");
}

namespace {

Matrix tempered(const Matrix& probs, double temperature) {
  Matrix logp = probs.array().max(1e-300).log().matrix() / temperature;
  return softmax_rows(logp);
}

}  // namespace

double distill_objective(const BaseModel& base, const Matrix& teacher_probs,
                         const AdapterSet& student, const Matrix& x,
                         double temperature) {
  const Matrix q = tempered(teacher_probs, temperature);
  const Matrix logp = log_softmax_rows(forward(base, student, x) / temperature);
  double total = 0.0;
  for (Index i = 0; i < q.rows(); ++i) {
    for (Index c = 0; c < q.cols(); ++c) {
      if (q(i, c) > 0.0) total += q(i, c) * (std::log(q(i, c)) - logp(i, c));
    }
  }
  return temperature * temperature * total / static_cast<double>(std::max<Index>(q.rows(), 1));
}

MapResult distill(const BaseModel& base, const PosteriorSampleSet& teacher,
                  const AdapterSet& student_init, const LabeledBatch& data,
                  const DistillConfig& config) {
  config.validate();
  const double temp = config.temperature;
  const Matrix q = tempered(predictive(base, teacher, data.inputs), temp);
  const double n = static_cast<double>(data.size());
  BatchObjective obj = [&](const AdapterSet& params, const std::vector<Index>& rows,
                           GradientSet* grads) {
    Matrix x(static_cast<Index>(rows.size()), data.inputs.cols());
    Matrix qb(static_cast<Index>(rows.size()), q.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      x.row(static_cast<Index>(i)) = data.inputs.row(rows[i]);
      qb.row(static_cast<Index>(i)) = q.row(rows[i]);
    }
    const double scale = rows.empty() ? 0.0 : n / static_cast<double>(rows.size());
    const Matrix z = forward(base, params, x) / temp;
    const Matrix logp = log_softmax_rows(z);
    double kl = 0.0;
    for (Index i = 0; i < qb.rows(); ++i) {
      for (Index c = 0; c < qb.cols(); ++c) {
        if (qb(i, c) > 0.0) kl += qb(i, c) * (std::log(qb(i, c)) - logp(i, c));
      }
    }
    if (grads) {
      // d(-T^2 KL)/dlogits = -T (p_student - q).
      const Matrix dl = -scale * temp * (logp.array().exp().matrix() - qb);
      *grads = backprop(base, to_ambient(params), x, dl);
    }
    return -scale * temp * temp * kl;
  };
  TrainConfig tc;
  tc.learning_rate = config.learning_rate;
  tc.epochs = config.epochs;
  tc.batch_size = config.batch_size;
  tc.seed = config.seed;
  tc.momentum = 0.0;
  return riemannian_optimize(obj, data.size(), tc, student_init);
}

std::vector<AdapterSet> deep_ensemble(const BaseModel& base,
                                      const ModelPosteriorSpec& spec,
                                      const LabeledBatch& data,
                                      const TrainConfig& config, int n_members) {
  if (n_members < 2) throw ConfigError("deep_ensemble: need at least 2 members");
  std::vector<AdapterSet> members;
  const Rng root(config.seed);
  for (int i = 0; i < n_members; ++i) {
    Rng init_rng = root.split(0x656e73ULL + static_cast<std::uint64_t>(i));
    AdapterSet init;
    for (const auto& layer : base.layers) {
      const Index k = spec.priors_u.at(init.size()).k();
      StiefelPoint u = haar_sample(layer.weight.rows(), k, init_rng);
      StiefelPoint v = haar_sample(layer.weight.cols(), k, init_rng);
      init.push_back({std::move(u), Vector::Zero(k), std::move(v)});
    }
    TrainConfig member = config;
    member.seed = init_rng.next_u64();
    members.push_back(riemannian_map(base, spec, data, member, std::move(init)).params);
  }
  return members;
}

}  // namespace sba
