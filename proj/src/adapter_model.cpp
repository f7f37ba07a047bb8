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

#include "sba/adapter_model.hpp"

#include <cmath>
#include <sstream>

namespace sba {
namespace {

void apply_activation(Activation a, Matrix& m) {
  if (a == Activation::kTanh) m = m.array().tanh().matrix();
}

// Elementwise derivative given the activation output.
Matrix activation_grad(Activation a, const Matrix& out) {
  if (a == Activation::kTanh) return (1.0 - out.array().square()).matrix();
  return Matrix::Ones(out.rows(), out.cols());
}

struct ForwardCache {
  std::vector<Matrix> h;  // h[0] = x, h[l+1] = output of layer l
  std::vector<Matrix> w_eff;
  Matrix logits;
};

ForwardCache forward_cached(const BaseModel& base,
                            const AmbientAdapterSet& adapters, const Matrix& x) {
  check_adapters(base, adapters);
  require_shape(x, x.rows(), base.d_in(), "forward: inputs");
  ForwardCache c;
  c.h.push_back(x);
  for (std::size_t l = 0; l < base.layers.size(); ++l) {
    const DenseLayer& layer = base.layers[l];
    const AmbientAdapter& a = adapters[l];
    c.w_eff.push_back(layer.weight +
                      a.u * a.sigma.asDiagonal() * a.v.transpose());
    Matrix pre = c.h.back() * c.w_eff.back().transpose();
    pre.rowwise() += layer.bias.transpose();
    apply_activation(layer.activation, pre);
    c.h.push_back(std::move(pre));
  }
  c.logits = c.h.back() * base.head.transpose();
  c.logits.rowwise() += base.head_bias.transpose();
  return c;
}

}  // namespace

std::string to_string(Activation a) {
  return a == Activation::kTanh ? "tanh" : "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s + "' (expected identity|tanh)");
}

void BaseModel::validate() const {
  if (layers.empty()) throw ShapeError("BaseModel: no layers");
  Index width = layers.front().weight.cols();
  for (const auto& l : layers) {
    if (l.weight.cols() != width || l.bias.size() != l.weight.rows()) {
      throw ShapeError("BaseModel: inconsistent layer shapes");
    }
    width = l.weight.rows();
  }
  if (head.cols() != width || head_bias.size() != head.rows() || head.rows() < 2) {
    throw ShapeError("BaseModel: inconsistent head shape");
  }
}

BaseModel make_base_model(const ArchitectureConfig& arch, Rng& rng) {
  if (arch.d_in < 1 || arch.hidden < 1 || arch.n_classes < 2 || arch.n_layers < 1) {
    throw ConfigError("model: d_in, hidden >= 1, n_classes >= 2, n_layers >= 1");
  }
  if (arch.rank < 1 || arch.rank > std::min(arch.d_in, arch.hidden)) {
    throw ConfigError("model.rank must be in [1, min(d_in, hidden)]");
  }
  if (!(arch.head_scale > 0.0)) throw ConfigError("model.head_scale must be > 0");
  BaseModel base;
  Index width = arch.d_in;
  for (Index l = 0; l < arch.n_layers; ++l) {
    DenseLayer layer;
    layer.weight = rng.normal_matrix(arch.hidden, width) /
                   std::sqrt(static_cast<double>(width));
    layer.bias = Vector::Zero(arch.hidden);
    layer.activation = arch.activation;
    base.layers.push_back(std::move(layer));
    width = arch.hidden;
  }
  base.head = arch.head_scale * rng.normal_matrix(arch.n_classes, width) /
              std::sqrt(static_cast<double>(width));
  base.head_bias = Vector::Zero(arch.n_classes);
  return base;
}

Matrix AdapterLayer::delta_w() const {
  return u.matrix() * sigma.asDiagonal() * v.matrix().transpose();
}

void LabeledBatch::validate(Index n_classes) const {
  if (labels.size() != inputs.rows()) {
    throw ShapeError("LabeledBatch: label count does not match inputs");
  }
  for (Index i = 0; i < labels.size(); ++i) {
    if (labels(i) < 0 || labels(i) >= n_classes) {
      std::ostringstream os;
      os << "LabeledBatch: label " << labels(i) << " out of range [0, "
         << n_classes << ")";
      throw ShapeError(os.str());
    }
  }
}

LabeledBatch LabeledBatch::subset(const std::vector<Index>& rows) const {
  LabeledBatch out;
  out.inputs.resize(static_cast<Index>(rows.size()), inputs.cols());
  out.labels.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(static_cast<Index>(i)) = inputs.row(rows[i]);
    out.labels(static_cast<Index>(i)) = labels(rows[i]);
  }
  return out;
}

ModelPosteriorSpec make_model_spec(const BaseModel& base, Index rank,
                                   const PriorConfig& prior, Rng& rng,
                                   AdapterSet* init) {
  prior.validate();
  ModelPosteriorSpec spec;
  spec.prior = prior;
  if (init) init->clear();
  for (const auto& layer : base.layers) {
    const Index d_out = layer.weight.rows();
    const Index d_in = layer.weight.cols();
    if (rank < 1 || rank > std::min(d_out, d_in)) {
      throw ConfigError("rank must be in [1, min(d_in, d_out)]");
    }
    StiefelPoint u0 = haar_sample(d_out, rank, rng);
    StiefelPoint v0 = haar_sample(d_in, rank, rng);
    spec.priors_u.push_back(make_prior(u0, prior));
    spec.priors_v.push_back(make_prior(v0, prior));
    if (init) init->push_back({u0, Vector::Zero(rank), v0});
  }
  return spec;
}

AmbientAdapterSet to_ambient(const AdapterSet& adapters) {
  AmbientAdapterSet out;
  out.reserve(adapters.size());
  for (const auto& a : adapters) out.push_back({a.u.matrix(), a.sigma, a.v.matrix()});
  return out;
}

void check_adapters(const BaseModel& base, const AmbientAdapterSet& adapters) {
  if (adapters.size() != base.layers.size()) {
    throw ShapeError("adapter count does not match the number of layers");
  }
  for (std::size_t l = 0; l < adapters.size(); ++l) {
    const auto& a = adapters[l];
    const auto& w = base.layers[l].weight;
    if (a.u.rows() != w.rows() || a.v.rows() != w.cols() ||
        a.u.cols() != a.v.cols() || a.sigma.size() != a.u.cols()) {
      throw ShapeError("adapter shapes inconsistent with layer " + std::to_string(l));
    }
  }
}

Matrix forward(const BaseModel& base, const AmbientAdapterSet& adapters,
               const Matrix& x) {
  return forward_cached(base, adapters, x).logits;
}

Matrix forward(const BaseModel& base, const AdapterSet& adapters,
               const Matrix& x) {
  return forward(base, to_ambient(adapters), x);
}

Matrix forward_base(const BaseModel& base, const Matrix& x) {
  Matrix h = x;
  for (const auto& layer : base.layers) {
    Matrix pre = h * layer.weight.transpose();
    pre.rowwise() += layer.bias.transpose();
    apply_activation(layer.activation, pre);
    h = std::move(pre);
  }
  Matrix logits = h * base.head.transpose();
  logits.rowwise() += base.head_bias.transpose();
  return logits;
}

Matrix log_softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

double log_likelihood(const BaseModel& base, const AdapterSet& adapters,
                      const LabeledBatch& batch) {
  if (batch.size() == 0) return 0.0;
  batch.validate(base.n_classes());
  const Matrix lp = log_softmax_rows(forward(base, adapters, batch.inputs));
  double total = 0.0;
  for (Index i = 0; i < lp.rows(); ++i) total += lp(i, batch.labels(i));
  return total;
}

double log_prior(const AdapterSet& adapters, const ModelPosteriorSpec& spec) {
  if (spec.priors_u.size() != adapters.size() ||
      spec.priors_v.size() != adapters.size()) {
    throw ShapeError("posterior spec does not match adapter structure");
  }
  const double inv2tau2 = 0.5 / (spec.prior.tau * spec.prior.tau);
  double total = 0.0;
  for (std::size_t l = 0; l < adapters.size(); ++l) {
    total += ml_log_density_unnorm(spec.priors_u[l], adapters[l].u);
    total += ml_log_density_unnorm(spec.priors_v[l], adapters[l].v);
    total -= inv2tau2 * adapters[l].sigma.squaredNorm();
  }
  return total;
}

double log_posterior(const BaseModel& base, const AdapterSet& adapters,
                     const ModelPosteriorSpec& spec, const LabeledBatch& batch,
                     double likelihood_scale) {
  return likelihood_scale * log_likelihood(base, adapters, batch) +
         log_prior(adapters, spec);
}

GradientSet backprop(const BaseModel& base, const AmbientAdapterSet& adapters,
                     const Matrix& x, const Matrix& dlogits) {
  const ForwardCache c = forward_cached(base, adapters, x);
  require_shape(dlogits, x.rows(), base.n_classes(), "backprop: dlogits");
  GradientSet grads(adapters.size());
  Matrix dh = dlogits * base.head;
  for (std::size_t li = adapters.size(); li-- > 0;) {
    const DenseLayer& layer = base.layers[li];
    const Matrix dpre =
        dh.cwiseProduct(activation_grad(layer.activation, c.h[li + 1]));
    const Matrix gw = dpre.transpose() * c.h[li];  // d_out x d_in
    const AmbientAdapter& a = adapters[li];
    const Matrix& u = a.u;
    const Matrix& v = a.v;
    AdapterGradient g;
    const Matrix gwv = gw * v;  // d_out x k
    g.u = gwv * a.sigma.asDiagonal();
    g.v = gw.transpose() * u * a.sigma.asDiagonal();
    g.sigma = (u.cwiseProduct(gwv)).colwise().sum().transpose();
    grads[li] = std::move(g);
    if (li > 0) dh = dpre * c.w_eff[li];
  }
  return grads;
}

GradientSet grad_log_likelihood(const BaseModel& base,
                                const AdapterSet& adapters,
                                const LabeledBatch& batch) {
  return grad_log_likelihood(base, to_ambient(adapters), batch);
}

GradientSet grad_log_likelihood(const BaseModel& base,
                                const AmbientAdapterSet& adapters,
                                const LabeledBatch& batch) {
  if (batch.size() == 0) {
    check_adapters(base, adapters);
    GradientSet zero;
    for (const auto& a : adapters) {
      zero.push_back({Matrix::Zero(a.u.rows(), a.u.cols()),
                      Vector::Zero(a.sigma.size()),
                      Matrix::Zero(a.v.rows(), a.v.cols())});
    }
    return zero;
  }
  batch.validate(base.n_classes());
  Matrix dl = -softmax_rows(forward(base, adapters, batch.inputs));
  for (Index i = 0; i < dl.rows(); ++i) dl(i, batch.labels(i)) += 1.0;
  return backprop(base, adapters, batch.inputs, dl);
}

GradientSet grad_log_posterior(const BaseModel& base, const AdapterSet& adapters,
                               const ModelPosteriorSpec& spec,
                               const LabeledBatch& batch,
                               double likelihood_scale) {
  GradientSet g = grad_log_likelihood(base, adapters, batch);
  if (spec.priors_u.size() != adapters.size() ||
      spec.priors_v.size() != adapters.size()) {
    throw ShapeError("posterior spec does not match adapter structure");
  }
  const double inv_tau2 = 1.0 / (spec.prior.tau * spec.prior.tau);
  for (std::size_t l = 0; l < adapters.size(); ++l) {
    g[l].u = likelihood_scale * g[l].u + spec.priors_u[l].f();
    g[l].v = likelihood_scale * g[l].v + spec.priors_v[l].f();
    g[l].sigma = likelihood_scale * g[l].sigma - inv_tau2 * adapters[l].sigma;
  }
  return g;
}

Matrix logits_jvp(const BaseModel& base, const AmbientAdapterSet& adapters,
                  const Matrix& x, std::size_t layer, const Matrix& du,
                  const Vector& dsigma, const Matrix& dv) {
  const ForwardCache c = forward_cached(base, adapters, x);
  const AmbientAdapter& a = adapters.at(layer);
  const Matrix& u = a.u;
  const Matrix& v = a.v;
  const Matrix ddw = du * a.sigma.asDiagonal() * v.transpose() +
                     u * dsigma.asDiagonal() * v.transpose() +
                     u * a.sigma.asDiagonal() * dv.transpose();
  Matrix dh = (c.h[layer] * ddw.transpose())
                  .cwiseProduct(activation_grad(base.layers[layer].activation,
                                                c.h[layer + 1]));
  for (std::size_t l = layer + 1; l < base.layers.size(); ++l) {
    dh = (dh * c.w_eff[l].transpose())
             .cwiseProduct(activation_grad(base.layers[l].activation, c.h[l + 1]));
  }
  return dh * base.head.transpose();
}

}  // namespace sba
