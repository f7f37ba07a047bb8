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

#ifndef SBA_ADAPTER_MODEL_HPP_
#define SBA_ADAPTER_MODEL_HPP_

#include <string>
#include <vector>

#include "sba/common.hpp"
#include "sba/langevin.hpp"
#include "sba/manifold.hpp"

namespace sba {

enum class Activation { kIdentity, kTanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
  Matrix weight;  // d_out x d_in, frozen
  Vector bias;    // d_out
  Activation activation = Activation::kIdentity;
};

// Frozen network: adapted dense layers followed by a frozen softmax head.
struct BaseModel {
  std::vector<DenseLayer> layers;
  Matrix head;  // C x d_last
  Vector head_bias;

  Index d_in() const { return layers.front().weight.cols(); }
  Index n_classes() const { return head.rows(); }
  void validate() const;
};

struct ArchitectureConfig {
  Index d_in = 32;
  Index hidden = 32;
  Index n_classes = 3;
  Index rank = 4;
  Activation activation = Activation::kIdentity;
  Index n_layers = 1;
  double head_scale = 4.0;  // head entries N(0, head_scale^2 / d_last)
};

// W0 entries N(0, 1/d_in) per layer, head entries N(0, head_scale^2/d_last),
// zero biases.
BaseModel make_base_model(const ArchitectureConfig& arch, Rng& rng);

struct AdapterLayer {
  StiefelPoint u;  // d_out x k
  Vector sigma;    // k
  StiefelPoint v;  // d_in x k

  Matrix delta_w() const;
};

using AdapterSet = std::vector<AdapterLayer>;

// Adapter factors without the orthonormality constraint; used for ambient
// (flat-space) derivatives.
struct AmbientAdapter {
  Matrix u;
  Vector sigma;
  Matrix v;
};

using AmbientAdapterSet = std::vector<AmbientAdapter>;

AmbientAdapterSet to_ambient(const AdapterSet& adapters);

struct LabeledBatch {
  Matrix inputs;        // n x d_in
  Eigen::VectorXi labels;

  Index size() const { return inputs.rows(); }
  void validate(Index n_classes) const;
  LabeledBatch subset(const std::vector<Index>& rows) const;
};

struct ModelPosteriorSpec {
  std::vector<MatrixLangevin> priors_u;
  std::vector<MatrixLangevin> priors_v;
  PriorConfig prior;
};

// Ambient-space gradient of a scalar objective for one adapted layer.
struct AdapterGradient {
  Matrix u;
  Vector sigma;
  Matrix v;
};

using GradientSet = std::vector<AdapterGradient>;

// Prior construction: U_init, V_init ~ Haar per layer, F = kappa0 * init.
// Returns the spec; `init` receives (U_init, 0, V_init) per layer.
ModelPosteriorSpec make_model_spec(const BaseModel& base, Index rank,
                                   const PriorConfig& prior, Rng& rng,
                                   AdapterSet* init);

void check_adapters(const BaseModel& base, const AmbientAdapterSet& adapters);

Matrix forward(const BaseModel& base, const AdapterSet& adapters,
               const Matrix& x);
Matrix forward(const BaseModel& base, const AmbientAdapterSet& adapters,
               const Matrix& x);
// Base network without adapters.
Matrix forward_base(const BaseModel& base, const Matrix& x);

Matrix softmax_rows(const Matrix& logits);
Matrix log_softmax_rows(const Matrix& logits);

double log_likelihood(const BaseModel& base, const AdapterSet& adapters,
                      const LabeledBatch& batch);

double log_prior(const AdapterSet& adapters, const ModelPosteriorSpec& spec);

// log_likelihood + sum tr(F^T U) + tr(F^T V) - sum sigma^2 / (2 tau^2).
// Prior normalizers are omitted.
double log_posterior(const BaseModel& base, const AdapterSet& adapters,
                     const ModelPosteriorSpec& spec, const LabeledBatch& batch,
                     double likelihood_scale = 1.0);

// Backpropagates dL/dlogits (n x C) to ambient adapter gradients.
GradientSet backprop(const BaseModel& base, const AmbientAdapterSet& adapters,
                     const Matrix& x, const Matrix& dlogits);

GradientSet grad_log_likelihood(const BaseModel& base,
                                const AdapterSet& adapters,
                                const LabeledBatch& batch);
GradientSet grad_log_likelihood(const BaseModel& base,
                                const AmbientAdapterSet& adapters,
                                const LabeledBatch& batch);

GradientSet grad_log_posterior(const BaseModel& base, const AdapterSet& adapters,
                               const ModelPosteriorSpec& spec,
                               const LabeledBatch& batch,
                               double likelihood_scale = 1.0);

// Directional derivative of the logits when layer `layer` moves along
// (dU, dsigma, dV) in ambient coordinates.
Matrix logits_jvp(const BaseModel& base, const AmbientAdapterSet& adapters,
                  const Matrix& x, std::size_t layer, const Matrix& du,
                  const Vector& dsigma, const Matrix& dv);

}  // namespace sba

#endif  // SBA_ADAPTER_MODEL_HPP_
