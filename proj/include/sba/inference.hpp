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

#ifndef SBA_INFERENCE_HPP_
#define SBA_INFERENCE_HPP_

#include <functional>
#include <string>
#include <vector>

#include "sba/adapter_model.hpp"
#include "sba/common.hpp"
#include "sba/manifold.hpp"

namespace sba {

enum class HessianMode { kExactFd, kGgn, kDiagonal };

std::string to_string(HessianMode m);
HessianMode hessian_mode_from_string(const std::string& s);

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 60;
  int batch_size = 64;
  std::uint64_t seed = 0;
  int hessian_points = 2048;
  HessianMode hessian_mode = HessianMode::kGgn;
  double momentum = 0.9;
  // Cosine decay from learning_rate to learning_rate * final_lr_fraction.
  double final_lr_fraction = 0.01;

  void validate() const;
};

struct TraceRecord {
  long step = 0;
  double log_posterior = 0.0;  // minibatch estimate scaled to the full set
  double grad_norm = 0.0;
};

struct MapResult {
  AdapterSet params;
  std::vector<TraceRecord> trace;
};

// Objective for the generic Riemannian optimizer: value and ambient
// gradients, on the minibatch given by row indices, of a function to
// maximize. Values are scaled to the full dataset.
using BatchObjective = std::function<double(
    const AdapterSet&, const std::vector<Index>& rows, GradientSet* grads)>;

// Riemannian gradient ascent with optional momentum transported by tangent
// projection. U and V steps are retracted with qr_retract; sigma is updated
// in flat coordinates. The step is divided by the dataset size.
MapResult riemannian_optimize(const BatchObjective& objective, Index n_data,
                              const TrainConfig& config, AdapterSet init);

// MAP estimate of the adapter posterior.
MapResult riemannian_map(const BaseModel& base, const ModelPosteriorSpec& spec,
                         const LabeledBatch& data, const TrainConfig& config,
                         AdapterSet init);

// Which parameter blocks are treated as random in the Laplace posterior.
struct BayesianComponents {
  bool u = true;
  bool sigma = true;
  bool v = true;

  static BayesianComponents from_string(const std::string& s);
  std::string to_string() const;
};

// Per-layer coordinate layout: [U tangent coords | V tangent coords | sigma].
struct LayerLayout {
  Index m_u = 0;
  Index m_v = 0;
  Index k = 0;
  Index size() const { return m_u + m_v + k; }
};

struct LaplacePosterior {
  AdapterSet map_params;
  std::vector<TangentBasis> bases_u;
  std::vector<TangentBasis> bases_v;
  std::vector<LayerLayout> layout;
  // Damped precision per layer (cross-layer blocks are dropped).
  std::vector<Matrix> precision;
  HessianMode mode = HessianMode::kGgn;
  std::vector<double> damping;

  Index total_dim() const;
  Vector sigma_precision(std::size_t layer) const;
};

struct PosteriorSampleSet {
  std::vector<AdapterSet> samples;
  Index size() const { return static_cast<Index>(samples.size()); }
};

// Rows drawn without replacement from `data` for the curvature estimate.
LabeledBatch hessian_subset(const LabeledBatch& data, int points, Rng& rng);

// Riemannian Hessian in `basis` coordinates by central differences of the
// projected Euclidean gradient along the QR retraction, symmetrized.
// `asymmetry` (optional) receives max |H - H^T| before symmetrization.
Matrix riemannian_hessian_fd(
    const TangentBasis& basis,
    const std::function<Matrix(const StiefelPoint&)>& euclidean_grad,
    double step = 1e-4, double* asymmetry = nullptr);

// Negative tangent-space Hessian of the log posterior at the MAP.
// `likelihood_scale` multiplies the data term (N / |subset|).
LaplacePosterior tangent_hessian(const BaseModel& base,
                                 const ModelPosteriorSpec& spec,
                                 const LabeledBatch& data_subset,
                                 const AdapterSet& map_params, HessianMode mode,
                                 double likelihood_scale = 1.0,
                                 std::vector<double>* asymmetry = nullptr);

// Adds lambda = 1e-4 * mean(diag) (times 10 until Cholesky succeeds).
// Returns the damping used.
double damp_to_spd(Matrix& precision);

// Tangent/sigma coordinates drawn from the Laplace Gaussian restricted to
// `components` (the other blocks stay at the MAP), expanded in the tangent
// basis and retracted.
PosteriorSampleSet laplace_sample(const LaplacePosterior& post, int s, Rng& rng,
                                  BayesianComponents components = {});

// Joint coordinate draws for one layer (for covariance checks).
Matrix laplace_coordinate_draws(const LaplacePosterior& post, std::size_t layer,
                                int n, Rng& rng,
                                BayesianComponents components = {});

// Maps one coordinate vector of layer `layer` to manifold parameters.
AdapterLayer laplace_point(const LaplacePosterior& post, std::size_t layer,
                           const Vector& coords);

struct AmbientGaussianPosterior {
  // Per-layer mean; U and V need not be orthonormal.
  AmbientAdapterSet mean;
  // Per-layer lower Cholesky factor L of the covariance L L^T over the
  // coordinates [vec(U) | vec(V) | sigma] (column-major vec).
  std::vector<Matrix> covariance_factor;
  std::vector<double> damping;

  static Index layer_dim(const AmbientAdapter& a);
};

// Euclidean Hessian of the ambient objective: data term plus the Gaussian
// extension -kappa0/2 ||U - U_init||^2 of the Matrix Langevin prior.
AmbientGaussianPosterior ambient_hessian(const BaseModel& base,
                                         const ModelPosteriorSpec& spec,
                                         const LabeledBatch& data_subset,
                                         const AdapterSet& map_params,
                                         double likelihood_scale = 1.0);

PosteriorSampleSet gauss_proj_sample(const AmbientGaussianPosterior& post, int s,
                                     Rng& rng);

Matrix predictive(const BaseModel& base, const PosteriorSampleSet& samples,
                  const Matrix& x);

// Softmax output of each sample: S matrices of n x C.
std::vector<Matrix> per_sample_predictions(const BaseModel& base,
                                           const PosteriorSampleSet& samples,
                                           const Matrix& x);

struct DistillConfig {
  double temperature = 2.0;
  int epochs = 1;
  double learning_rate = 0.05;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

// Minimizes T^2 KL(tempered teacher predictive || tempered student) over the
// inputs in `data`, starting from `student_init`.
MapResult distill(const BaseModel& base, const PosteriorSampleSet& teacher,
                  const AdapterSet& student_init, const LabeledBatch& data,
                  const DistillConfig& config);

// Mean tempered KL between teacher predictive and student on `x`.
double distill_objective(const BaseModel& base, const Matrix& teacher_probs,
                         const AdapterSet& student, const Matrix& x,
                         double temperature);

// n_members MAP runs; member i starts from Haar factors drawn from a stream
// derived from (config.seed, i) and uses minibatch seed derived likewise.
std::vector<AdapterSet> deep_ensemble(const BaseModel& base,
                                      const ModelPosteriorSpec& spec,
                                      const LabeledBatch& data,
                                      const TrainConfig& config, int n_members);

}  // namespace sba

#endif  // SBA_INFERENCE_HPP_
