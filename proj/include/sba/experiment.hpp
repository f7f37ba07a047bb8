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

#ifndef SBA_EXPERIMENT_HPP_
#define SBA_EXPERIMENT_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sba/adapter_model.hpp"
#include "sba/geometry_lab.hpp"
#include "sba/inference.hpp"
#include "sba/io.hpp"
#include "sba/metrics.hpp"
#include "sba/synthetic_data.hpp"

namespace sba {

enum class Method { kMapOnly, kSba, kGaussProj, kDeepEnsemble, kSbaDistilled };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct NormalizerGrid {
  std::vector<Index> d = {32, 64, 128};
  std::vector<Index> k = {4, 8};
  std::vector<double> kappa0 = {0.1, 0.5, 1.0, 2.0, 5.0};
  long n_mc = 1000000;
  std::uint64_t seed = 0;
  bool include_zero_row = true;
};

struct ExperimentConfig {
  DataSpec data;
  ArchitectureConfig model;
  PriorConfig prior;
  TrainConfig train;
  Method method = Method::kSba;
  int samples = 10;
  int ensemble_size = 5;
  DistillConfig distill;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  BayesianComponents components;
  UncertaintyScore selective_score = UncertaintyScore::kEntropy;
  int ece_bins = kDefaultEceBins;
  KLGapGrid klgap;
  NormalizerGrid normalizer;

  void validate() const;
};

ExperimentConfig default_config();
Json config_to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const Json& j);
std::string config_hash(const ExperimentConfig& c);

// Everything produced by training one method for one seed.
struct TrainedModel {
  Method method = Method::kSba;
  std::uint64_t seed = 0;
  BaseModel base;
  ModelPosteriorSpec spec;
  AdapterSet map;
  std::vector<TraceRecord> trace;
  std::optional<LaplacePosterior> laplace;
  std::optional<AmbientGaussianPosterior> ambient;
  std::vector<AdapterSet> ensemble;
  std::optional<AdapterSet> student;
};

// Dataset for one run seed: the configured spec with seed = data.seed + seed.
Dataset dataset_for_seed(const ExperimentConfig& c, std::uint64_t seed);

// Builds the frozen base model and prior for the run seed.
TrainedModel init_model(const ExperimentConfig& c, std::uint64_t seed,
                        AdapterSet* init);

TrainedModel train_model(const ExperimentConfig& c, std::uint64_t seed,
                         const Dataset& data);

// Student for an sba model: teacher draws from the Laplace posterior, then
// distillation starting at the MAP. Used by train_model for sba_distilled.
AdapterSet distill_student(const TrainedModel& teacher, const ExperimentConfig& c,
                           const Dataset& data);

// Parameter sets whose predictions are averaged at evaluation time.
PosteriorSampleSet prediction_samples(const TrainedModel& m,
                                      const ExperimentConfig& c,
                                      std::optional<BayesianComponents> components = {},
                                      std::optional<int> samples = {});

struct SplitMetrics {
  double accuracy = 0.0;
  double mean_confidence = 0.0;
  double ece = 0.0;
  double brier = 0.0;
  double nll = 0.0;
  std::optional<double> selective_auroc;
  double total_entropy = 0.0;
  double aleatoric = 0.0;
  double epistemic = 0.0;
  double epistemic_fraction = 0.0;  // mean epistemic / mean total
  double accuracy_at_80 = 0.0;
  double accuracy_at_50 = 0.0;
  CalibrationReport calibration;
  std::vector<std::pair<double, double>> coverage;
};

struct EvalReport {
  SplitMetrics id;
  SplitMetrics shift;
  double ood_auroc = 0.0;
  double ood_mean_entropy = 0.0;
};

SplitMetrics evaluate_split(const BaseModel& base, const PosteriorSampleSet& samples,
                            const LabeledBatch& split, const ExperimentConfig& c);
EvalReport evaluate(const BaseModel& base, const PosteriorSampleSet& samples,
                    const Dataset& data, const ExperimentConfig& c);

// Flat scalar view used for JSON records and aggregation.
std::map<std::string, double> scalar_metrics(const EvalReport& r);
Json eval_to_json(const EvalReport& r);

// Mean and sample standard deviation over seeds for every scalar present in
// all records.
Json aggregate(const std::vector<std::map<std::string, double>>& per_seed);

// Shared-MAP comparison used for the calibration ordering: for each seed one
// MAP, one Laplace posterior, one ambient posterior and one distilled
// student are built and every method evaluated on the same data.
struct BenchmarkSeed {
  std::uint64_t seed = 0;
  std::map<std::string, EvalReport> reports;  // keyed by method/variant name
};

std::vector<std::string> benchmark_variants();
BenchmarkSeed run_benchmark_seed(const ExperimentConfig& c, std::uint64_t seed);

Json checkpoint_to_json(const TrainedModel& m, const ExperimentConfig& c);
TrainedModel checkpoint_from_json(const Json& j, ExperimentConfig* config_out);

inline constexpr int kCheckpointVersion = 1;

// Saddle-point versus Monte Carlo log normalizer at F = kappa0 [I_k; 0].
struct NormalizerRow {
  Index d = 0;
  Index k = 0;
  double kappa0 = 0.0;
  double log_mc = 0.0;
  double mc_stderr = 0.0;
  double log_saddlepoint = 0.0;
  double rel_error = 0.0;  // |exp(log_saddlepoint - log_mc) - 1|
  std::optional<double> tolerance;
  bool passed = true;
};

// 2% at d = 64 and 0.5% at d >= 128; other widths are reported only.
std::optional<double> normalizer_tolerance(Index d);
std::vector<NormalizerRow> validate_normalizer(const NormalizerGrid& grid, int workers = 1);
Json normalizer_row_to_json(const NormalizerRow& r);
Json kl_gap_to_json(const KLGapResult& r);

enum class AblationAxis { kKappa0, kSamples, kRank, kComponents };
std::string to_string(AblationAxis a);
AblationAxis ablation_axis_from_string(const std::string& s);
std::vector<std::string> default_ablation_grid(AblationAxis a);
// Config for one grid point: method sba with the axis field replaced.
ExperimentConfig ablation_config(const ExperimentConfig& c, AblationAxis axis,
                                 const std::string& value);

}  // namespace sba

#endif  // SBA_EXPERIMENT_HPP_
