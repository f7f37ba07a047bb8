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

#ifndef SBA_METRICS_HPP_
#define SBA_METRICS_HPP_

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sba/common.hpp"

namespace sba {

struct PredictionRecord {
  Vector probs;
  int label = 0;
  std::optional<Matrix> per_sample_probs;  // S x C
};

struct ReliabilityBin {
  double low = 0.0;
  double high = 0.0;
  double mean_conf = 0.0;
  double mean_acc = 0.0;
  long count = 0;
};

struct CalibrationReport {
  double ece = 0.0;
  double brier = 0.0;
  double nll = 0.0;
  std::vector<ReliabilityBin> bins;
};

struct UncertaintyDecomposition {
  double total = 0.0;
  double aleatoric = 0.0;
  double epistemic = 0.0;
};

inline constexpr int kDefaultEceBins = 15;
inline constexpr double kNllFloor = 1e-12;

// Builds records from an n x C probability matrix; per-sample predictions
// (S matrices of n x C), if given, are attached row by row.
std::vector<PredictionRecord> make_records(const Matrix& probs,
                                           const Eigen::VectorXi& labels,
                                           const std::vector<Matrix>* per_sample = nullptr);

void validate_record(const PredictionRecord& r);

// Index of the largest probability (first on ties).
int predicted_class(const Vector& probs);
double confidence(const Vector& probs);
double entropy(const Vector& probs);
double accuracy(const std::vector<PredictionRecord>& records);

// Equal-width bins on [0, 1], half-open [lo, hi) except the last, closed.
// Also fills brier and nll.
CalibrationReport ece(const std::vector<PredictionRecord>& records,
                      int n_bins = kDefaultEceBins);
double brier(const std::vector<PredictionRecord>& records);
double nll(const std::vector<PredictionRecord>& records);

// Rank-based AUROC: P(score_pos > score_neg) + 0.5 P(tie).
double auroc(const std::vector<double>& positive, const std::vector<double>& negative);

// Positives are incorrect predictions. Throws DegenerateInputError when all
// predictions are correct or all incorrect.
double selective_auroc(const std::vector<double>& uncertainty,
                       const std::vector<bool>& correct);

enum class UncertaintyScore { kEntropy, kOneMinusMaxProb };
std::string to_string(UncertaintyScore s);
UncertaintyScore uncertainty_score_from_string(const std::string& s);
std::vector<double> uncertainty_scores(const std::vector<PredictionRecord>& records,
                                       UncertaintyScore score);
std::vector<bool> correctness(const std::vector<PredictionRecord>& records);

// 101-point coverage grid {0, 0.01, ..., 1}. The retained set at coverage c
// is the ceil(c n) least uncertain examples (stable on ties); accuracy at an
// empty retained set is reported as 1.
std::vector<std::pair<double, double>> accuracy_coverage(
    const std::vector<double>& uncertainty, const std::vector<bool>& correct);
std::vector<std::pair<double, double>> accuracy_coverage(
    const std::vector<double>& uncertainty, const std::vector<bool>& correct,
    const std::vector<double>& grid);

// OOD is the positive class, predictive entropy the score.
double ood_auroc(const std::vector<double>& entropy_id,
                 const std::vector<double>& entropy_ood);

// Natural-log entropies of an S x C table.
UncertaintyDecomposition decompose_uncertainty(const Matrix& per_sample_probs);

std::string reliability_csv(const CalibrationReport& report);

}  // namespace sba

#endif  // SBA_METRICS_HPP_
