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

#include "sba/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace sba {

std::vector<PredictionRecord> make_records(const Matrix& probs,
                                           const Eigen::VectorXi& labels,
                                           const std::vector<Matrix>* per_sample) {
  if (labels.size() != probs.rows()) throw ShapeError("make_records: label count");
  std::vector<PredictionRecord> out(static_cast<std::size_t>(probs.rows()));
  for (Index i = 0; i < probs.rows(); ++i) {
    auto& r = out[static_cast<std::size_t>(i)];
    r.probs = probs.row(i).transpose();
    r.label = labels(i);
    if (per_sample && !per_sample->empty()) {
      Matrix t(static_cast<Index>(per_sample->size()), probs.cols());
      for (std::size_t s = 0; s < per_sample->size(); ++s) {
        t.row(static_cast<Index>(s)) = (*per_sample)[s].row(i);
      }
      r.per_sample_probs = std::move(t);
    }
  }
  return out;
}

void validate_record(const PredictionRecord& r) {
  if (r.probs.size() < 1 || r.label < 0 || r.label >= r.probs.size()) {
    throw ShapeError("PredictionRecord: label out of range");
  }
  if ((r.probs.array() < 0.0).any() || std::abs(r.probs.sum() - 1.0) > 1e-9) {
    throw NumericalError("PredictionRecord: probabilities must be >= 0 and sum to 1");
  }
}

int predicted_class(const Vector& probs) {
  Index best = 0;
  for (Index c = 1; c < probs.size(); ++c) {
    if (probs(c) > probs(best)) best = c;
  }
  return static_cast<int>(best);
}

double confidence(const Vector& probs) { return probs.maxCoeff(); }

double entropy(const Vector& probs) {
  double h = 0.0;
  for (Index c = 0; c < probs.size(); ++c) {
    if (probs(c) > 0.0) h -= probs(c) * std::log(probs(c));
  }
  return h;
}

double accuracy(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw DegenerateInputError("accuracy: no records");
  long hits = 0;
  for (const auto& r : records) hits += predicted_class(r.probs) == r.label;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

double brier(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw DegenerateInputError("brier: no records");
  double total = 0.0;
  for (const auto& r : records) {
    for (Index c = 0; c < r.probs.size(); ++c) {
      const double target = c == r.label ? 1.0 : 0.0;
      total += (r.probs(c) - target) * (r.probs(c) - target);
    }
  }
  return total / static_cast<double>(records.size());
}

double nll(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw DegenerateInputError("nll: no records");
  double total = 0.0;
  for (const auto& r : records) total -= std::log(std::max(r.probs(r.label), kNllFloor));
  return total / static_cast<double>(records.size());
}

CalibrationReport ece(const std::vector<PredictionRecord>& records, int n_bins) {
  if (records.empty()) throw DegenerateInputError("ece: no records");
  if (n_bins < 1) throw ConfigError("ece: n_bins must be >= 1");
  std::vector<double> conf_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> acc_sum(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<long> count(static_cast<std::size_t>(n_bins), 0);
  for (const auto& r : records) {
    validate_record(r);
    const double conf = confidence(r.probs);
    int b = static_cast<int>(std::floor(conf * n_bins));
    b = std::clamp(b, 0, n_bins - 1);
    conf_sum[static_cast<std::size_t>(b)] += conf;
    acc_sum[static_cast<std::size_t>(b)] += predicted_class(r.probs) == r.label ? 1.0 : 0.0;
    ++count[static_cast<std::size_t>(b)];
  }
  CalibrationReport rep;
  const double n = static_cast<double>(records.size());
  for (int b = 0; b < n_bins; ++b) {
    const auto i = static_cast<std::size_t>(b);
    ReliabilityBin bin;
    bin.low = static_cast<double>(b) / n_bins;
    bin.high = static_cast<double>(b + 1) / n_bins;
    bin.count = count[i];
    if (count[i] > 0) {
      bin.mean_conf = conf_sum[i] / static_cast<double>(count[i]);
      bin.mean_acc = acc_sum[i] / static_cast<double>(count[i]);
      rep.ece += (static_cast<double>(count[i]) / n) * std::abs(bin.mean_acc - bin.mean_conf);
    }
    rep.bins.push_back(bin);
  }
  rep.brier = brier(records);
  rep.nll = nll(records);
  return rep;
}

double auroc(const std::vector<double>& positive, const std::vector<double>& negative) {
  if (positive.empty() || negative.empty()) {
    throw DegenerateInputError("auroc: both classes must be non-empty");
  }
  struct Item {
    double score;
    bool pos;
  };
  std::vector<Item> all;
  all.reserve(positive.size() + negative.size());
  for (double s : positive) all.push_back({s, true});
  for (double s : negative) all.push_back({s, false});
  std::stable_sort(all.begin(), all.end(),
                   [](const Item& a, const Item& b) { return a.score < b.score; });
  // Sum of midranks of the positives (Mann-Whitney U).
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].pos) rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(positive.size());
  const double nn = static_cast<double>(negative.size());
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double selective_auroc(const std::vector<double>& uncertainty,
                       const std::vector<bool>& correct) {
  if (uncertainty.size() != correct.size()) throw ShapeError("selective_auroc: sizes");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < correct.size(); ++i) {
    (correct[i] ? neg : pos).push_back(uncertainty[i]);
  }
  if (pos.empty() || neg.empty()) {
    throw DegenerateInputError(
        "selective_auroc: undefined when all predictions are correct or all incorrect");
  }
  return auroc(pos, neg);
}

std::string to_string(UncertaintyScore s) {
  return s == UncertaintyScore::kEntropy ? "entropy" : "one_minus_max_prob";
}

UncertaintyScore uncertainty_score_from_string(const std::string& s) {
  if (s == "entropy") return UncertaintyScore::kEntropy;
  if (s == "one_minus_max_prob") return UncertaintyScore::kOneMinusMaxProb;
  throw ConfigError("unknown uncertainty score '" + s + "'");
}

std::vector<double> uncertainty_scores(const std::vector<PredictionRecord>& records,
                                       UncertaintyScore score) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back(score == UncertaintyScore::kEntropy ? entropy(r.probs)
                                                      : 1.0 - confidence(r.probs));
  }
  return out;
}

std::vector<bool> correctness(const std::vector<PredictionRecord>& records) {
  std::vector<bool> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(predicted_class(r.probs) == r.label);
  return out;
}

std::vector<std::pair<double, double>> accuracy_coverage(
    const std::vector<double>& uncertainty, const std::vector<bool>& correct,
    const std::vector<double>& grid) {
  if (uncertainty.size() != correct.size()) throw ShapeError("accuracy_coverage: sizes");
  const std::size_t n = uncertainty.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return uncertainty[a] < uncertainty[b];
  });
  std::vector<long> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + (correct[order[i]] ? 1 : 0);
  std::vector<std::pair<double, double>> out;
  for (double c : grid) {
    const auto kept = static_cast<std::size_t>(
        std::min<double>(static_cast<double>(n), std::ceil(c * static_cast<double>(n) - 1e-9)));
    const double acc = kept == 0 ? 1.0
                                 : static_cast<double>(prefix[kept]) / static_cast<double>(kept);
    out.emplace_back(c, acc);
  }
  return out;
}

std::vector<std::pair<double, double>> accuracy_coverage(
    const std::vector<double>& uncertainty, const std::vector<bool>& correct) {
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i / 100.0);
  return accuracy_coverage(uncertainty, correct, grid);
}

double ood_auroc(const std::vector<double>& entropy_id,
                 const std::vector<double>& entropy_ood) {
  return auroc(entropy_ood, entropy_id);
}

UncertaintyDecomposition decompose_uncertainty(const Matrix& per_sample_probs) {
  if (per_sample_probs.rows() < 1) throw DegenerateInputError("decompose: S must be >= 1");
  const Vector mean = per_sample_probs.colwise().mean().transpose();
  UncertaintyDecomposition u;
  u.total = entropy(mean);
  double al = 0.0;
  for (Index s = 0; s < per_sample_probs.rows(); ++s) {
    al += entropy(per_sample_probs.row(s).transpose());
  }
  u.aleatoric = al / static_cast<double>(per_sample_probs.rows());
  u.epistemic = u.total - u.aleatoric;
  return u;
}

std::string reliability_csv(const CalibrationReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "bin_low,bin_high,mean_conf,mean_acc,count\n";
  for (const auto& b : report.bins) {
    os << b.low << ',' << b.high << ',' << b.mean_conf << ',' << b.mean_acc << ','
       << b.count << '\n';
  }
  return os.str();
}

}  // namespace sba
