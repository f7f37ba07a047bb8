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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "sba/io.hpp"
#include "sba/synthetic_data.hpp"

namespace sba {
namespace {

DataSpec small_spec(std::uint64_t seed = 3) {
  DataSpec s;
  s.n_train = 300;
  s.n_test = 150;
  s.d_in = 8;
  s.seed = seed;
  return s;
}

Matrix class_means(const LabeledBatch& b, Index c) {
  Matrix m = Matrix::Zero(c, b.inputs.cols());
  Vector n = Vector::Zero(c);
  for (Index i = 0; i < b.size(); ++i) {
    m.row(b.labels(i)) += b.inputs.row(i);
    n(b.labels(i)) += 1.0;
  }
  for (Index k = 0; k < c; ++k) m.row(k) /= n(k);
  return m;
}

// Plain multinomial logistic regression by full-batch gradient ascent.
Matrix fit_logistic(const LabeledBatch& b, Index c) {
  const Index d = b.inputs.cols();
  Matrix w = Matrix::Zero(c, d + 1);
  Matrix x(b.size(), d + 1);
  x << b.inputs, Matrix::Ones(b.size(), 1);
  for (int it = 0; it < 500; ++it) {
    Matrix z = x * w.transpose();
    for (Index i = 0; i < z.rows(); ++i) {
      z.row(i).array() -= z.row(i).maxCoeff();
      z.row(i) = z.row(i).array().exp();
      z.row(i) /= z.row(i).sum();
      z(i, b.labels(i)) -= 1.0;
    }
    w -= 0.5 * z.transpose() * x / static_cast<double>(b.size());
  }
  return w;
}

double logistic_accuracy(const Matrix& w, const LabeledBatch& b) {
  Matrix x(b.size(), b.inputs.cols() + 1);
  x << b.inputs, Matrix::Ones(b.size(), 1);
  const Matrix z = x * w.transpose();
  Index hits = 0;
  for (Index i = 0; i < z.rows(); ++i) {
    Index k;
    z.row(i).maxCoeff(&k);
    hits += k == b.labels(i);
  }
  return static_cast<double>(hits) / static_cast<double>(b.size());
}

TEST(Generate, DeterministicPerSeed) {
  EXPECT_TRUE(datasets_equal(generate(small_spec()), generate(small_spec())));
  EXPECT_FALSE(datasets_equal(generate(small_spec(3)), generate(small_spec(4))));
}

TEST(Generate, ShapesAndBalance) {
  DataSpec s = small_spec();
  s.n_classes = 4;
  const Dataset d = generate(s);
  EXPECT_EQ(d.train.size(), 300);
  EXPECT_EQ(d.test_id.size(), 150);
  EXPECT_EQ(d.test_shift.size(), 150);
  EXPECT_EQ(d.test_ood.rows(), 150);
  EXPECT_EQ(d.train.inputs.cols(), 8);
  for (const LabeledBatch* b : {&d.train, &d.test_id, &d.test_shift}) {
    for (int c = 0; c < 4; ++c) {
      const double frac = static_cast<double>((b->labels.array() == c).count()) / b->size();
      EXPECT_NEAR(frac, 0.25, 0.02);
    }
  }
}

TEST(Generate, ZeroShiftMatchesInDistributionLaw) {
  DataSpec s = small_spec();
  s.n_test = 6000;
  s.shift_angle = 0.0;
  const Dataset d = generate(s);
  EXPECT_LE(max_abs(class_means(d.test_id, 3) - class_means(d.test_shift, 3)), 0.1);
  const double v_id = (d.test_id.inputs.rowwise() - d.test_id.inputs.colwise().mean()).squaredNorm();
  const double v_sh = (d.test_shift.inputs.rowwise() - d.test_shift.inputs.colwise().mean()).squaredNorm();
  EXPECT_NEAR(v_sh / v_id, 1.0, 0.05);
}

TEST(Generate, ShiftRotatesMeansAndPreservesTheirNorm) {
  DataSpec s = small_spec();
  s.n_test = 6000;
  s.noise = 0.2;
  s.shift_angle = 1.0;
  const Dataset d = generate(s);
  const Matrix a = class_means(d.test_id, 3);
  const Matrix b = class_means(d.test_shift, 3);
  for (Index k = 0; k < 3; ++k) {
    EXPECT_NEAR(b.row(k).norm(), s.class_sep, 0.05);
    EXPECT_GT((a.row(k) - b.row(k)).norm(), 0.3);
  }
}

TEST(Generate, OodModes) {
  DataSpec s = small_spec();
  s.n_test = 2000;
  const Dataset far = generate(s);
  EXPECT_NEAR(far.test_ood.colwise().mean().norm(), s.far_distance * s.class_sep, 0.2);
  s.ood_mode = OodMode::kNear;
  s.noise = 0.0;
  s.background_noise = 0.0;
  const Dataset near = generate(s);
  // Noise-free near-OOD points sit at midpoints of two class means.
  const Matrix means = class_means(generate(s).train, 3);
  for (Index i = 0; i < 50; ++i) {
    double best = 1e300;
    for (Index a = 0; a < 3; ++a) {
      for (Index b = a + 1; b < 3; ++b) {
        best = std::min(best, (near.test_ood.row(i) - 0.5 * (means.row(a) + means.row(b))).norm());
      }
    }
    EXPECT_LE(best, 1e-12);
  }
}

TEST(Generate, SeparableDataIsLearnedByLogisticOracle) {
  DataSpec s = small_spec(9);
  s.class_sep = 6.0;
  s.noise = 0.3;
  s.n_train = 600;
  s.n_test = 600;
  const Dataset d = generate(s);
  EXPECT_GE(logistic_accuracy(fit_logistic(d.train, 3), d.test_id), 0.99);
}

TEST(Generate, RejectsInvalidSpecs) {
  DataSpec s = small_spec();
  s.shift_angle = 4.0;
  EXPECT_THROW(generate(s), ConfigError);
  s = small_spec();
  s.d_in = 3;
  EXPECT_THROW(generate(s), ConfigError);
  s = small_spec();
  s.n_classes = 1;
  EXPECT_THROW(generate(s), ConfigError);
  EXPECT_THROW(ood_mode_from_string("mid"), ConfigError);
}

TEST(DatasetCache, RoundTripIsBitExact) {
  DataSpec s = small_spec(11);
  s.ood_mode = OodMode::kNear;
  const Dataset d = generate(s);
  const std::string path =
      (std::filesystem::temp_directory_path() / "sba_dataset_cache_test.csv").string();
  write_dataset_cache(path, s, d);
  DataSpec back;
  const Dataset r = read_dataset_cache(path, &back);
  std::filesystem::remove(path);
  EXPECT_TRUE(datasets_equal(d, r));
  EXPECT_EQ(data_spec_to_json(back).dump(), data_spec_to_json(s).dump());
  EXPECT_TRUE(datasets_equal(generate(back), r));
  EXPECT_THROW(read_dataset_cache(path), ConfigError);
}

}  // namespace
}  // namespace sba
