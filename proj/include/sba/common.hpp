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

#ifndef SBA_COMMON_HPP_
#define SBA_COMMON_HPP_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace sba {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Raised when an estimator is asked to work with degenerate inputs
// (all-correct AUROC, too few Monte Carlo samples, ...).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

// Tolerances, max-absolute-entry norm.
inline constexpr double kOrthonormalTol = 1e-10;
inline constexpr double kTangentTol = 1e-10;
inline constexpr double kSymmetricTol = 1e-12;

// Seeded random stream. Streams are split deterministically with SplitMix64
// so parallel consumers get independent, reproducible sequences.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  double normal();
  double uniform();
  // Chi-squared draw with `dof` degrees of freedom.
  double chi_squared(double dof);
  std::uint64_t next_u64();
  Matrix normal_matrix(Index rows, Index cols);
  Vector normal_vector(Index n);
  // Derived stream; depends only on (seed, stream_id).
  Rng split(std::uint64_t stream_id) const;
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

inline Matrix sym(const Matrix& x) { return 0.5 * (x + x.transpose()); }

inline double max_abs(const Matrix& x) {
  return x.size() == 0 ? 0.0 : x.cwiseAbs().maxCoeff();
}

void require_shape(const Matrix& x, Index rows, Index cols, const char* what);

}  // namespace sba

#endif  // SBA_COMMON_HPP_
