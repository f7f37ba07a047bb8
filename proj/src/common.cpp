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

#include "sba/common.hpp"

#include <sstream>

namespace sba {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

double Rng::normal() { return normal_(engine_); }

double Rng::uniform() { return uniform_(engine_); }

double Rng::chi_squared(double dof) {
  std::chi_squared_distribution<double> dist(dof);
  return dist(engine_);
}

std::uint64_t Rng::next_u64() { return engine_(); }

Matrix Rng::normal_matrix(Index rows, Index cols) {
  Matrix m(rows, cols);
  // Column-major fill order is part of the reproducibility contract.
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) m(i, j) = normal();
  }
  return m;
}

Vector Rng::normal_vector(Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = normal();
  return v;
}

Rng Rng::split(std::uint64_t stream_id) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream_id + 0x632be59bd9b4e019ULL)));
}

void require_shape(const Matrix& x, Index rows, Index cols, const char* what) {
  if (x.rows() != rows || x.cols() != cols) {
    std::ostringstream os;
    os << what << ": expected " << rows << "x" << cols << ", got " << x.rows()
       << "x" << x.cols();
    throw ShapeError(os.str());
  }
}

}  // namespace sba
