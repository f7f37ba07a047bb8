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

#ifndef SBA_MANIFOLD_HPP_
#define SBA_MANIFOLD_HPP_

#include <utility>
#include <vector>

#include "sba/common.hpp"

namespace sba {

// A d x k matrix with orthonormal columns. Construction validates
// orthonormality to kOrthonormalTol.
class StiefelPoint {
 public:
  explicit StiefelPoint(Matrix data);

  const Matrix& matrix() const { return data_; }
  Index d() const { return data_.rows(); }
  Index k() const { return data_.cols(); }

  // Largest entry of |U^T U - I|.
  static double orthonormality_error(const Matrix& u);

 private:
  Matrix data_;
};

// Ambient d x k matrix in the tangent space at `base`.
class TangentVector {
 public:
  TangentVector(StiefelPoint base, Matrix data);

  const StiefelPoint& base() const { return base_; }
  const Matrix& matrix() const { return data_; }

  // Largest entry of |U^T D + D^T U|.
  static double tangency_error(const Matrix& u, const Matrix& delta);

 private:
  StiefelPoint base_;
  Matrix data_;
};

// Normal vector U * S with S symmetric.
class NormalVector {
 public:
  NormalVector(StiefelPoint base, Matrix sym);

  const StiefelPoint& base() const { return base_; }
  const Matrix& sym() const { return sym_; }
  Matrix matrix() const { return base_.matrix() * sym_; }

 private:
  StiefelPoint base_;
  Matrix sym_;
};

// Orthonormal basis of the tangent space. Ordering: the k(k-1)/2 skew
// directions U (e_i e_j^T - e_j e_i^T) / sqrt(2) for i < j (row-major over
// (i, j)), then U_perp e_a e_b^T for a over the d-k complement columns and
// b over the k columns (a outer, b inner).
class TangentBasis {
 public:
  explicit TangentBasis(const StiefelPoint& base);

  const StiefelPoint& base() const { return base_; }
  Index m() const { return m_; }
  const std::vector<TangentVector>& vectors() const { return vectors_; }
  const Matrix& complement() const { return u_perp_; }

  // Frobenius inner products <E_i, X>; for tangent X these are the exact
  // coordinates, for general X the coordinates of its tangent projection.
  Vector coordinates(const Matrix& x) const;
  // sum_i z_i E_i.
  Matrix expand(const Vector& z) const;

 private:
  StiefelPoint base_;
  Matrix u_perp_;
  Index m_;
  std::vector<TangentVector> vectors_;
};

// Orthonormal coordinates of the normal space: S_ii and sqrt(2) S_ij (i<j),
// ordered (0,0),(0,1),...,(0,k-1),(1,1),... . U * S has Frobenius norm equal
// to the Euclidean norm of these coordinates.
Index normal_dim(Index k);
Vector sym_to_normal_coords(const Matrix& s);
Matrix normal_coords_to_sym(const Vector& c, Index k);

Index manifold_dim(Index d, Index k);

TangentVector tangent_project(const StiefelPoint& u, const Matrix& g);

// Thin QR with nonnegative R diagonal. Throws RankDeficiencyError.
StiefelPoint qr_retract(const StiefelPoint& u, const TangentVector& delta);
StiefelPoint qr_orthonormalize(const Matrix& w);

// Polar factor W (W^T W)^{-1/2}, computed from the thin SVD.
StiefelPoint polar_project(const Matrix& w);

struct PolarFactors {
  Matrix q;          // orthonormal factor
  Matrix p;          // symmetric positive factor, W = q p
  Vector p_eigvals;  // singular values of W (ascending)
  Matrix p_eigvecs;  // right singular vectors (columns)
};
PolarFactors polar_decompose(const Matrix& w);

std::pair<TangentVector, NormalVector> normal_decompose(const StiefelPoint& u,
                                                        const Matrix& x);

TangentBasis tangent_basis(const StiefelPoint& u);

StiefelPoint haar_sample(Index d, Index k, Rng& rng);

// log of the Riemannian volume of St(k, d) under the Frobenius metric.
double log_stiefel_volume(Index d, Index k);

// log of the multivariate gamma function Gamma_k(a).
double log_multivariate_gamma(Index k, double a);

}  // namespace sba

#endif  // SBA_MANIFOLD_HPP_
