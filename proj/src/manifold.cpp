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

#include "sba/manifold.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace sba {
namespace {

void check_base(const StiefelPoint& u, const Matrix& x, const char* what) {
  require_shape(x, u.d(), u.k(), what);
}

}  // namespace

StiefelPoint::StiefelPoint(Matrix data) : data_(std::move(data)) {
  if (data_.cols() < 1 || data_.rows() < data_.cols()) {
    std::ostringstream os;
    os << "StiefelPoint: need 1 <= k <= d, got " << data_.rows() << "x"
       << data_.cols();
    throw ShapeError(os.str());
  }
  const double err = orthonormality_error(data_);
  if (!(err <= kOrthonormalTol)) {
    std::ostringstream os;
    os << "StiefelPoint: columns not orthonormal (max |U^T U - I| = " << err
       << ")";
    throw NumericalError(os.str());
  }
}

double StiefelPoint::orthonormality_error(const Matrix& u) {
  const Index k = u.cols();
  return max_abs(u.transpose() * u - Matrix::Identity(k, k));
}

TangentVector::TangentVector(StiefelPoint base, Matrix data)
    : base_(std::move(base)), data_(std::move(data)) {
  check_base(base_, data_, "TangentVector");
  const double scale = std::max(1.0, max_abs(data_));
  const double err = tangency_error(base_.matrix(), data_);
  if (!(err <= kTangentTol * scale)) {
    std::ostringstream os;
    os << "TangentVector: U^T D not skew (residual " << err << ")";
    throw NumericalError(os.str());
  }
}

double TangentVector::tangency_error(const Matrix& u, const Matrix& delta) {
  const Matrix a = u.transpose() * delta;
  return max_abs(a + a.transpose());
}

NormalVector::NormalVector(StiefelPoint base, Matrix s)
    : base_(std::move(base)), sym_(std::move(s)) {
  require_shape(sym_, base_.k(), base_.k(), "NormalVector");
  if (!(max_abs(sym_ - sym_.transpose()) <=
        kSymmetricTol * std::max(1.0, max_abs(sym_)))) {
    throw NumericalError("NormalVector: S not symmetric");
  }
}

Index manifold_dim(Index d, Index k) {
  if (d < 1 || k < 1 || k > d) {
    std::ostringstream os;
    os << "manifold_dim: need 1 <= k <= d, got d=" << d << " k=" << k;
    throw ShapeError(os.str());
  }
  return d * k - k * (k + 1) / 2;
}

Index normal_dim(Index k) { return k * (k + 1) / 2; }

Vector sym_to_normal_coords(const Matrix& s) {
  const Index k = s.rows();
  Vector c(normal_dim(k));
  Index t = 0;
  for (Index i = 0; i < k; ++i) {
    for (Index j = i; j < k; ++j) {
      c(t++) = (i == j) ? s(i, i) : std::numbers::sqrt2 * s(i, j);
    }
  }
  return c;
}

Matrix normal_coords_to_sym(const Vector& c, Index k) {
  if (c.size() != normal_dim(k)) throw ShapeError("normal_coords_to_sym");
  Matrix s(k, k);
  Index t = 0;
  for (Index i = 0; i < k; ++i) {
    for (Index j = i; j < k; ++j) {
      const double v = (i == j) ? c(t) : c(t) / std::numbers::sqrt2;
      s(i, j) = v;
      s(j, i) = v;
      ++t;
    }
  }
  return s;
}

TangentVector tangent_project(const StiefelPoint& u, const Matrix& g) {
  check_base(u, g, "tangent_project");
  const Matrix& um = u.matrix();
  return TangentVector(u, g - um * sym(um.transpose() * g));
}

StiefelPoint qr_orthonormalize(const Matrix& w) {
  const Index d = w.rows();
  const Index k = w.cols();
  Eigen::HouseholderQR<Matrix> qr(w);
  const Matrix& packed = qr.matrixQR();
  double rmax = 0.0;
  for (Index j = 0; j < k; ++j) rmax = std::max(rmax, std::abs(packed(j, j)));
  Matrix q = qr.householderQ() * Matrix::Identity(d, k);
  for (Index j = 0; j < k; ++j) {
    const double r = packed(j, j);
    if (!(std::abs(r) > 1e-12 * std::max(rmax, 1e-300)) || !std::isfinite(r)) {
      throw RankDeficiencyError("QR: matrix is rank deficient");
    }
    if (r < 0) q.col(j) = -q.col(j);
  }
  return StiefelPoint(std::move(q));
}

StiefelPoint qr_retract(const StiefelPoint& u, const TangentVector& delta) {
  check_base(u, delta.matrix(), "qr_retract");
  return qr_orthonormalize(u.matrix() + delta.matrix());
}

PolarFactors polar_decompose(const Matrix& w) {
  if (w.cols() < 1 || w.rows() < w.cols()) {
    throw ShapeError("polar_decompose: need 1 <= k <= d");
  }
  Eigen::JacobiSVD<Matrix> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& s = svd.singularValues();  // descending
  if (!s.allFinite()) throw NumericalError("polar_decompose: non-finite input");
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  if (!(smin > 1e-12 * smax) || smax == 0.0) {
    throw RankDeficiencyError("polar_decompose: matrix is rank deficient");
  }
  PolarFactors out;
  out.q = svd.matrixU() * svd.matrixV().transpose();
  out.p_eigvals = s.reverse();
  out.p_eigvecs = svd.matrixV().rowwise().reverse();
  out.p = svd.matrixV() * s.asDiagonal() * svd.matrixV().transpose();
  return out;
}

StiefelPoint polar_project(const Matrix& w) {
  return StiefelPoint(polar_decompose(w).q);
}

std::pair<TangentVector, NormalVector> normal_decompose(const StiefelPoint& u,
                                                        const Matrix& x) {
  check_base(u, x, "normal_decompose");
  const Matrix& um = u.matrix();
  Matrix s = sym(um.transpose() * x);
  Matrix xt = x - um * s;
  return {TangentVector(u, std::move(xt)), NormalVector(u, std::move(s))};
}

TangentBasis::TangentBasis(const StiefelPoint& base)
    : base_(base), m_(manifold_dim(base.d(), base.k())) {
  const Index d = base_.d();
  const Index k = base_.k();
  const Matrix& u = base_.matrix();
  Eigen::HouseholderQR<Matrix> qr(u);
  const Matrix full = qr.householderQ() * Matrix::Identity(d, d);
  u_perp_ = full.rightCols(d - k);

  vectors_.reserve(static_cast<std::size_t>(m_));
  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) {
      Matrix e(d, k);
      e.setZero();
      e.col(j) += u.col(i) / std::numbers::sqrt2;
      e.col(i) -= u.col(j) / std::numbers::sqrt2;
      vectors_.emplace_back(base_, std::move(e));
    }
  }
  for (Index a = 0; a < d - k; ++a) {
    for (Index b = 0; b < k; ++b) {
      Matrix e = Matrix::Zero(d, k);
      e.col(b) = u_perp_.col(a);
      vectors_.emplace_back(base_, std::move(e));
    }
  }
}

Vector TangentBasis::coordinates(const Matrix& x) const {
  require_shape(x, base_.d(), base_.k(), "TangentBasis::coordinates");
  const Index k = base_.k();
  const Matrix a = base_.matrix().transpose() * x;
  const Matrix b = u_perp_.transpose() * x;
  Vector z(m_);
  Index t = 0;
  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) {
      z(t++) = (a(i, j) - a(j, i)) / std::numbers::sqrt2;
    }
  }
  for (Index r = 0; r < b.rows(); ++r) {
    for (Index c = 0; c < k; ++c) z(t++) = b(r, c);
  }
  return z;
}

Matrix TangentBasis::expand(const Vector& z) const {
  if (z.size() != m_) throw ShapeError("TangentBasis::expand: wrong length");
  const Index k = base_.k();
  Matrix skew = Matrix::Zero(k, k);
  Index t = 0;
  for (Index i = 0; i < k; ++i) {
    for (Index j = i + 1; j < k; ++j) {
      skew(i, j) = z(t) / std::numbers::sqrt2;
      skew(j, i) = -z(t) / std::numbers::sqrt2;
      ++t;
    }
  }
  Matrix b(u_perp_.cols(), k);
  for (Index r = 0; r < b.rows(); ++r) {
    for (Index c = 0; c < k; ++c) b(r, c) = z(t++);
  }
  return base_.matrix() * skew + u_perp_ * b;
}

TangentBasis tangent_basis(const StiefelPoint& u) { return TangentBasis(u); }

StiefelPoint haar_sample(Index d, Index k, Rng& rng) {
  if (k < 1 || k > d) throw ShapeError("haar_sample: need 1 <= k <= d");
  return qr_orthonormalize(rng.normal_matrix(d, k));
}

double log_multivariate_gamma(Index k, double a) {
  double out = 0.25 * static_cast<double>(k * (k - 1)) * std::log(std::numbers::pi);
  for (Index j = 0; j < k; ++j) out += std::lgamma(a - 0.5 * static_cast<double>(j));
  return out;
}

double log_stiefel_volume(Index d, Index k) {
  manifold_dim(d, k);
  const double kd = static_cast<double>(k);
  return 0.25 * kd * (kd - 1.0) * std::log(2.0) + kd * std::log(2.0) +
         0.5 * static_cast<double>(d) * kd * std::log(std::numbers::pi) -
         log_multivariate_gamma(k, 0.5 * static_cast<double>(d));
}

}  // namespace sba
