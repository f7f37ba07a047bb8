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

#include "sba/synthetic_data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "sba/io.hpp"
#include "sba/manifold.hpp"

namespace sba {
namespace {

Eigen::VectorXi balanced_labels(Index n, Index c, Rng& rng) {
  Eigen::VectorXi y(n);
  for (Index i = 0; i < n; ++i) y(i) = static_cast<int>(i % c);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
    std::swap(y(i), y(j));
  }
  return y;
}

struct Geometry {
  Matrix frame;      // d x d orthonormal, columns e_1..e_d
  Matrix means;      // C x d
  Vector scales;     // per-frame-direction noise scale
};

Geometry make_geometry(const DataSpec& spec) {
  Rng rng = Rng(spec.seed).split(1);
  Geometry g;
  g.frame = haar_sample(spec.d_in, spec.d_in, rng).matrix();
  g.means.resize(spec.n_classes, spec.d_in);
  for (Index c = 0; c < spec.n_classes; ++c) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(c) /
                     static_cast<double>(spec.n_classes);
    g.means.row(c) = spec.class_sep * (std::cos(a) * g.frame.col(0) +
                                       std::sin(a) * g.frame.col(1)).transpose();
  }
  g.scales = Vector::Constant(spec.d_in, spec.background_noise);
  g.scales(0) = spec.noise;
  g.scales(1) = spec.noise;
  return g;
}

Matrix noise_rows(const Geometry& g, Index n, Rng& rng) {
  Matrix z = rng.normal_matrix(n, g.frame.rows());
  return (z * g.scales.asDiagonal()) * g.frame.transpose();
}

LabeledBatch sample_split(const Geometry& g, const Matrix& means, Index n,
                          Index c, Rng& rng) {
  LabeledBatch b;
  b.labels = balanced_labels(n, c, rng);
  b.inputs = noise_rows(g, n, rng);
  for (Index i = 0; i < n; ++i) b.inputs.row(i) += means.row(b.labels(i));
  return b;
}

}  // namespace

std::string to_string(OodMode m) { return m == OodMode::kFar ? "far" : "near"; }

OodMode ood_mode_from_string(const std::string& s) {
  if (s == "far") return OodMode::kFar;
  if (s == "near") return OodMode::kNear;
  throw ConfigError("unknown ood_mode '" + s + "' (expected far|near)");
}

void DataSpec::validate() const {
  if (n_train < 1 || n_test < 1) throw ConfigError("data.n_train and data.n_test must be >= 1");
  if (d_in < 4) throw ConfigError("data.d_in must be >= 4");
  if (n_classes < 2) throw ConfigError("data.n_classes must be >= 2");
  if (!(class_sep > 0.0)) throw ConfigError("data.class_sep must be > 0");
  if (!(noise >= 0.0) || !(background_noise >= 0.0)) {
    throw ConfigError("data.noise and data.background_noise must be >= 0");
  }
  if (!(shift_angle >= 0.0 && shift_angle <= std::numbers::pi)) {
    throw ConfigError("data.shift_angle must be in [0, pi]");
  }
  if (!(far_distance > 0.0)) throw ConfigError("data.far_distance must be > 0");
}

Dataset generate(const DataSpec& spec) {
  spec.validate();
  const Geometry g = make_geometry(spec);
  const Rng root(spec.seed);
  Dataset out;
  Rng r_train = root.split(2);
  Rng r_id = root.split(3);
  Rng r_shift = root.split(4);
  Rng r_ood = root.split(5);
  out.train = sample_split(g, g.means, spec.n_train, spec.n_classes, r_train);
  out.test_id = sample_split(g, g.means, spec.n_test, spec.n_classes, r_id);

  // Rotation by shift_angle in the (e_1, e_3) plane.
  const Vector e1 = g.frame.col(0);
  const Vector e3 = g.frame.col(2);
  const double c = std::cos(spec.shift_angle);
  const double s = std::sin(spec.shift_angle);
  Matrix shifted = g.means;
  for (Index k = 0; k < shifted.rows(); ++k) {
    const Vector mu = g.means.row(k).transpose();
    const double a1 = mu.dot(e1);
    const double a3 = mu.dot(e3);
    const Vector rotated = mu + (c * a1 - s * a3 - a1) * e1 + (s * a1 + c * a3 - a3) * e3;
    shifted.row(k) = rotated.transpose();
  }
  out.test_shift = sample_split(g, shifted, spec.n_test, spec.n_classes, r_shift);

  out.test_ood = noise_rows(g, spec.n_test, r_ood);
  if (spec.ood_mode == OodMode::kFar) {
    const Vector center = spec.far_distance * spec.class_sep * g.frame.col(3);
    out.test_ood.rowwise() += center.transpose();
  } else {
    for (Index i = 0; i < spec.n_test; ++i) {
      const auto a = static_cast<Index>(r_ood.next_u64() % static_cast<std::uint64_t>(spec.n_classes));
      const auto off = static_cast<Index>(
          1 + r_ood.next_u64() % static_cast<std::uint64_t>(spec.n_classes - 1));
      const Index b = (a + off) % spec.n_classes;
      out.test_ood.row(i) += 0.5 * (g.means.row(a) + g.means.row(b));
    }
  }
  return out;
}

namespace {

void write_rows(std::ostream& os, const char* split, const Matrix& x,
                const Eigen::VectorXi* labels) {
  char buf[40];
  for (Index i = 0; i < x.rows(); ++i) {
    os << split << ',' << (labels ? (*labels)(i) : -1);
    for (Index j = 0; j < x.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", x(i, j));
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace

void write_dataset_cache(const std::string& path, const DataSpec& spec,
                         const Dataset& data) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write dataset cache: " + path);
  os << "# " << data_spec_to_json(spec).dump() << '\n';
  os << "split,label";
  for (Index j = 0; j < spec.d_in; ++j) os << ",x" << j;
  os << '\n';
  write_rows(os, "train", data.train.inputs, &data.train.labels);
  write_rows(os, "test_id", data.test_id.inputs, &data.test_id.labels);
  write_rows(os, "test_shift", data.test_shift.inputs, &data.test_shift.labels);
  write_rows(os, "test_ood", data.test_ood, nullptr);
}

Dataset read_dataset_cache(const std::string& path, DataSpec* spec_out) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read dataset cache: " + path);
  std::string line;
  std::getline(is, line);
  if (line.rfind("# ", 0) != 0) throw ConfigError("dataset cache: missing spec header");
  const DataSpec spec = data_spec_from_json(Json::parse(line.substr(2)));
  if (spec_out) *spec_out = spec;
  std::getline(is, line);  // column header
  std::vector<std::vector<double>> rows[4];
  std::vector<int> labels[4];
  const char* names[4] = {"train", "test_id", "test_shift", "test_ood"};
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');
    int which = -1;
    for (int t = 0; t < 4; ++t) {
      if (cell == names[t]) which = t;
    }
    if (which < 0) throw ConfigError("dataset cache: unknown split '" + cell + "'");
    std::getline(ss, cell, ',');
    labels[which].push_back(std::stoi(cell));
    std::vector<double> x;
    while (std::getline(ss, cell, ',')) x.push_back(std::strtod(cell.c_str(), nullptr));
    if (static_cast<Index>(x.size()) != spec.d_in) {
      throw ConfigError("dataset cache: row width does not match d_in");
    }
    rows[which].push_back(std::move(x));
  }
  auto to_matrix = [&](int t) {
    Matrix m(static_cast<Index>(rows[t].size()), spec.d_in);
    for (std::size_t i = 0; i < rows[t].size(); ++i) {
      for (Index j = 0; j < spec.d_in; ++j) m(static_cast<Index>(i), j) = rows[t][i][static_cast<std::size_t>(j)];
    }
    return m;
  };
  auto to_labels = [&](int t) {
    Eigen::VectorXi y(static_cast<Index>(labels[t].size()));
    for (std::size_t i = 0; i < labels[t].size(); ++i) y(static_cast<Index>(i)) = labels[t][i];
    return y;
  };
  Dataset d;
  d.train = {to_matrix(0), to_labels(0)};
  d.test_id = {to_matrix(1), to_labels(1)};
  d.test_shift = {to_matrix(2), to_labels(2)};
  d.test_ood = to_matrix(3);
  return d;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
  auto eq = [](const LabeledBatch& x, const LabeledBatch& y) {
    return x.inputs.rows() == y.inputs.rows() && x.inputs.cols() == y.inputs.cols() &&
           x.inputs == y.inputs && x.labels == y.labels;
  };
  return eq(a.train, b.train) && eq(a.test_id, b.test_id) &&
         eq(a.test_shift, b.test_shift) && a.test_ood.rows() == b.test_ood.rows() &&
         a.test_ood.cols() == b.test_ood.cols() && a.test_ood == b.test_ood;
}

}  // namespace sba
