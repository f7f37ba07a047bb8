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

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sba/experiment.hpp"

namespace py = pybind11;
using namespace sba;

namespace {

Matrix check_stiefel(const Matrix& u) { return StiefelPoint(u).matrix(); }

py::dict metrics_dict(const Matrix& probs, const std::vector<int>& labels, int n_bins) {
  Eigen::VectorXi y(static_cast<Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Index>(i)) = labels[i];
  const auto recs = make_records(probs, y);
  const CalibrationReport r = ece(recs, n_bins);
  py::dict d;
  d["accuracy"] = accuracy(recs);
  d["ece"] = r.ece;
  d["brier"] = r.brier;
  d["nll"] = r.nll;
  return d;
}

}  // namespace

PYBIND11_MODULE(_sba, m) {
  m.doc() = "Stiefel-manifold Bayesian adapters (C++ core)";

  // Translators run newest first, so the base class goes first.
  py::register_exception<Error>(m, "SbaError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("manifold_dim", &manifold_dim, py::arg("d"), py::arg("k"));
  m.def("haar_sample", [](Index d, Index k, std::uint64_t seed) {
    Rng rng(seed);
    return haar_sample(d, k, rng).matrix();
  }, py::arg("d"), py::arg("k"), py::arg("seed"));
  m.def("tangent_project", [](const Matrix& u, const Matrix& g) {
    return tangent_project(StiefelPoint(u), g).matrix();
  }, py::arg("u"), py::arg("g"));
  m.def("qr_retract", [](const Matrix& u, const Matrix& xi) {
    const StiefelPoint p(u);
    return qr_retract(p, TangentVector(p, xi)).matrix();
  }, py::arg("u"), py::arg("xi"));
  m.def("polar_project", [](const Matrix& w) { return polar_project(w).matrix(); }, py::arg("w"));
  m.def("check_stiefel", &check_stiefel, py::arg("u"));
  m.def("log_stiefel_volume", &log_stiefel_volume, py::arg("d"), py::arg("k"));

  m.def("log_normalizer_saddlepoint",
        py::overload_cast<const Matrix&>(&ml_log_normalizer_saddlepoint), py::arg("f"));
  m.def("log_normalizer_mc", [](const Matrix& f, long n, std::uint64_t seed) {
    Rng rng(seed);
    const McEstimate e = ml_log_normalizer_mc(f, n, rng);
    return py::make_tuple(e.estimate, e.std_error);
  }, py::arg("f"), py::arg("n"), py::arg("seed"));

  m.def("calibration", &metrics_dict, py::arg("probs"), py::arg("labels"),
        py::arg("n_bins") = kDefaultEceBins);
  m.def("auroc", &auroc, py::arg("positive"), py::arg("negative"));
  m.def("ood_auroc", &ood_auroc, py::arg("entropy_id"), py::arg("entropy_ood"));
  m.def("decompose_uncertainty", [](const Matrix& per_sample) {
    const UncertaintyDecomposition u = decompose_uncertainty(per_sample);
    return py::make_tuple(u.total, u.aleatoric, u.epistemic);
  }, py::arg("per_sample_probs"));

  m.def("generate_dataset", [](const std::string& spec_json) {
    const Dataset d = generate(data_spec_from_json(Json::parse(spec_json)));
    auto labels = [](const LabeledBatch& b) {
      return std::vector<int>(b.labels.data(), b.labels.data() + b.labels.size());
    };
    py::dict out;
    out["train_x"] = d.train.inputs;
    out["train_y"] = labels(d.train);
    out["test_id_x"] = d.test_id.inputs;
    out["test_id_y"] = labels(d.test_id);
    out["test_shift_x"] = d.test_shift.inputs;
    out["test_shift_y"] = labels(d.test_shift);
    out["test_ood_x"] = d.test_ood;
    return out;
  }, py::arg("spec_json"));

  m.def("run_geometry_suite", [](long trials, std::uint64_t seed, bool negative_control) {
    const GeometrySuiteReport r = run_geometry_suite(
        trials, seed,
        negative_control ? ExpansionVariant::kCorruptedDelta : ExpansionVariant::kFull);
    py::dict d;
    d["trials"] = r.trials;
    d["tangency_failures"] = r.tangency_failures;
    d["slope_failures"] = r.slope_failures;
    d["max_tangency_residual"] = r.max_tangency_residual;
    d["min_slope"] = r.min_slope;
    d["passed"] = r.passed();
    return d;
  }, py::arg("trials"), py::arg("seed") = 0, py::arg("negative_control") = false);

  m.def("default_config", [] { return config_to_json(default_config()).dump(); });
  m.def("normalize_config", [](const std::string& text) {
    return config_to_json(config_from_json(Json::parse(text))).dump();
  }, py::arg("config_json"));
  m.def("config_hash", [](const std::string& text) {
    return config_hash(config_from_json(Json::parse(text)));
  }, py::arg("config_json"));
  m.def("train_eval", [](const std::string& text, std::uint64_t seed) {
    const ExperimentConfig c = config_from_json(Json::parse(text));
    std::string out;
    {
      py::gil_scoped_release release;
      const Dataset data = dataset_for_seed(c, seed);
      const TrainedModel tm = train_model(c, seed, data);
      out = eval_to_json(evaluate(tm.base, prediction_samples(tm, c), data, c)).dump();
    }
    return out;
  }, py::arg("config_json"), py::arg("seed"));
}
