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

#include "sba/experiment.hpp"

#include <cmath>
#include <numbers>
#include <set>

namespace sba {
namespace {

constexpr std::uint64_t kStreamModel = 100;
constexpr std::uint64_t kStreamHessian = 101;
constexpr std::uint64_t kStreamTeacher = 102;
constexpr std::uint64_t kStreamSbaSamples = 103;
constexpr std::uint64_t kStreamGaussSamples = 104;

std::uint64_t train_seed(const ExperimentConfig& c, std::uint64_t seed) {
  return splitmix64(c.train.seed ^ splitmix64(seed));
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::kMapOnly: return "map_only";
    case Method::kSba: return "sba";
    case Method::kGaussProj: return "gauss_proj";
    case Method::kDeepEnsemble: return "deep_ensemble";
    case Method::kSbaDistilled: return "sba_distilled";
  }
  return "sba";
}

Method method_from_string(const std::string& s) {
  if (s == "map_only") return Method::kMapOnly;
  if (s == "sba") return Method::kSba;
  if (s == "gauss_proj") return Method::kGaussProj;
  if (s == "deep_ensemble") return Method::kDeepEnsemble;
  if (s == "sba_distilled") return Method::kSbaDistilled;
  throw ConfigError("unknown method '" + s +
                    "' (expected map_only|sba|gauss_proj|deep_ensemble|sba_distilled)");
}

void ExperimentConfig::validate() const {
  data.validate();
  prior.validate();
  train.validate();
  distill.validate();
  if (model.d_in != data.d_in) throw ConfigError("model.d_in must equal data.d_in");
  if (model.n_classes != data.n_classes) {
    throw ConfigError("model.n_classes must equal data.n_classes");
  }
  if (samples < 1) throw ConfigError("samples: must be >= 1");
  if (method == Method::kDeepEnsemble && ensemble_size < 2) {
    throw ConfigError("ensemble_size: must be >= 2 for deep_ensemble");
  }
  if (seeds.empty()) throw ConfigError("seeds: must list at least one seed");
  if (ece_bins < 1) throw ConfigError("ece_bins: must be >= 1");
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

Json config_to_json(const ExperimentConfig& c) {
  Json seeds = Json::array();
  for (auto s : c.seeds) seeds.push_back(s);
  Json ratios = Json::array();
  for (double r : c.klgap.normal_ratios) ratios.push_back(r);
  Json nd = Json::array(), nk = Json::array(), nkap = Json::array();
  for (auto v : c.normalizer.d) nd.push_back(v);
  for (auto v : c.normalizer.k) nk.push_back(v);
  for (auto v : c.normalizer.kappa0) nkap.push_back(v);
  return Json{{"data", data_spec_to_json(c.data)},
              {"model", arch_to_json(c.model)},
              {"prior", prior_to_json(c.prior)},
              {"train", train_to_json(c.train)},
              {"method", to_string(c.method)},
              {"samples", c.samples},
              {"ensemble_size", c.ensemble_size},
              {"distill", distill_to_json(c.distill)},
              {"seeds", seeds},
              {"components", c.components.to_string()},
              {"selective_score", to_string(c.selective_score)},
              {"ece_bins", c.ece_bins},
              {"klgap",
               {{"d", c.klgap.d},
                {"k", c.klgap.k},
                {"kappa", c.klgap.kappa},
                {"n_mc", c.klgap.n_mc},
                {"seed", c.klgap.seed},
                {"tangent_scale", c.klgap.tangent_scale},
                {"normal_ratios", ratios},
                {"importance_draws", c.klgap.importance_draws}}},
              {"normalizer",
               {{"d", nd},
                {"k", nk},
                {"kappa0", nkap},
                {"n_mc", c.normalizer.n_mc},
                {"seed", c.normalizer.seed},
                {"include_zero_row", c.normalizer.include_zero_row}}}};
}

ExperimentConfig config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config: expected an object");
  ExperimentConfig c;
  static const std::set<std::string> known = {
      "data", "model", "prior", "train", "method", "samples", "ensemble_size",
      "distill", "seeds", "components", "selective_score", "ece_bins", "klgap",
      "normalizer"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key())) throw ConfigError(it.key() + ": unknown field");
  }
  auto scalar = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::decay_t<decltype(out)>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string(key) + ": " + e.what());
    }
  };
  if (j.contains("data")) c.data = data_spec_from_json(j.at("data"), "data");
  if (j.contains("model")) c.model = arch_from_json(j.at("model"), "model");
  // The model input width and class count follow the data unless given.
  if (!j.contains("model") || !j.at("model").contains("d_in")) c.model.d_in = c.data.d_in;
  if (!j.contains("model") || !j.at("model").contains("n_classes")) {
    c.model.n_classes = c.data.n_classes;
  }
  if (!j.contains("model") || !j.at("model").contains("hidden")) c.model.hidden = c.data.d_in;
  if (j.contains("prior")) c.prior = prior_from_json(j.at("prior"), "prior");
  if (j.contains("train")) c.train = train_from_json(j.at("train"), "train");
  if (j.contains("distill")) c.distill = distill_from_json(j.at("distill"), "distill");
  std::string method = to_string(c.method);
  scalar("method", method);
  try {
    c.method = method_from_string(method);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("method: ") + e.what());
  }
  scalar("samples", c.samples);
  scalar("ensemble_size", c.ensemble_size);
  scalar("seeds", c.seeds);
  std::string comps = c.components.to_string();
  scalar("components", comps);
  try {
    c.components = BayesianComponents::from_string(comps);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("components: ") + e.what());
  }
  std::string score = to_string(c.selective_score);
  scalar("selective_score", score);
  try {
    c.selective_score = uncertainty_score_from_string(score);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("selective_score: ") + e.what());
  }
  scalar("ece_bins", c.ece_bins);
  if (j.contains("klgap")) {
    const Json& k = j.at("klgap");
    static const std::set<std::string> kk = {"d", "k", "kappa", "n_mc", "seed",
                                             "tangent_scale", "normal_ratios",
                                             "importance_draws"};
    for (auto it = k.begin(); it != k.end(); ++it) {
      if (!kk.count(it.key())) throw ConfigError("klgap." + it.key() + ": unknown field");
    }
    try {
      if (k.contains("d")) c.klgap.d = k.at("d").get<Index>();
      if (k.contains("k")) c.klgap.k = k.at("k").get<Index>();
      if (k.contains("kappa")) c.klgap.kappa = k.at("kappa").get<double>();
      if (k.contains("n_mc")) c.klgap.n_mc = k.at("n_mc").get<long>();
      if (k.contains("seed")) c.klgap.seed = k.at("seed").get<std::uint64_t>();
      if (k.contains("tangent_scale")) c.klgap.tangent_scale = k.at("tangent_scale").get<double>();
      if (k.contains("normal_ratios")) c.klgap.normal_ratios = k.at("normal_ratios").get<std::vector<double>>();
      if (k.contains("importance_draws")) c.klgap.importance_draws = k.at("importance_draws").get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("klgap: ") + e.what());
    }
  }
  if (j.contains("normalizer")) {
    const Json& n = j.at("normalizer");
    static const std::set<std::string> nk = {"d", "k", "kappa0", "n_mc", "seed",
                                             "include_zero_row"};
    for (auto it = n.begin(); it != n.end(); ++it) {
      if (!nk.count(it.key())) throw ConfigError("normalizer." + it.key() + ": unknown field");
    }
    try {
      if (n.contains("d")) c.normalizer.d = n.at("d").get<std::vector<Index>>();
      if (n.contains("k")) c.normalizer.k = n.at("k").get<std::vector<Index>>();
      if (n.contains("kappa0")) c.normalizer.kappa0 = n.at("kappa0").get<std::vector<double>>();
      if (n.contains("n_mc")) c.normalizer.n_mc = n.at("n_mc").get<long>();
      if (n.contains("seed")) c.normalizer.seed = n.at("seed").get<std::uint64_t>();
      if (n.contains("include_zero_row")) c.normalizer.include_zero_row = n.at("include_zero_row").get<bool>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("normalizer: ") + e.what());
    }
  }
  c.validate();
  return c;
}

std::string config_hash(const ExperimentConfig& c) {
  return fnv1a_hex(config_to_json(c).dump());
}

Dataset dataset_for_seed(const ExperimentConfig& c, std::uint64_t seed) {
  DataSpec spec = c.data;
  spec.seed = c.data.seed + seed;
  return generate(spec);
}

TrainedModel init_model(const ExperimentConfig& c, std::uint64_t seed,
                        AdapterSet* init) {
  c.validate();
  TrainedModel m;
  m.method = c.method;
  m.seed = seed;
  Rng rng = Rng(seed).split(kStreamModel);
  m.base = make_base_model(c.model, rng);
  m.spec = make_model_spec(m.base, c.model.rank, c.prior, rng, init);
  return m;
}

TrainedModel train_model(const ExperimentConfig& c, std::uint64_t seed,
                         const Dataset& data) {
  AdapterSet init;
  TrainedModel m = init_model(c, seed, &init);
  TrainConfig tc = c.train;
  tc.seed = train_seed(c, seed);
  if (c.method == Method::kDeepEnsemble) {
    m.ensemble = deep_ensemble(m.base, m.spec, data.train, tc, c.ensemble_size);
    m.map = m.ensemble.front();
    return m;
  }
  MapResult map = riemannian_map(m.base, m.spec, data.train, tc, init);
  m.map = std::move(map.params);
  m.trace = std::move(map.trace);
  if (c.method == Method::kMapOnly) return m;

  Rng hrng = Rng(seed).split(kStreamHessian);
  const LabeledBatch subset = hessian_subset(data.train, c.train.hessian_points, hrng);
  const double scale = static_cast<double>(data.train.size()) /
                       static_cast<double>(std::max<Index>(subset.size(), 1));
  if (c.method == Method::kGaussProj) {
    m.ambient = ambient_hessian(m.base, m.spec, subset, m.map, scale);
    return m;
  }
  m.laplace = tangent_hessian(m.base, m.spec, subset, m.map, c.train.hessian_mode, scale);
  if (c.method == Method::kSbaDistilled) m.student = distill_student(m, c, data);
  return m;
}

AdapterSet distill_student(const TrainedModel& teacher, const ExperimentConfig& c,
                           const Dataset& data) {
  if (!teacher.laplace) throw ConfigError("distill: teacher has no Laplace posterior");
  Rng trng = Rng(teacher.seed).split(kStreamTeacher);
  const PosteriorSampleSet draws =
      laplace_sample(*teacher.laplace, c.samples, trng, c.components);
  DistillConfig dc = c.distill;
  dc.seed = splitmix64(c.distill.seed ^ splitmix64(teacher.seed + 1));
  return distill(teacher.base, draws, teacher.map, data.train, dc).params;
}

PosteriorSampleSet prediction_samples(const TrainedModel& m,
                                      const ExperimentConfig& c,
                                      std::optional<BayesianComponents> components,
                                      std::optional<int> samples) {
  const int s = samples.value_or(c.samples);
  PosteriorSampleSet out;
  switch (m.method) {
    case Method::kMapOnly:
      out.samples.push_back(m.map);
      return out;
    case Method::kSba: {
      if (!m.laplace) throw ConfigError("sba model has no Laplace posterior");
      Rng rng = Rng(m.seed).split(kStreamSbaSamples);
      return laplace_sample(*m.laplace, s, rng, components.value_or(c.components));
    }
    case Method::kGaussProj: {
      if (!m.ambient) throw ConfigError("gauss_proj model has no ambient posterior");
      Rng rng = Rng(m.seed).split(kStreamGaussSamples);
      return gauss_proj_sample(*m.ambient, s, rng);
    }
    case Method::kDeepEnsemble:
      out.samples = m.ensemble;
      return out;
    case Method::kSbaDistilled:
      if (!m.student) throw ConfigError("sba_distilled model has no student");
      out.samples.push_back(*m.student);
      return out;
  }
  return out;
}

SplitMetrics evaluate_split(const BaseModel& base, const PosteriorSampleSet& samples,
                            const LabeledBatch& split, const ExperimentConfig& c) {
  if (split.size() == 0) throw ConfigError("evaluation split is empty");
  const std::vector<Matrix> per = per_sample_predictions(base, samples, split.inputs);
  Matrix mean = Matrix::Zero(split.size(), base.n_classes());
  for (const auto& p : per) mean += p;
  mean /= static_cast<double>(per.size());
  const std::vector<PredictionRecord> recs = make_records(mean, split.labels, &per);
  SplitMetrics sm;
  sm.calibration = ece(recs, c.ece_bins);
  sm.ece = sm.calibration.ece;
  sm.brier = sm.calibration.brier;
  sm.nll = sm.calibration.nll;
  sm.accuracy = accuracy(recs);
  double conf = 0.0;
  for (const auto& r : recs) conf += confidence(r.probs);
  sm.mean_confidence = conf / static_cast<double>(recs.size());
  const std::vector<double> unc = uncertainty_scores(recs, c.selective_score);
  const std::vector<bool> correct = correctness(recs);
  try {
    sm.selective_auroc = selective_auroc(unc, correct);
  } catch (const DegenerateInputError&) {
    sm.selective_auroc.reset();
  }
  std::vector<double> tot, al, ep;
  for (const auto& r : recs) {
    const UncertaintyDecomposition u = decompose_uncertainty(*r.per_sample_probs);
    tot.push_back(u.total);
    al.push_back(u.aleatoric);
    ep.push_back(u.epistemic);
  }
  sm.total_entropy = mean_of(tot);
  sm.aleatoric = mean_of(al);
  sm.epistemic = mean_of(ep);
  sm.epistemic_fraction = sm.total_entropy > 0.0 ? sm.epistemic / sm.total_entropy : 0.0;
  sm.coverage = accuracy_coverage(unc, correct);
  sm.accuracy_at_80 = sm.coverage[80].second;
  sm.accuracy_at_50 = sm.coverage[50].second;
  return sm;
}

EvalReport evaluate(const BaseModel& base, const PosteriorSampleSet& samples,
                    const Dataset& data, const ExperimentConfig& c) {
  EvalReport r;
  r.id = evaluate_split(base, samples, data.test_id, c);
  r.shift = evaluate_split(base, samples, data.test_shift, c);
  auto entropies = [&](const Matrix& x) {
    const Matrix p = predictive(base, samples, x);
    std::vector<double> h;
    for (Index i = 0; i < p.rows(); ++i) h.push_back(entropy(p.row(i).transpose()));
    return h;
  };
  const std::vector<double> h_id = entropies(data.test_id.inputs);
  const std::vector<double> h_ood = entropies(data.test_ood);
  r.ood_auroc = ood_auroc(h_id, h_ood);
  r.ood_mean_entropy = mean_of(h_ood);
  return r;
}

std::map<std::string, double> scalar_metrics(const EvalReport& r) {
  std::map<std::string, double> out;
  auto add = [&](const std::string& p, const SplitMetrics& s) {
    out[p + ".accuracy"] = s.accuracy;
    out[p + ".mean_confidence"] = s.mean_confidence;
    out[p + ".ece"] = s.ece;
    out[p + ".brier"] = s.brier;
    out[p + ".nll"] = s.nll;
    if (s.selective_auroc) out[p + ".selective_auroc"] = *s.selective_auroc;
    out[p + ".total_entropy"] = s.total_entropy;
    out[p + ".aleatoric"] = s.aleatoric;
    out[p + ".epistemic"] = s.epistemic;
    out[p + ".epistemic_fraction"] = s.epistemic_fraction;
    out[p + ".accuracy_at_80"] = s.accuracy_at_80;
    out[p + ".accuracy_at_50"] = s.accuracy_at_50;
  };
  add("id", r.id);
  add("shift", r.shift);
  out["ood.auroc"] = r.ood_auroc;
  out["ood.mean_entropy"] = r.ood_mean_entropy;
  return out;
}

Json eval_to_json(const EvalReport& r) {
  Json j = Json::object();
  for (const auto& [k, v] : scalar_metrics(r)) j[k] = v;
  return j;
}

Json aggregate(const std::vector<std::map<std::string, double>>& per_seed) {
  Json mean = Json::object(), sd = Json::object();
  if (per_seed.empty()) return Json{{"n_seeds", 0}, {"mean", mean}, {"std", sd}};
  for (const auto& [key, unused] : per_seed.front()) {
    (void)unused;
    std::vector<double> vals;
    for (const auto& m : per_seed) {
      auto it = m.find(key);
      if (it != m.end()) vals.push_back(it->second);
    }
    if (vals.size() != per_seed.size()) continue;
    const double mu = mean_of(vals);
    double ss = 0.0;
    for (double v : vals) ss += (v - mu) * (v - mu);
    mean[key] = mu;
    sd[key] = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
  }
  return Json{{"n_seeds", per_seed.size()}, {"mean", mean}, {"std", sd}};
}

std::vector<std::string> benchmark_variants() {
  return {"map_only", "sba", "gauss_proj", "sba_distilled", "sba[u+v]", "sba[sigma]"};
}

BenchmarkSeed run_benchmark_seed(const ExperimentConfig& c, std::uint64_t seed) {
  const Dataset data = dataset_for_seed(c, seed);
  ExperimentConfig cs = c;
  cs.method = Method::kSbaDistilled;
  TrainedModel m = train_model(cs, seed, data);
  BenchmarkSeed out;
  out.seed = seed;

  TrainedModel map_model = m;
  map_model.method = Method::kMapOnly;
  out.reports["map_only"] = evaluate(m.base, prediction_samples(map_model, c), data, c);

  TrainedModel sba = m;
  sba.method = Method::kSba;
  out.reports["sba"] = evaluate(m.base, prediction_samples(sba, c), data, c);
  out.reports["sba[u+v]"] = evaluate(
      m.base, prediction_samples(sba, c, BayesianComponents{true, false, true}), data, c);
  out.reports["sba[sigma]"] = evaluate(
      m.base, prediction_samples(sba, c, BayesianComponents{false, true, false}), data, c);

  TrainedModel student = m;
  out.reports["sba_distilled"] = evaluate(m.base, prediction_samples(student, c), data, c);

  Rng hrng = Rng(seed).split(kStreamHessian);
  const LabeledBatch subset = hessian_subset(data.train, c.train.hessian_points, hrng);
  const double scale = static_cast<double>(data.train.size()) /
                       static_cast<double>(std::max<Index>(subset.size(), 1));
  TrainedModel gp = m;
  gp.method = Method::kGaussProj;
  gp.ambient = ambient_hessian(m.base, m.spec, subset, m.map, scale);
  out.reports["gauss_proj"] = evaluate(m.base, prediction_samples(gp, c), data, c);
  return out;
}

Json checkpoint_to_json(const TrainedModel& m, const ExperimentConfig& c) {
  Json priors_u = Json::array(), priors_v = Json::array();
  for (const auto& p : m.spec.priors_u) priors_u.push_back(matrix_to_json(p.f()));
  for (const auto& p : m.spec.priors_v) priors_v.push_back(matrix_to_json(p.f()));
  Json j{{"format", "sba-checkpoint"},
         {"version", kCheckpointVersion},
         {"method", to_string(m.method)},
         {"seed", m.seed},
         {"config", config_to_json(c)},
         {"base", base_model_to_json(m.base)},
         {"priors", {{"u", priors_u}, {"v", priors_v}, {"config", prior_to_json(m.spec.prior)}}},
         {"map", adapters_to_json(m.map)}};
  if (m.laplace) {
    Json layers = Json::array();
    for (std::size_t l = 0; l < m.laplace->precision.size(); ++l) {
      layers.push_back(Json{{"precision", matrix_to_json(m.laplace->precision[l])},
                            {"damping", m.laplace->damping[l]}});
    }
    j["laplace"] = Json{{"hessian_mode", to_string(m.laplace->mode)}, {"layers", layers}};
  }
  if (m.ambient) {
    Json layers = Json::array();
    for (std::size_t l = 0; l < m.ambient->mean.size(); ++l) {
      const AmbientAdapter& a = m.ambient->mean[l];
      layers.push_back(Json{{"u", matrix_to_json(a.u)},
                            {"sigma", vector_to_json(a.sigma)},
                            {"v", matrix_to_json(a.v)},
                            {"covariance_factor", matrix_to_json(m.ambient->covariance_factor[l])},
                            {"damping", m.ambient->damping[l]}});
    }
    j["ambient"] = Json{{"layers", layers}};
  }
  if (!m.ensemble.empty()) {
    Json members = Json::array();
    for (const auto& e : m.ensemble) members.push_back(adapters_to_json(e));
    j["ensemble"] = members;
  }
  if (m.student) j["student"] = adapters_to_json(*m.student);
  return j;
}

TrainedModel checkpoint_from_json(const Json& j, ExperimentConfig* config_out) {
  try {
    if (j.at("format").get<std::string>() != "sba-checkpoint") {
      throw ConfigError("checkpoint: unrecognized format");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    }
    const ExperimentConfig c = config_from_json(j.at("config"));
    if (config_out) *config_out = c;
    TrainedModel m;
    m.method = method_from_string(j.at("method").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.base = base_model_from_json(j.at("base"), "base");
    m.spec.prior = prior_from_json(j.at("priors").at("config"), "priors.config");
    for (const auto& f : j.at("priors").at("u")) m.spec.priors_u.emplace_back(matrix_from_json(f, "priors.u"));
    for (const auto& f : j.at("priors").at("v")) m.spec.priors_v.emplace_back(matrix_from_json(f, "priors.v"));
    m.map = adapters_from_json(j.at("map"), "map");
    if (j.contains("laplace")) {
      LaplacePosterior post;
      post.map_params = m.map;
      post.mode = hessian_mode_from_string(j.at("laplace").at("hessian_mode").get<std::string>());
      const Json& layers = j.at("laplace").at("layers");
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const AdapterLayer& a = m.map.at(l);
        post.bases_u.emplace_back(a.u);
        post.bases_v.emplace_back(a.v);
        post.layout.push_back({manifold_dim(a.u.d(), a.u.k()), manifold_dim(a.v.d(), a.v.k()),
                               a.sigma.size()});
        post.precision.push_back(matrix_from_json(layers[l].at("precision"), "laplace.precision"));
        post.damping.push_back(layers[l].at("damping").get<double>());
        if (post.precision.back().rows() != post.layout.back().size()) {
          throw ConfigError("checkpoint: precision size does not match the tangent layout");
        }
      }
      m.laplace = std::move(post);
    }
    if (j.contains("ambient")) {
      AmbientGaussianPosterior post;
      for (const auto& l : j.at("ambient").at("layers")) {
        post.mean.push_back({matrix_from_json(l.at("u"), "ambient.u"),
                             vector_from_json(l.at("sigma"), "ambient.sigma"),
                             matrix_from_json(l.at("v"), "ambient.v")});
        post.covariance_factor.push_back(matrix_from_json(l.at("covariance_factor"), "ambient.covariance_factor"));
        post.damping.push_back(l.at("damping").get<double>());
      }
      m.ambient = std::move(post);
    }
    if (j.contains("ensemble")) {
      for (const auto& e : j.at("ensemble")) m.ensemble.push_back(adapters_from_json(e, "ensemble"));
    }
    if (j.contains("student")) m.student = adapters_from_json(j.at("student"), "student");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: ") + e.what());
  }
}

std::optional<double> normalizer_tolerance(Index d) {
  if (d >= 128) return 0.005;
  if (d == 64) return 0.02;
  return std::nullopt;
}

std::vector<NormalizerRow> validate_normalizer(const NormalizerGrid& grid, int workers) {
  if (grid.d.empty() || grid.k.empty()) throw ConfigError("normalizer: empty grid");
  if (grid.n_mc < 1) throw ConfigError("normalizer.n_mc must be >= 1");
  std::vector<double> kappas = grid.kappa0;
  if (grid.include_zero_row) kappas.insert(kappas.begin(), 0.0);
  std::vector<NormalizerRow> rows;
  for (Index d : grid.d) {
    for (Index k : grid.k) {
      if (k < 1 || k > d) throw ConfigError("normalizer: need 1 <= k <= d");
      for (double kappa : kappas) {
        if (!(kappa >= 0.0)) throw ConfigError("normalizer.kappa0 must be >= 0");
        Matrix f = Matrix::Zero(d, k);
        f.topRows(k) = kappa * Matrix::Identity(k, k);
        // Same stream for every kappa at a given (d, k).
        Rng rng = Rng(grid.seed).split(static_cast<std::uint64_t>(d * 1000 + k));
        const McEstimate mc = ml_log_normalizer_mc_sharded(f, grid.n_mc, rng, 8, workers);
        NormalizerRow r;
        r.d = d;
        r.k = k;
        r.kappa0 = kappa;
        r.log_mc = mc.estimate;
        r.mc_stderr = mc.std_error;
        r.log_saddlepoint = ml_log_normalizer_saddlepoint(f);
        r.rel_error = std::abs(std::expm1(r.log_saddlepoint - r.log_mc));
        r.tolerance = normalizer_tolerance(d);
        if (kappa == 0.0) {
          r.passed = r.log_mc == 0.0 && r.log_saddlepoint == 0.0;
        } else if (r.tolerance) {
          r.passed = r.rel_error < *r.tolerance;
        }
        rows.push_back(r);
      }
    }
  }
  return rows;
}

Json normalizer_row_to_json(const NormalizerRow& r) {
  Json j{{"d", r.d},
         {"k", r.k},
         {"kappa0", r.kappa0},
         {"log_mc", r.log_mc},
         {"mc_stderr", r.mc_stderr},
         {"log_saddlepoint", r.log_saddlepoint},
         {"rel_error", r.rel_error}};
  j["tolerance"] = r.tolerance ? Json(*r.tolerance) : Json(nullptr);
  j["passed"] = r.passed;
  return j;
}

Json kl_gap_to_json(const KLGapResult& r) {
  return Json{{"d", r.d},
              {"k", r.k},
              {"kappa", r.kappa},
              {"trace_sigma_t", r.trace_sigma_t},
              {"trace_sigma_n", r.trace_sigma_n},
              {"kl_tang", r.kl_tang},
              {"kl_tang_stderr", r.kl_tang_stderr},
              {"kl_proj", r.kl_proj},
              {"kl_proj_stderr", r.kl_proj_stderr},
              {"gap", r.gap},
              {"stderr", r.mc_stderr},
              {"n_mc", r.n_mc},
              {"importance_draws", r.importance_draws},
              {"seed", r.seed}};
}

std::string to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::kKappa0: return "kappa0";
    case AblationAxis::kSamples: return "samples";
    case AblationAxis::kRank: return "rank";
    case AblationAxis::kComponents: return "components";
  }
  return "kappa0";
}

AblationAxis ablation_axis_from_string(const std::string& s) {
  if (s == "kappa0") return AblationAxis::kKappa0;
  if (s == "samples") return AblationAxis::kSamples;
  if (s == "rank") return AblationAxis::kRank;
  if (s == "components") return AblationAxis::kComponents;
  throw ConfigError("unknown ablation axis '" + s + "' (expected kappa0|samples|rank|components)");
}

std::vector<std::string> default_ablation_grid(AblationAxis a) {
  switch (a) {
    case AblationAxis::kKappa0: return {"0.1", "0.5", "1", "2", "5"};
    case AblationAxis::kSamples: return {"1", "2", "5", "10", "20", "50"};
    case AblationAxis::kRank: return {"1", "2", "4", "8"};
    case AblationAxis::kComponents: return {"none", "sigma", "u", "u+v", "u+sigma+v"};
  }
  return {};
}

ExperimentConfig ablation_config(const ExperimentConfig& c, AblationAxis axis,
                                 const std::string& value) {
  ExperimentConfig out = c;
  out.method = Method::kSba;
  auto number = [&]() {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size()) {
      throw ConfigError(to_string(axis) + ": grid value '" + value + "' is not a number");
    }
    return v;
  };
  auto integer = [&]() {
    const double v = number();
    if (v != std::floor(v)) {
      throw ConfigError(to_string(axis) + ": grid value '" + value + "' is not an integer");
    }
    return static_cast<int>(v);
  };
  switch (axis) {
    case AblationAxis::kKappa0: out.prior.kappa0 = number(); break;
    case AblationAxis::kSamples: out.samples = integer(); break;
    case AblationAxis::kRank: out.model.rank = integer(); break;
    case AblationAxis::kComponents:
      out.components = BayesianComponents::from_string(value);
      break;
  }
  out.validate();
  if (out.model.rank < 1 || out.model.rank > std::min(out.model.d_in, out.model.hidden)) {
    throw ConfigError("rank: grid value out of range");
  }
  return out;
}

}  // namespace sba
