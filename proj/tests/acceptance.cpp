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

// Acceptance checks, one PASS/FAIL line per criterion. Arguments select a
// subset of criteria by number; no arguments runs all of them.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "sba/experiment.hpp"
#include "test_util.hpp"

#ifndef SBA_CLI_PATH
#define SBA_CLI_PATH "sba"
#endif

namespace sba {
namespace {

namespace fs = std::filesystem;

// Pinned tolerances.
constexpr double kOrthoTol = 1e-10;
constexpr double kGradRelTol = 1e-5;
constexpr double kCovZ = 5.5;  // entrywise z-score bound for the sample covariance
constexpr double kMetricTol = 1e-12;
constexpr double kDecompTol = 1e-10;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int workers() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

Outcome criterion_geometry() {
  const GeometrySuiteReport r = run_geometry_suite(1000, 0);
  Outcome o;
  o.pass = r.passed();
  o.detail = "trials=1000 min_slope=" + fmt("%.4f", r.min_slope) +
             " max_tangency=" + fmt("%.2e", r.max_tangency_residual) +
             " (need slope>=2.7, tangency<=1e-12)";
  return o;
}

Outcome criterion_normalizer() {
  NormalizerGrid g;
  g.d = {32, 64, 128};
  g.k = {4, 8};
  g.kappa0 = {0.1, 0.5, 1.0, 2.0, 5.0};
  g.n_mc = 1000000;
  const std::vector<NormalizerRow> rows = validate_normalizer(g, workers());
  Outcome o;
  double worst64 = 0.0, worst128 = 0.0;
  for (const auto& r : rows) {
    o.pass = o.pass && r.passed;
    if (r.d == 64) worst64 = std::max(worst64, r.rel_error);
    if (r.d == 128) worst128 = std::max(worst128, r.rel_error);
  }
  o.pass = o.pass && worst64 < 0.02 && worst128 < 0.005;
  o.detail = "rows=" + std::to_string(rows.size()) + " max_rel_err d=64: " + fmt("%.5f", worst64) +
             " (<0.02), d=128: " + fmt("%.5f", worst128) + " (<0.005)";
  return o;
}

Outcome criterion_kl_gap() {
  KLGapGrid g;  // d=16, k=3, kappa=50, 1e5 samples, ratios {0, 4, 6, 8}
  const std::vector<KLGapResult> rows = run_kl_gap_grid(g, workers());
  Outcome o;
  std::ostringstream os;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.trace_sigma_n == 0.0) {
      o.pass = o.pass && std::abs(r.gap) <= 2.0 * r.mc_stderr;
    } else {
      o.pass = o.pass && r.gap > 3.0 * r.mc_stderr;
    }
    if (i > 0) o.pass = o.pass && r.gap >= rows[i - 1].gap;
    os << " ratio=" << g.normal_ratios[i] << ":gap=" << fmt("%.4f", r.gap) << "+-"
       << fmt("%.4f", r.mc_stderr);
  }
  o.detail = "d=16 k=3 kappa=50 n=1e5" + os.str() +
             " (zero row within 2se, others >3se, non-decreasing)";
  return o;
}

Outcome criterion_inference() {
  Outcome o;
  // (a) and (b) on the default benchmark model.
  ExperimentConfig c = default_config();
  const Dataset data = dataset_for_seed(c, 0);
  ExperimentConfig cg = c;
  cg.method = Method::kGaussProj;
  const TrainedModel sba_model = train_model(c, 0, data);
  const TrainedModel gp_model = train_model(cg, 0, data);
  double worst_ortho = 0.0;
  Rng rng(1);
  for (const PosteriorSampleSet& set :
       {laplace_sample(*sba_model.laplace, 200, rng), gauss_proj_sample(*gp_model.ambient, 200, rng)}) {
    for (const auto& s : set.samples) {
      for (const auto& a : s) {
        worst_ortho = std::max({worst_ortho, StiefelPoint::orthonormality_error(a.u.matrix()),
                                StiefelPoint::orthonormality_error(a.v.matrix())});
      }
    }
  }
  const bool pass_a = worst_ortho <= kOrthoTol;

  const int n = 10000;
  const LaplacePosterior& post = *sba_model.laplace;
  const Matrix z = laplace_coordinate_draws(post, 0, n, rng);
  const Matrix target = post.precision[0].inverse();
  const Vector mean = z.rowwise().mean();
  const Matrix cen = z.colwise() - mean;
  const Matrix cov = cen * cen.transpose() / (n - 1);
  double worst_z = 0.0;
  for (Index i = 0; i < cov.rows(); ++i) {
    worst_z = std::max(worst_z, std::abs(mean(i)) / std::sqrt(target(i, i) / n));
    for (Index j = 0; j <= i; ++j) {
      const double sd = std::sqrt((target(i, i) * target(j, j) + target(i, j) * target(i, j)) / n);
      worst_z = std::max(worst_z, std::abs(cov(i, j) - target(i, j)) / sd);
    }
  }
  const bool pass_b = worst_z <= kCovZ;

  // (c) Gradients against central differences on 10 configurations.
  double worst_rel = 0.0;
  const Activation acts[2] = {Activation::kIdentity, Activation::kTanh};
  for (int cfg = 0; cfg < 10; ++cfg) {
    const Index d_in = 3 + cfg % 5, hidden = 4 + cfg % 3, classes = 2 + cfg % 3;
    const Index rank = 1 + cfg % std::min(d_in, hidden);
    testing::ToyProblem t = testing::make_toy(500 + cfg, d_in, hidden, classes, rank, 8,
                                              acts[cfg % 2], 1 + cfg % 3);
    Rng r(700 + cfg);
    const GradientSet g = grad_log_posterior(t.base, t.params, t.spec, t.batch, 1.3);
    auto objective = [&](const AmbientAdapterSet& amb) {
      const Matrix lp = log_softmax_rows(forward(t.base, amb, t.batch.inputs));
      double s = 0.0;
      for (Index i = 0; i < lp.rows(); ++i) s += 1.3 * lp(i, t.batch.labels(i));
      const double inv2 = 0.5 / (t.spec.prior.tau * t.spec.prior.tau);
      for (std::size_t l = 0; l < amb.size(); ++l) {
        s += t.spec.priors_u[l].f().cwiseProduct(amb[l].u).sum() +
             t.spec.priors_v[l].f().cwiseProduct(amb[l].v).sum() - inv2 * amb[l].sigma.squaredNorm();
      }
      return s;
    };
    const AmbientAdapterSet amb = to_ambient(t.params);
    const double h = 1e-6;
    for (std::size_t l = 0; l < amb.size(); ++l) {
      const Matrix du = r.normal_matrix(amb[l].u.rows(), amb[l].u.cols());
      const Vector ds = r.normal_vector(amb[l].sigma.size());
      const Matrix dv = r.normal_matrix(amb[l].v.rows(), amb[l].v.cols());
      AmbientAdapterSet p = amb, m = amb;
      p[l].u += h * du;
      p[l].sigma += h * ds;
      p[l].v += h * dv;
      m[l].u -= h * du;
      m[l].sigma -= h * ds;
      m[l].v -= h * dv;
      const double fd = (objective(p) - objective(m)) / (2 * h);
      const double an = g[l].u.cwiseProduct(du).sum() + g[l].sigma.dot(ds) + g[l].v.cwiseProduct(dv).sum();
      worst_rel = std::max(worst_rel, testing::rel_diff(fd, an, 1e-6));
    }
  }
  const bool pass_c = worst_rel <= kGradRelTol;
  o.pass = pass_a && pass_b && pass_c;
  o.detail = "(a) max ortho err=" + fmt("%.2e", worst_ortho) + " (<=1e-10); (b) max |z| of covariance/mean entries=" +
             fmt("%.2f", worst_z) + " over dim " + std::to_string(cov.rows()) + " (<=5.5); (c) max grad rel err=" +
             fmt("%.2e", worst_rel) + " (<=1e-5)";
  return o;
}

struct BenchmarkSummary {
  std::map<std::string, double> shift_ece;
  double frac_id = 0.0;
  double frac_shift = 0.0;
  bool done = false;
};

BenchmarkSummary& benchmark() {
  static BenchmarkSummary s;
  if (s.done) return s;
  const ExperimentConfig c = default_config();
  for (std::uint64_t seed : c.seeds) {
    const BenchmarkSeed b = run_benchmark_seed(c, seed);
    for (const auto& [name, rep] : b.reports) s.shift_ece[name] += rep.shift.ece / c.seeds.size();
    s.frac_id += b.reports.at("sba").id.epistemic_fraction / c.seeds.size();
    s.frac_shift += b.reports.at("sba").shift.epistemic_fraction / c.seeds.size();
  }
  s.done = true;
  return s;
}

Outcome criterion_calibration() {
  const BenchmarkSummary& b = benchmark();
  const auto& e = b.shift_ece;
  const double sba = e.at("sba"), gp = e.at("gauss_proj"), map = e.at("map_only");
  const double dist = e.at("sba_distilled"), uv = e.at("sba[u+v]"), sig = e.at("sba[sigma]");
  Outcome o;
  o.pass = sba < gp && gp < map && sba < dist && dist < map && uv <= sig;
  o.detail = "5-seed shift ECE: sba=" + fmt("%.4f", sba) + " gauss_proj=" + fmt("%.4f", gp) +
             " map=" + fmt("%.4f", map) + " distilled=" + fmt("%.4f", dist) + " u+v=" + fmt("%.4f", uv) +
             " sigma=" + fmt("%.4f", sig) + " (sba<gauss_proj<map, sba<distilled<map, u+v<=sigma)";
  return o;
}

PredictionRecord rec(std::vector<double> p, int label) {
  PredictionRecord r;
  r.probs = Eigen::Map<Vector>(p.data(), static_cast<Index>(p.size()));
  r.label = label;
  return r;
}

double pair_auroc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0.0;
  for (double a : pos) {
    for (double b : neg) s += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return s / (pos.size() * neg.size());
}

Outcome criterion_metrics() {
  std::vector<std::string> failed;
  auto check = [&](bool ok, const char* name) {
    if (!ok) failed.push_back(name);
  };
  auto near = [](double a, double b) { return std::abs(a - b) <= kMetricTol; };
  check(ece({rec({1, 0}, 0), rec({0, 1}, 1)}).ece == 0.0, "ece perfect");
  check(near(ece({rec({0.9, 0.1}, 0), rec({0.6, 0.4}, 1)}, 15).ece, 0.35), "ece two-record");
  check(brier({rec({0, 1}, 1)}) == 0.0, "brier perfect");
  check(near(brier({rec({0.5, 0.5}, 1)}), 0.5), "brier uniform");
  check(near(brier({rec({0.7, 0.1, 0.2}, 0), rec({0.5, 0.4, 0.1}, 1), rec({0.2, 0.2, 0.6}, 2)}), 1.0 / 3.0),
        "brier mixed");
  check(nll({rec({1, 0}, 0)}) == 0.0, "nll perfect");
  check(near(nll({rec({std::exp(-1.0), 1 - std::exp(-1.0)}, 0)}), 1.0), "nll 1/e");
  check(near(nll({rec({0.5, 0.5}, 0), rec({0.25, 0.75}, 1), rec({0.8, 0.2}, 1), rec({0.1, 0.9}, 0)}),
             -(std::log(0.5) + std::log(0.75) + std::log(0.2) + std::log(0.1)) / 4),
        "nll batch");
  check(selective_auroc({0.1, 0.9}, {true, false}) == 1.0, "selective separated");
  check(selective_auroc({0.3, 0.3, 0.3}, {true, false, true}) == 0.5, "selective ties");
  check(near(selective_auroc({0.2, 0.5, 0.5, 0.9, 0.1, 0.7}, {true, false, true, false, false, true}),
             pair_auroc({0.5, 0.9, 0.1}, {0.2, 0.5, 0.7})),
        "selective 6-element");
  check(ood_auroc({0.1, 0.2}, {0.5, 0.6}) == 1.0, "ood disjoint");
  const std::vector<double> id{0.1, 0.4, 0.4, 0.8, 0.3}, ood{0.4, 0.9, 0.2, 0.5, 0.05};
  check(near(ood_auroc(id, ood), pair_auroc(ood, id)), "ood 5+5");
  std::vector<double> u;
  std::vector<bool> c;
  for (int i = 0; i < 10; ++i) {
    u.push_back(0.1 * (9 - i));
    c.push_back(!(i == 1 || i == 6));
  }
  const auto curve = accuracy_coverage(u, c);
  check(near(curve[80].second, 7.0 / 8.0), "coverage 10-example");
  check(near(curve[100].second, 0.8), "coverage full");
  check(accuracy_coverage({0.1, 0.2, 0.9}, {true, true, false}, {2.0 / 3.0})[0].second == 1.0,
        "coverage perfect ranking");
  Matrix same(2, 3);
  same << 0.2, 0.3, 0.5, 0.2, 0.3, 0.5;
  check(near(decompose_uncertainty(same).epistemic, 0.0), "decompose identical");
  Matrix opp(2, 2);
  opp << 1, 0, 0, 1;
  const auto d2 = decompose_uncertainty(opp);
  check(near(d2.total, std::log(2.0)) && d2.aleatoric == 0.0 && near(d2.epistemic, std::log(2.0)),
        "decompose opposed");
  Rng rng(6);
  bool table_ok = true;
  for (int t = 0; t < 1000; ++t) {
    const Index s = 1 + static_cast<Index>(rng.next_u64() % 8);
    const Index cc = 2 + static_cast<Index>(rng.next_u64() % 5);
    Matrix p = (2.0 * rng.normal_matrix(s, cc)).array().exp();
    for (Index i = 0; i < s; ++i) p.row(i) /= p.row(i).sum();
    const auto dd = decompose_uncertainty(p);
    // Independent evaluation of the same quantities.
    const Eigen::RowVectorXd mean = p.colwise().mean();
    double total = 0.0, al = 0.0;
    for (Index j = 0; j < cc; ++j) total -= mean(j) * std::log(mean(j));
    for (Index i = 0; i < s; ++i) {
      for (Index j = 0; j < cc; ++j) al -= p(i, j) * std::log(p(i, j)) / static_cast<double>(s);
    }
    table_ok = table_ok && std::abs(dd.total - (dd.aleatoric + dd.epistemic)) <= kDecompTol &&
               dd.epistemic >= -1e-12 && std::abs(dd.total - total) <= kDecompTol &&
               std::abs(dd.aleatoric - al) <= kDecompTol;
  }
  check(table_ok, "decompose 1000 random tables");
  Outcome o;
  o.pass = failed.empty();
  o.detail = o.pass ? "all hand and brute-force oracles match; 1000 random tables satisfy the identity"
                    : "failed:";
  for (const auto& f : failed) o.detail += " [" + f + "]";
  return o;
}

Outcome criterion_epistemic() {
  const BenchmarkSummary& b = benchmark();
  Outcome o;
  o.pass = b.frac_shift > b.frac_id;
  o.detail = "5-seed sba epistemic fraction id=" + fmt("%.4f", b.frac_id) + " shift=" +
             fmt("%.4f", b.frac_shift) + " (shift > id)";
  return o;
}

std::map<std::string, std::string> read_payloads(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("run_info_", 0) == 0) continue;
    std::ifstream is(e.path(), std::ios::binary);
    out[name] = std::string(std::istreambuf_iterator<char>(is), {});
  }
  return out;
}

Outcome criterion_determinism() {
  const fs::path root = fs::temp_directory_path() / "sba_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  ExperimentConfig c = default_config();
  c.data.n_train = 400;
  c.data.n_test = 200;
  c.train.epochs = 5;
  c.samples = 4;
  c.seeds = {0, 1};
  c.klgap.d = 6;
  c.klgap.k = 2;
  c.klgap.n_mc = 1000;
  c.klgap.normal_ratios = {0.0, 8.0};
  c.klgap.importance_draws = 8;
  c.normalizer.d = {16};
  c.normalizer.k = {2};
  c.normalizer.kappa0 = {1.0};
  c.normalizer.n_mc = 2000;
  const fs::path cfg = root / "config.json";
  std::ofstream(cfg) << config_to_json(c).dump(2);

  const std::vector<std::string> commands = {
      "train", "eval", "ablate --axis samples --grid 1,2", "klgap", "verify-geometry --trials 50",
      "validate-normalizer"};
  Outcome o;
  int compared = 0;
  std::vector<std::string> diffs;
  for (const auto& sub : commands) {
    std::map<std::string, std::string> runs[2];
    for (int r = 0; r < 2; ++r) {
      const fs::path out = root / ("run" + std::to_string(r));
      fs::remove_all(out);
      const std::string cmd = std::string(SBA_CLI_PATH) + " --config " + cfg.string() + " --out " +
                              out.string() + " " + sub + " > " + (root / "stdout.txt").string() + " 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        diffs.push_back(sub + ": nonzero exit");
        break;
      }
      runs[r] = read_payloads(out);
    }
    if (runs[0] != runs[1] || runs[0].empty()) diffs.push_back(sub);
    compared += static_cast<int>(runs[0].size());
  }
  // Distill twice from one teacher checkpoint.
  const fs::path teacher = root / "teacher";
  std::map<std::string, std::string> druns[2];
  if (std::system((std::string(SBA_CLI_PATH) + " --config " + cfg.string() + " --out " +
                   teacher.string() + " --seed 0 train > /dev/null 2>&1")
                      .c_str()) != 0) {
    diffs.push_back("teacher train: nonzero exit");
  }
  for (int r = 0; r < 2; ++r) {
    const fs::path out = root / ("distill" + std::to_string(r));
    const std::string cmd = std::string(SBA_CLI_PATH) + " --config " + cfg.string() + " --out " +
                            out.string() + " distill --checkpoint " +
                            (teacher / "checkpoint_sba_seed0.json").string() + " > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) diffs.push_back("distill: nonzero exit");
    druns[r] = read_payloads(out);
  }
  if (druns[0] != druns[1] || druns[0].empty()) diffs.push_back("distill");
  compared += static_cast<int>(druns[0].size());
  fs::remove_all(root);
  o.pass = diffs.empty();
  o.detail = "subcommands train, eval, ablate, klgap, verify-geometry, validate-normalizer, distill run twice; " +
             std::to_string(compared) + " payload files compared byte for byte";
  for (const auto& d : diffs) o.detail += " [differs: " + d + "]";
  return o;
}

}  // namespace
}  // namespace sba

int main(int argc, char** argv) {
  using namespace sba;
  struct Criterion {
    std::string name;
    std::function<Outcome()> run;
    double max_seconds;
  };
  // Criterion 7 reuses the benchmark runs of criterion 5.
  const std::vector<Criterion> criteria = {
      {"geometry suite", criterion_geometry, 60},
      {"normalizer validation", criterion_normalizer, 600},
      {"tangent vs projected KL gap", criterion_kl_gap, 300},
      {"inference correctness", criterion_inference, 120},
      {"calibration ordering", criterion_calibration, 900},
      {"metric oracles", criterion_metrics, 10},
      {"epistemic shift ordering", criterion_epistemic, 900},
      {"determinism", criterion_determinism, 600},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > criteria[i].max_seconds) {
      o.pass = false;
      o.detail += " [runtime over " + std::to_string(static_cast<int>(criteria[i].max_seconds)) + "s]";
    }
    std::printf("%s criterion %d (%s): %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id,
                criteria[i].name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
