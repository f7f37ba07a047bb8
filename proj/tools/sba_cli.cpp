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

// sba: command line harness for training, evaluation, ablations and the
// geometric and normalizer checks.

#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "sba/experiment.hpp"

namespace fs = std::filesystem;
using namespace sba;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitVerification = 4;

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "sba_out";
  int workers = 1;
  std::string format = "json";
};

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results keep index
// order; an exception in one item is stored and does not stop the others.
template <typename T>
std::vector<T> parallel_map(std::size_t n, int workers,
                            const std::function<T(std::size_t)>& fn,
                            std::vector<std::exception_ptr>* errors) {
  std::vector<T> out(n);
  errors->assign(n, nullptr);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        out[i] = fn(i);
      } catch (...) {
        (*errors)[i] = std::current_exception();
      }
    }
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  if (w == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < w; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return out;
}

void rethrow_first(const std::vector<std::exception_ptr>& errors) {
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string error_message(const std::exception_ptr& e) {
  try {
    std::rethrow_exception(e);
  } catch (const std::exception& ex) {
    return ex.what();
  } catch (...) {
    return "unknown error";
  }
}

void flatten(const Json& j, const std::string& prefix, std::vector<std::pair<std::string, Json>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
    }
  } else if (j.is_array()) {
    out.emplace_back(prefix, Json(j.dump()));
  } else {
    out.emplace_back(prefix, j);
  }
}

std::string csv_cell(const Json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    std::string s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
  return v.dump();
}

// Collects result records and writes them once, in order.
class Collector {
 public:
  Collector(const GlobalOptions& g, std::string name, const ExperimentConfig& c)
      : g_(g), name_(std::move(name)), config_(config_to_json(c)), hash_(config_hash(c)) {}

  void add(Json record) {
    record["config_hash"] = hash_;
    records_.push_back(std::move(record));
  }

  const std::string& hash() const { return hash_; }

  void write() const {
    std::ostringstream os;
    if (g_.format == "csv") {
      os << "# config " << config_.dump() << "\n";
      std::vector<std::string> keys;
      std::vector<std::vector<std::pair<std::string, Json>>> rows;
      for (const auto& r : records_) {
        rows.emplace_back();
        flatten(r, "", rows.back());
        for (const auto& [k, v] : rows.back()) {
          (void)v;
          if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
        }
      }
      for (std::size_t i = 0; i < keys.size(); ++i) os << (i ? "," : "") << keys[i];
      os << "\n";
      for (const auto& row : rows) {
        for (std::size_t i = 0; i < keys.size(); ++i) {
          if (i) os << ",";
          for (const auto& [k, v] : row) {
            if (k == keys[i]) {
              os << csv_cell(v);
              break;
            }
          }
        }
        os << "\n";
      }
    } else {
      os << Json{{"kind", "config"}, {"config_hash", hash_}, {"config", config_}}.dump() << "\n";
      for (const auto& r : records_) os << r.dump() << "\n";
    }
    const std::string text = os.str();
    write_text_file((fs::path(g_.out_dir) / (name_ + "." + g_.format)).string(), text);
    std::cout << text;
  }

 private:
  const GlobalOptions& g_;
  std::string name_;
  Json config_;
  std::string hash_;
  std::vector<Json> records_;
};

ExperimentConfig load_config(const GlobalOptions& g) {
  ExperimentConfig c = g.config_path.empty() ? default_config()
                                             : config_from_json(read_json_file(g.config_path));
  if (g.seed) c.seeds = {*g.seed};
  c.validate();
  return c;
}

void write_run_info(const GlobalOptions& g, const std::string& command,
                    const std::string& hash, const std::vector<std::string>& argv) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  Json args = Json::array();
  for (const auto& a : argv) args.push_back(a);
  const Json info{{"command", command}, {"argv", args}, {"config_hash", hash}, {"timestamp", buf}};
  write_text_file((fs::path(g.out_dir) / ("run_info_" + command + ".json")).string(),
                  info.dump(2) + "\n");
}

std::string run_tag(Method m, std::uint64_t seed) {
  return to_string(m) + "_seed" + std::to_string(seed);
}

std::string trace_csv(const std::vector<TraceRecord>& trace) {
  std::ostringstream os;
  os << "step,log_posterior,grad_norm\n";
  char line[96];
  for (const auto& t : trace) {
    std::snprintf(line, sizeof line, "%ld,%.17g,%.17g\n", t.step, t.log_posterior, t.grad_norm);
    os << line;
  }
  return os.str();
}

std::string coverage_csv(const std::vector<std::pair<double, double>>& curve) {
  std::ostringstream os;
  os << "coverage,accuracy\n";
  char line[64];
  for (const auto& [c, a] : curve) {
    std::snprintf(line, sizeof line, "%.17g,%.17g\n", c, a);
    os << line;
  }
  return os.str();
}

Json sigma_json(const AdapterSet& a) {
  Json out = Json::array();
  for (const auto& l : a) out.push_back(vector_to_json(l.sigma));
  return out;
}

void write_plot_files(const GlobalOptions& g, const std::string& tag, const EvalReport& r) {
  const fs::path dir(g.out_dir);
  write_text_file((dir / ("reliability_" + tag + "_id.csv")).string(), reliability_csv(r.id.calibration));
  write_text_file((dir / ("reliability_" + tag + "_shift.csv")).string(), reliability_csv(r.shift.calibration));
  write_text_file((dir / ("coverage_" + tag + "_id.csv")).string(), coverage_csv(r.id.coverage));
  write_text_file((dir / ("coverage_" + tag + "_shift.csv")).string(), coverage_csv(r.shift.coverage));
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  Json record;
  std::map<std::string, double> metrics;
};

int cmd_train(const GlobalOptions& g, const std::vector<std::string>& argv) {
  const ExperimentConfig c = load_config(g);
  Collector col(g, "train", c);
  std::vector<std::exception_ptr> errors;
  auto results = parallel_map<Json>(c.seeds.size(), g.workers, [&](std::size_t i) {
    const std::uint64_t seed = c.seeds[i];
    const Dataset data = dataset_for_seed(c, seed);
    const TrainedModel m = train_model(c, seed, data);
    const std::string tag = run_tag(c.method, seed);
    write_text_file((fs::path(g.out_dir) / ("checkpoint_" + tag + ".json")).string(),
                    checkpoint_to_json(m, c).dump() + "\n");
    write_text_file((fs::path(g.out_dir) / ("trace_" + tag + ".csv")).string(), trace_csv(m.trace));
    Json r{{"kind", "seed"}, {"method", to_string(c.method)}, {"seed", seed},
           {"checkpoint", "checkpoint_" + tag + ".json"}, {"steps", m.trace.size()}};
    r["final_log_posterior"] = m.trace.empty() ? Json(nullptr) : Json(m.trace.back().log_posterior);
    r["map_sigma"] = sigma_json(m.map);
    if (m.laplace) {
      Json damping = Json::array();
      for (double d : m.laplace->damping) damping.push_back(d);
      r["laplace_damping"] = damping;
    }
    return r;
  }, &errors);
  rethrow_first(errors);
  for (auto& r : results) col.add(std::move(r));
  col.write();
  write_run_info(g, "train", col.hash(), argv);
  return kExitOk;
}

SeedOutcome eval_model(const GlobalOptions& g, const TrainedModel& m, const ExperimentConfig& c,
                       const Dataset& data) {
  const EvalReport r = evaluate(m.base, prediction_samples(m, c), data, c);
  write_plot_files(g, run_tag(m.method, m.seed), r);
  SeedOutcome o;
  o.seed = m.seed;
  o.metrics = scalar_metrics(r);
  o.record = Json{{"kind", "seed"}, {"method", to_string(m.method)}, {"seed", m.seed},
                  {"metrics", eval_to_json(r)}};
  return o;
}

int cmd_eval(const GlobalOptions& g, const std::vector<std::string>& checkpoints,
             const std::string& data_path, const std::vector<std::string>& argv) {
  ExperimentConfig c = load_config(g);
  std::optional<Dataset> cached;
  if (!data_path.empty()) cached = read_dataset_cache(data_path);
  std::vector<std::exception_ptr> errors;
  std::vector<SeedOutcome> outcomes;
  if (checkpoints.empty()) {
    outcomes = parallel_map<SeedOutcome>(c.seeds.size(), g.workers, [&](std::size_t i) {
      const Dataset data = cached ? *cached : dataset_for_seed(c, c.seeds[i]);
      return eval_model(g, train_model(c, c.seeds[i], data), c, data);
    }, &errors);
  } else {
    // The checkpoint's embedded config governs evaluation.
    std::vector<std::pair<TrainedModel, ExperimentConfig>> loaded;
    for (const auto& path : checkpoints) {
      ExperimentConfig cc;
      TrainedModel m = checkpoint_from_json(read_json_file(path), &cc);
      loaded.emplace_back(std::move(m), cc);
    }
    c = loaded.front().second;
    outcomes = parallel_map<SeedOutcome>(loaded.size(), g.workers, [&](std::size_t i) {
      const auto& [m, cc] = loaded[i];
      const Dataset data = cached ? *cached : dataset_for_seed(cc, m.seed);
      return eval_model(g, m, cc, data);
    }, &errors);
  }
  rethrow_first(errors);
  Collector col(g, "eval", c);
  std::vector<std::map<std::string, double>> per_seed;
  for (auto& o : outcomes) {
    per_seed.push_back(o.metrics);
    col.add(std::move(o.record));
  }
  Json agg{{"kind", "aggregate"}, {"method", to_string(c.method)}};
  agg.update(aggregate(per_seed));
  col.add(std::move(agg));
  col.write();
  write_run_info(g, "eval", col.hash(), argv);
  return kExitOk;
}

std::vector<std::string> split_grid(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_ablate(const GlobalOptions& g, const std::string& axis_name, const std::string& grid_text,
               const std::vector<std::string>& argv) {
  const ExperimentConfig c = load_config(g);
  const AblationAxis axis = ablation_axis_from_string(axis_name);
  const std::vector<std::string> grid =
      grid_text.empty() ? default_ablation_grid(axis) : split_grid(grid_text);
  if (grid.empty()) throw ConfigError("ablate: grid is empty");
  const std::size_t n = grid.size() * c.seeds.size();
  std::vector<std::exception_ptr> errors;
  auto results = parallel_map<SeedOutcome>(n, g.workers, [&](std::size_t i) {
    const std::string& value = grid[i / c.seeds.size()];
    const std::uint64_t seed = c.seeds[i % c.seeds.size()];
    const ExperimentConfig cp = ablation_config(c, axis, value);
    const Dataset data = dataset_for_seed(cp, seed);
    const TrainedModel m = train_model(cp, seed, data);
    const EvalReport r = evaluate(m.base, prediction_samples(m, cp), data, cp);
    SeedOutcome o;
    o.seed = seed;
    o.metrics = scalar_metrics(r);
    o.record = Json{{"kind", "seed"}, {"axis", to_string(axis)}, {"value", value},
                    {"seed", seed}, {"metrics", eval_to_json(r)}};
    return o;
  }, &errors);
  Collector col(g, "ablate_" + to_string(axis), c);
  bool any_failed = false;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    std::vector<std::map<std::string, double>> per_seed;
    for (std::size_t s = 0; s < c.seeds.size(); ++s) {
      const std::size_t i = p * c.seeds.size() + s;
      if (errors[i]) {
        any_failed = true;
        col.add(Json{{"kind", "error"}, {"axis", to_string(axis)}, {"value", grid[p]},
                     {"seed", c.seeds[s]}, {"error", error_message(errors[i])}});
        continue;
      }
      per_seed.push_back(results[i].metrics);
      col.add(std::move(results[i].record));
    }
    Json agg{{"kind", "aggregate"}, {"axis", to_string(axis)}, {"value", grid[p]}};
    agg.update(aggregate(per_seed));
    col.add(std::move(agg));
  }
  col.write();
  write_run_info(g, "ablate", col.hash(), argv);
  return any_failed ? kExitNumerical : kExitOk;
}

int cmd_klgap(const GlobalOptions& g, const std::vector<std::string>& argv) {
  const ExperimentConfig c = load_config(g);
  KLGapGrid grid = c.klgap;
  if (g.seed) grid.seed = *g.seed;
  const std::vector<KLGapResult> rows = run_kl_gap_grid(grid, g.workers);
  Collector col(g, "klgap", c);
  bool zero_ok = true, positive_ok = true, monotone = true;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const KLGapResult& r = rows[i];
    Json rec{{"kind", "point"}, {"normal_ratio", grid.normal_ratios[i]}};
    rec.update(kl_gap_to_json(r));
    col.add(std::move(rec));
    if (r.trace_sigma_n == 0.0) {
      zero_ok = zero_ok && std::abs(r.gap) <= 2.0 * r.mc_stderr;
    } else {
      positive_ok = positive_ok && r.gap > 3.0 * r.mc_stderr;
    }
    if (i > 0 && grid.normal_ratios[i] >= grid.normal_ratios[i - 1]) {
      monotone = monotone && r.gap >= rows[i - 1].gap;
    }
  }
  const bool passed = zero_ok && positive_ok && monotone;
  col.add(Json{{"kind", "summary"}, {"zero_row_within_2se", zero_ok},
               {"positive_rows_above_3se", positive_ok}, {"monotone", monotone},
               {"passed", passed}});
  col.write();
  write_run_info(g, "klgap", col.hash(), argv);
  return passed ? kExitOk : kExitVerification;
}

int cmd_verify_geometry(const GlobalOptions& g, long trials, bool negative_control,
                        const std::vector<std::string>& argv) {
  if (trials < 1) throw ConfigError("verify-geometry: --trials must be >= 1");
  const ExperimentConfig c = load_config(g);
  const std::uint64_t seed = g.seed.value_or(0);
  const ExpansionVariant v =
      negative_control ? ExpansionVariant::kCorruptedDelta : ExpansionVariant::kFull;
  const GeometrySuiteReport r = run_geometry_suite(trials, seed, v);
  Collector col(g, "verify_geometry", c);
  col.add(Json{{"kind", "report"},
               {"variant", r.variant},
               {"seed", seed},
               {"trials", r.trials},
               {"tangency_failures", r.tangency_failures},
               {"slope_failures", r.slope_failures},
               {"max_tangency_residual", r.max_tangency_residual},
               {"tangency_tolerance", kDeltaTangencyTol},
               {"min_slope", r.min_slope},
               {"max_slope", r.max_slope},
               {"slope_threshold", kExpansionSlopeMin},
               {"passed", r.passed()}});
  col.write();
  write_run_info(g, "verify-geometry", col.hash(), argv);
  return r.passed() ? kExitOk : kExitVerification;
}

int cmd_validate_normalizer(const GlobalOptions& g, const std::vector<std::string>& argv) {
  const ExperimentConfig c = load_config(g);
  NormalizerGrid grid = c.normalizer;
  if (g.seed) grid.seed = *g.seed;
  const std::vector<NormalizerRow> rows = validate_normalizer(grid, g.workers);
  Collector col(g, "validate_normalizer", c);
  bool passed = true;
  for (const auto& r : rows) {
    Json rec{{"kind", "point"}};
    rec.update(normalizer_row_to_json(r));
    col.add(std::move(rec));
    passed = passed && r.passed;
  }
  col.add(Json{{"kind", "summary"}, {"n_mc", grid.n_mc}, {"passed", passed}});
  col.write();
  write_run_info(g, "validate-normalizer", col.hash(), argv);
  return passed ? kExitOk : kExitVerification;
}

int cmd_distill(const GlobalOptions& g, const std::string& teacher_path,
                const std::vector<std::string>& argv) {
  ExperimentConfig c;
  TrainedModel teacher = checkpoint_from_json(read_json_file(teacher_path), &c);
  if (teacher.method != Method::kSba) {
    throw ConfigError("distill: teacher checkpoint has method " + to_string(teacher.method) +
                      ", expected sba");
  }
  if (!g.config_path.empty()) {
    // Only the distillation settings are taken from --config.
    c.distill = load_config(g).distill;
  }
  const Dataset data = dataset_for_seed(c, teacher.seed);
  TrainedModel student = teacher;
  student.method = Method::kSbaDistilled;
  student.student = distill_student(teacher, c, data);
  ExperimentConfig sc = c;
  sc.method = Method::kSbaDistilled;
  const std::string tag = run_tag(Method::kSbaDistilled, teacher.seed);
  write_text_file((fs::path(g.out_dir) / ("checkpoint_" + tag + ".json")).string(),
                  checkpoint_to_json(student, sc).dump() + "\n");

  TrainedModel map = teacher;
  map.method = Method::kMapOnly;
  const EvalReport r_map = evaluate(teacher.base, prediction_samples(map, c), data, c);
  const EvalReport r_sba = evaluate(teacher.base, prediction_samples(teacher, c), data, c);
  const EvalReport r_student = evaluate(teacher.base, prediction_samples(student, sc), data, c);
  write_plot_files(g, tag, r_student);
  Collector col(g, "distill", sc);
  const bool ordered = r_sba.shift.ece <= r_student.shift.ece && r_student.shift.ece <= r_map.shift.ece;
  col.add(Json{{"kind", "report"},
               {"seed", teacher.seed},
               {"student_checkpoint", "checkpoint_" + tag + ".json"},
               {"temperature", c.distill.temperature},
               {"epochs", c.distill.epochs},
               {"shift_ece", {{"map_only", r_map.shift.ece}, {"sba_distilled", r_student.shift.ece}, {"sba", r_sba.shift.ece}}},
               {"id_ece", {{"map_only", r_map.id.ece}, {"sba_distilled", r_student.id.ece}, {"sba", r_sba.id.ece}}},
               {"shift_ordering_holds", ordered},
               {"metrics", eval_to_json(r_student)}});
  col.write();
  write_run_info(g, "distill", col.hash(), argv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stiefel-manifold Bayesian adapters: training, evaluation and checks"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config_path, "Experiment config (JSON)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed_value, "Run only this seed");
  app.add_option("--out", g.out_dir, "Output directory");
  app.add_option("--workers", g.workers, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--format", g.format, "Result file format")->check(CLI::IsMember({"json", "csv"}));

  auto* train = app.add_subcommand("train", "Train the configured method and write checkpoints");
  auto* eval = app.add_subcommand("eval", "Evaluate checkpoints, or train and evaluate");
  std::vector<std::string> checkpoints;
  std::string data_path;
  eval->add_option("--checkpoint", checkpoints, "Checkpoint file(s)")->check(CLI::ExistingFile);
  eval->add_option("--data", data_path, "Dataset cache file")->check(CLI::ExistingFile);
  auto* ablate = app.add_subcommand("ablate", "Sweep one axis of the sba pipeline");
  std::string axis, grid;
  ablate->add_option("--axis", axis, "kappa0, samples, rank or components")
      ->required()
      ->check(CLI::IsMember({"kappa0", "samples", "rank", "components"}));
  ablate->add_option("--grid", grid, "Comma separated grid values");
  auto* klgap = app.add_subcommand("klgap", "Tangent versus projected KL gap grid");
  auto* vgeo = app.add_subcommand("verify-geometry", "Delta-term tangency and expansion checks");
  long trials = 1000;
  bool negative = false;
  vgeo->add_option("--trials", trials, "Random probes");
  vgeo->add_flag("--negative-control", negative, "Use a corrupted delta term");
  auto* vnorm = app.add_subcommand("validate-normalizer", "Saddle-point versus Monte Carlo normalizer");
  auto* dist = app.add_subcommand("distill", "Distill an sba checkpoint into a single adapter");
  std::string teacher;
  dist->add_option("--checkpoint", teacher, "Teacher sba checkpoint")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;
  const std::vector<std::string> args(argv, argv + argc);
  try {
    fs::create_directories(g.out_dir);
    if (*train) return cmd_train(g, args);
    if (*eval) return cmd_eval(g, checkpoints, data_path, args);
    if (*ablate) return cmd_ablate(g, axis, grid, args);
    if (*klgap) return cmd_klgap(g, args);
    if (*vgeo) return cmd_verify_geometry(g, trials, negative, args);
    if (*vnorm) return cmd_validate_normalizer(g, args);
    if (*dist) return cmd_distill(g, teacher, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
