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

#include "sba/io.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace sba {
namespace {

// Reads optional fields of one JSON object and rejects unknown keys.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const Json* raw(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string child(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError(path_ + "." + it.key() + ": unknown field");
      }
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename F>
auto wrap(const std::string& path, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace

Json matrix_to_json(const Matrix& m) {
  Json data = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const Json& j, const std::string& path) {
  try {
    const Index r = j.at("rows").get<Index>();
    const Index c = j.at("cols").get<Index>();
    const Json& data = j.at("data");
    if (!data.is_array() || static_cast<Index>(data.size()) != r * c) {
      throw ConfigError(path + ": data length does not match rows*cols");
    }
    Matrix m(r, c);
    for (Index i = 0; i < r; ++i) {
      for (Index k = 0; k < c; ++k) m(i, k) = data[static_cast<std::size_t>(i * c + k)].get<double>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vector vector_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  Vector v(static_cast<Index>(j.size()));
  try {
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = j[i].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return v;
}

Json data_spec_to_json(const DataSpec& s) {
  return Json{{"n_train", s.n_train},
              {"n_test", s.n_test},
              {"d_in", s.d_in},
              {"n_classes", s.n_classes},
              {"class_sep", s.class_sep},
              {"noise", s.noise},
              {"background_noise", s.background_noise},
              {"shift_angle", s.shift_angle},
              {"ood_mode", to_string(s.ood_mode)},
              {"far_distance", s.far_distance},
              {"seed", s.seed}};
}

DataSpec data_spec_from_json(const Json& j, const std::string& path) {
  DataSpec s;
  Fields f(j, path);
  f.get("n_train", s.n_train);
  f.get("n_test", s.n_test);
  f.get("d_in", s.d_in);
  f.get("n_classes", s.n_classes);
  f.get("class_sep", s.class_sep);
  f.get("noise", s.noise);
  f.get("background_noise", s.background_noise);
  f.get("shift_angle", s.shift_angle);
  std::string ood = to_string(s.ood_mode);
  f.get("ood_mode", ood);
  f.get("far_distance", s.far_distance);
  f.get("seed", s.seed);
  f.finish();
  wrap(path, [&] {
    s.ood_mode = ood_mode_from_string(ood);
    s.validate();
    return 0;
  });
  return s;
}

Json arch_to_json(const ArchitectureConfig& a) {
  return Json{{"d_in", a.d_in},
              {"hidden", a.hidden},
              {"n_classes", a.n_classes},
              {"rank", a.rank},
              {"activation", to_string(a.activation)},
              {"n_layers", a.n_layers},
              {"head_scale", a.head_scale}};
}

ArchitectureConfig arch_from_json(const Json& j, const std::string& path) {
  ArchitectureConfig a;
  Fields f(j, path);
  f.get("d_in", a.d_in);
  f.get("hidden", a.hidden);
  f.get("n_classes", a.n_classes);
  f.get("rank", a.rank);
  std::string act = to_string(a.activation);
  f.get("activation", act);
  f.get("n_layers", a.n_layers);
  f.get("head_scale", a.head_scale);
  f.finish();
  wrap(path, [&] {
    a.activation = activation_from_string(act);
    return 0;
  });
  if (a.rank < 1 || a.rank > std::min(a.d_in, a.hidden)) {
    throw ConfigError(path + ".rank: must be in [1, min(d_in, hidden)]");
  }
  if (a.n_classes < 2) throw ConfigError(path + ".n_classes: must be >= 2");
  if (a.n_layers < 1) throw ConfigError(path + ".n_layers: must be >= 1");
  return a;
}

Json prior_to_json(const PriorConfig& p) {
  return Json{{"kappa0", p.kappa0}, {"tau", p.tau}};
}

PriorConfig prior_from_json(const Json& j, const std::string& path) {
  PriorConfig p;
  Fields f(j, path);
  f.get("kappa0", p.kappa0);
  f.get("tau", p.tau);
  f.finish();
  wrap(path, [&] {
    p.validate();
    return 0;
  });
  return p;
}

Json train_to_json(const TrainConfig& t) {
  return Json{{"learning_rate", t.learning_rate},
              {"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"seed", t.seed},
              {"hessian_points", t.hessian_points},
              {"hessian_mode", to_string(t.hessian_mode)},
              {"momentum", t.momentum},
              {"final_lr_fraction", t.final_lr_fraction}};
}

TrainConfig train_from_json(const Json& j, const std::string& path) {
  TrainConfig t;
  Fields f(j, path);
  f.get("learning_rate", t.learning_rate);
  f.get("epochs", t.epochs);
  f.get("batch_size", t.batch_size);
  f.get("seed", t.seed);
  f.get("hessian_points", t.hessian_points);
  std::string mode = to_string(t.hessian_mode);
  f.get("hessian_mode", mode);
  f.get("momentum", t.momentum);
  f.get("final_lr_fraction", t.final_lr_fraction);
  f.finish();
  wrap(path, [&] {
    t.hessian_mode = hessian_mode_from_string(mode);
    t.validate();
    return 0;
  });
  return t;
}

Json distill_to_json(const DistillConfig& d) {
  return Json{{"temperature", d.temperature},
              {"epochs", d.epochs},
              {"learning_rate", d.learning_rate},
              {"batch_size", d.batch_size},
              {"seed", d.seed}};
}

DistillConfig distill_from_json(const Json& j, const std::string& path) {
  DistillConfig d;
  Fields f(j, path);
  f.get("temperature", d.temperature);
  f.get("epochs", d.epochs);
  f.get("learning_rate", d.learning_rate);
  f.get("batch_size", d.batch_size);
  f.get("seed", d.seed);
  f.finish();
  wrap(path, [&] {
    d.validate();
    return 0;
  });
  return d;
}

Json adapters_to_json(const AdapterSet& a) {
  Json arr = Json::array();
  for (const auto& l : a) {
    arr.push_back(Json{{"u", matrix_to_json(l.u.matrix())},
                       {"sigma", vector_to_json(l.sigma)},
                       {"v", matrix_to_json(l.v.matrix())}});
  }
  return arr;
}

AdapterSet adapters_from_json(const Json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array");
  AdapterSet out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string p = path + "[" + std::to_string(i) + "]";
    out.push_back(wrap(p, [&] {
      return AdapterLayer{StiefelPoint(matrix_from_json(j[i].at("u"), p + ".u")),
                          vector_from_json(j[i].at("sigma"), p + ".sigma"),
                          StiefelPoint(matrix_from_json(j[i].at("v"), p + ".v"))};
    }));
  }
  return out;
}

Json base_model_to_json(const BaseModel& b) {
  Json layers = Json::array();
  for (const auto& l : b.layers) {
    layers.push_back(Json{{"weight", matrix_to_json(l.weight)},
                          {"bias", vector_to_json(l.bias)},
                          {"activation", to_string(l.activation)}});
  }
  return Json{{"layers", std::move(layers)},
              {"head", matrix_to_json(b.head)},
              {"head_bias", vector_to_json(b.head_bias)}};
}

BaseModel base_model_from_json(const Json& j, const std::string& path) {
  BaseModel b;
  try {
    for (std::size_t i = 0; i < j.at("layers").size(); ++i) {
      const Json& l = j.at("layers")[i];
      const std::string p = path + ".layers[" + std::to_string(i) + "]";
      DenseLayer layer;
      layer.weight = matrix_from_json(l.at("weight"), p + ".weight");
      layer.bias = vector_from_json(l.at("bias"), p + ".bias");
      layer.activation = activation_from_string(l.at("activation").get<std::string>());
      b.layers.push_back(std::move(layer));
    }
    b.head = matrix_from_json(j.at("head"), path + ".head");
    b.head_bias = vector_from_json(j.at("head_bias"), path + ".head_bias");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  wrap(path, [&] {
    b.validate();
    return 0;
  });
  return b;
}

Json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path);
  try {
    return Json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + path);
  os << text;
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace sba
