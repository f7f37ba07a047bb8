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

#ifndef SBA_IO_HPP_
#define SBA_IO_HPP_

#include <string>

#include "json.hpp"
#include "sba/adapter_model.hpp"
#include "sba/common.hpp"
#include "sba/inference.hpp"
#include "sba/langevin.hpp"
#include "sba/synthetic_data.hpp"

namespace sba {

using Json = nlohmann::ordered_json;

// Matrices serialize as {"rows", "cols", "data"} with row-major data.
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j, const std::string& path);
Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j, const std::string& path);

// Config sections. Parsers fill defaults for absent keys and reject unknown
// keys; errors carry the JSON path of the offending field.
Json data_spec_to_json(const DataSpec& s);
DataSpec data_spec_from_json(const Json& j, const std::string& path = "data");
Json arch_to_json(const ArchitectureConfig& a);
ArchitectureConfig arch_from_json(const Json& j, const std::string& path = "model");
Json prior_to_json(const PriorConfig& p);
PriorConfig prior_from_json(const Json& j, const std::string& path = "prior");
Json train_to_json(const TrainConfig& t);
TrainConfig train_from_json(const Json& j, const std::string& path = "train");
Json distill_to_json(const DistillConfig& d);
DistillConfig distill_from_json(const Json& j, const std::string& path = "distill");

Json adapters_to_json(const AdapterSet& a);
AdapterSet adapters_from_json(const Json& j, const std::string& path);
Json base_model_to_json(const BaseModel& b);
BaseModel base_model_from_json(const Json& j, const std::string& path);

Json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

// 64-bit FNV-1a of a string, hex encoded.
std::string fnv1a_hex(const std::string& s);

}  // namespace sba

#endif  // SBA_IO_HPP_
