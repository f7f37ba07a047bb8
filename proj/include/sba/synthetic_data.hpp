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

#ifndef SBA_SYNTHETIC_DATA_HPP_
#define SBA_SYNTHETIC_DATA_HPP_

#include <cstdint>
#include <string>

#include "sba/adapter_model.hpp"
#include "sba/common.hpp"

namespace sba {

enum class OodMode { kFar, kNear };

std::string to_string(OodMode m);
OodMode ood_mode_from_string(const std::string& s);

// Gaussian class clusters in a random orthonormal frame (e_1, ..., e_d).
// Class means sit on a circle of radius class_sep in the (e_1, e_2) plane
// with isotropic in-plane noise `noise`; the remaining directions carry
// `background_noise`. The shifted domain rotates the means by shift_angle in
// the (e_1, e_3) plane, i.e. towards a direction the training inputs barely
// vary along.
struct DataSpec {
  Index n_train = 2000;
  Index n_test = 1000;
  Index d_in = 32;
  Index n_classes = 3;
  double class_sep = 2.0;
  double noise = 1.0;
  double background_noise = 0.1;
  double shift_angle = 1.4;
  OodMode ood_mode = OodMode::kFar;
  double far_distance = 6.0;  // far-OOD translation along e_4, in units of class_sep
  std::uint64_t seed = 0;

  void validate() const;
};

struct Dataset {
  LabeledBatch train;
  LabeledBatch test_id;
  LabeledBatch test_shift;
  Matrix test_ood;  // unlabeled
};

Dataset generate(const DataSpec& spec);

// Text cache: first line "# " + spec JSON, second line the column header,
// then one row per example: split,label,x_0,...,x_{d-1}. Values are written
// with 17 significant digits so reloading is bit-exact.
void write_dataset_cache(const std::string& path, const DataSpec& spec,
                         const Dataset& data);
Dataset read_dataset_cache(const std::string& path, DataSpec* spec_out = nullptr);

bool datasets_equal(const Dataset& a, const Dataset& b);

}  // namespace sba

#endif  // SBA_SYNTHETIC_DATA_HPP_
