// Copyright 2026 The CMSS Authors. All Rights Reserved.
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

#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmss/layers.hpp"
#include "cmss/networks.hpp"

namespace cmss {

enum class OptimizerKind { kSgd, kAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& name);

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// One optimizer per parameter group. SGD uses the heavy-ball form
// v <- mu v + g, p <- p - lr v; Adam is the bias-corrected variant.
class Optimizer {
 public:
  explicit Optimizer(OptimizerSettings settings) : settings_(settings) {}

  void step(const std::vector<Parameter>& params);

  const OptimizerSettings& settings() const { return settings_; }
  long steps() const { return steps_; }

  // Slot arrays keyed "<param>.<slot>", for checkpointing.
  std::vector<NamedArray> export_state(const std::string& prefix) const;
  void import_state(const std::string& prefix, const std::map<std::string, const Matrix*>& arrays,
                    long steps);

 private:
  OptimizerSettings settings_;
  long steps_ = 0;
  std::map<std::string, Matrix> first_;
  std::map<std::string, Matrix> second_;
};

}  // namespace cmss
