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

#include "cmss/optimizer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cmss/errors.hpp"

namespace cmss {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError(fmt::format("unknown optimizer '{}'", name));
}

void Optimizer::step(const std::vector<Parameter>& params) {
  ++steps_;
  const double lr = settings_.learning_rate;
  for (const auto& p : params) {
    auto [it, inserted] = first_.try_emplace(p.name, Matrix::Zero(p.value->rows(), p.value->cols()));
    Matrix& m = it->second;
    if (settings_.kind == OptimizerKind::kSgd) {
      m = settings_.momentum * m + *p.grad;
      *p.value -= lr * m;
      continue;
    }
    auto [jt, _] = second_.try_emplace(p.name, Matrix::Zero(p.value->rows(), p.value->cols()));
    Matrix& v = jt->second;
    m = settings_.beta1 * m + (1.0 - settings_.beta1) * *p.grad;
    v = settings_.beta2 * v + (1.0 - settings_.beta2) * p.grad->cwiseProduct(*p.grad);
    const double c1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(steps_));
    *p.value -= (lr * (m.array() / c1) / ((v.array() / c2).sqrt() + settings_.epsilon)).matrix();
  }
}

std::vector<NamedArray> Optimizer::export_state(const std::string& prefix) const {
  std::vector<NamedArray> out;
  for (const auto& [name, m] : first_) out.push_back({fmt::format("{}{}.m", prefix, name), m});
  for (const auto& [name, v] : second_) out.push_back({fmt::format("{}{}.v", prefix, name), v});
  return out;
}

void Optimizer::import_state(const std::string& prefix,
                             const std::map<std::string, const Matrix*>& arrays, long steps) {
  first_.clear();
  second_.clear();
  steps_ = steps;
  for (const auto& [key, value] : arrays) {
    if (key.rfind(prefix, 0) != 0) continue;
    const std::string rest = key.substr(prefix.size());
    if (rest.size() < 2) continue;
    const std::string slot = rest.substr(rest.size() - 2);
    const std::string param = rest.substr(0, rest.size() - 2);
    if (slot == ".m") first_[param] = *value;
    if (slot == ".v") second_[param] = *value;
  }
}

}  // namespace cmss
