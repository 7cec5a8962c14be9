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

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "cmss/datasets.hpp"
#include "cmss/networks.hpp"
#include "cmss/random.hpp"
#include "cmss/tensor.hpp"

namespace cmss::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cmss") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// 2-d input, one hidden tanh layer of 4, linear discriminator, 2 classes:
// 12 + 10 + 5 + 17 = 44 parameters.
inline ArchitectureSpec toy_spec() {
  ArchitectureSpec spec;
  spec.preset = Preset::kMlpSynth;
  spec.input = InputShape{2, 1, 1};
  spec.n_classes = 2;
  spec.feature_widths = {4};
  spec.discriminator_hidden = 0;
  spec.activation = Activation::kTanh;
  return spec;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

// Toy bundle whose G head is randomized so curriculum gradients are nonzero.
inline ModelBundle toy_bundle(std::uint64_t seed, bool randomize_head = true) {
  ModelBundle b = init_parameters(toy_spec(), seed);
  if (randomize_head) {
    Rng rng(derive_seed(seed, 99));
    auto params = b.curriculum.parameters();
    Parameter& head_w = params[params.size() - 2];
    Parameter& head_b = params.back();
    *head_w.value = random_matrix(head_w.value->rows(), head_w.value->cols(), rng, 0.8);
    *head_b.value = random_matrix(head_b.value->rows(), head_b.value->cols(), rng, 0.8);
  }
  return b;
}

inline Batch toy_batch(std::uint64_t seed, std::size_t ns = 5, std::size_t nt = 4, int n_classes = 2) {
  Rng rng(seed);
  Batch b;
  b.source_inputs = random_matrix(static_cast<Eigen::Index>(ns), 2, rng);
  b.target_inputs = random_matrix(static_cast<Eigen::Index>(nt), 2, rng);
  for (std::size_t i = 0; i < ns; ++i) {
    b.source_labels.push_back(static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n_classes))));
    b.source_ids.push_back(i);
  }
  for (std::size_t i = 0; i < nt; ++i) b.target_ids.push_back(ns + i);
  return b;
}

// Flattened copy of parameter values / gradients.
inline std::vector<double> flatten_values(const std::vector<Parameter>& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.value->data(), p.value->data() + p.value->size());
  return out;
}

inline std::vector<double> flatten_grads(const std::vector<Parameter>& params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.grad->data(), p.grad->data() + p.grad->size());
  return out;
}

// Central differences of f over every entry of the given parameters.
inline std::vector<double> numeric_gradient(const std::vector<Parameter>& params,
                                            const std::function<double()>& f, double eps = 1e-5) {
  std::vector<double> out;
  for (const auto& p : params) {
    for (Eigen::Index i = 0; i < p.value->size(); ++i) {
      double& v = p.value->data()[i];
      const double saved = v;
      v = saved + eps;
      const double up = f();
      v = saved - eps;
      const double down = f();
      v = saved;
      out.push_back((up - down) / (2.0 * eps));
    }
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

}  // namespace cmss::testing
