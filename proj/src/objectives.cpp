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

#include "cmss/objectives.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cmss/errors.hpp"

namespace cmss {

double compute_lambda(double progress, double gamma) {
  if (!(progress >= 0.0 && progress <= 1.0)) {
    throw ConfigError(fmt::format("training progress {} outside [0, 1]", progress));
  }
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw ConfigError(fmt::format("gamma must be positive and finite, got {}", gamma));
  }
  return 2.0 / (1.0 + std::exp(-gamma * progress)) - 1.0;
}

WeightVector normalize_weights(const Vector& raw_scores) {
  if (raw_scores.size() == 0) throw ConfigError("cannot normalize weights of an empty batch");
  if (!raw_scores.allFinite()) throw DivergenceError("curriculum scores are not finite", -1);
  const double n = static_cast<double>(raw_scores.size());
  Vector e = (raw_scores.array() - raw_scores.maxCoeff()).exp().matrix();
  WeightVector w;
  w.weights = e * (n / e.sum());
  w.raw = raw_scores;
  return w;
}

Vector normalize_weights_backward(const WeightVector& w, const Vector& grad_weights) {
  // w = N * softmax(raw)  =>  dL/draw_j = w_j * (g_j - mean_i(w_i g_i)).
  const double n = static_cast<double>(w.weights.size());
  const double weighted = w.weights.dot(grad_weights) / n;
  return (w.weights.array() * (grad_weights.array() - weighted)).matrix();
}

double log_sigmoid(double z) {
  return -(std::max(-z, 0.0) + std::log1p(std::exp(-std::abs(z))));
}

namespace {

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

ClassificationLoss loss_cls(const Matrix& class_logits, std::span<const int> labels) {
  const Eigen::Index n = class_logits.rows();
  const Eigen::Index k = class_logits.cols();
  if (static_cast<std::size_t>(n) != labels.size()) {
    throw ArtifactError(fmt::format("{} logit rows but {} labels", n, labels.size()));
  }
  if (n == 0) throw ArtifactError("classification loss of an empty batch");
  ClassificationLoss out{0.0, Matrix(n, k)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw ArtifactError(fmt::format("label {} outside [0, {})", y, k));
    const double m = class_logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (class_logits.row(i).array() - m).exp().matrix();
    const double sum = e.sum();
    out.value += -(class_logits(i, y) - m - std::log(sum));
    out.grad_logits.row(i) = e / sum;
    out.grad_logits(i, y) -= 1.0;
  }
  out.value /= static_cast<double>(n);
  out.grad_logits /= static_cast<double>(n);
  return out;
}

namespace {

void check_weights(const Vector& logits_s, const WeightVector& w) {
  if (w.weights.size() != logits_s.size()) {
    throw ArtifactError(fmt::format("{} weights for {} source samples", w.weights.size(),
                                    logits_s.size()));
  }
}

// Target half of the domain loss: -(1/N_t) sum log(1 - D_t).
double target_term(const Vector& logits_t, Vector& grad_t) {
  const auto nt = static_cast<double>(logits_t.size());
  double value = 0.0;
  grad_t.resize(logits_t.size());
  for (Eigen::Index j = 0; j < logits_t.size(); ++j) {
    value -= log_sigmoid(-logits_t(j));
    grad_t(j) = sigmoid_scalar(logits_t(j)) / nt;
  }
  return value / nt;
}

}  // namespace

DomainLoss loss_dom(const Vector& disc_logits_s, const Vector& disc_logits_t) {
  if (disc_logits_s.size() == 0 || disc_logits_t.size() == 0) {
    throw ArtifactError("domain loss needs source and target samples");
  }
  const auto ns = static_cast<double>(disc_logits_s.size());
  DomainLoss out{0.0, Vector(disc_logits_s.size()), Vector(), Vector()};
  double source = 0.0;
  for (Eigen::Index i = 0; i < disc_logits_s.size(); ++i) {
    source -= log_sigmoid(disc_logits_s(i));
    out.grad_source(i) = -sigmoid_scalar(-disc_logits_s(i)) / ns;
  }
  out.value = source / ns + target_term(disc_logits_t, out.grad_target);
  return out;
}

DomainLoss loss_wdom(const Vector& disc_logits_s, const Vector& disc_logits_t,
                     const WeightVector& w) {
  check_weights(disc_logits_s, w);
  if (disc_logits_s.size() == 0 || disc_logits_t.size() == 0) {
    throw ArtifactError("domain loss needs source and target samples");
  }
  const auto ns = static_cast<double>(disc_logits_s.size());
  DomainLoss out{0.0, Vector(disc_logits_s.size()), Vector(), Vector(disc_logits_s.size())};
  double source = 0.0;
  for (Eigen::Index i = 0; i < disc_logits_s.size(); ++i) {
    const double log_d = log_sigmoid(disc_logits_s(i));
    source -= w.weights(i) * log_d;
    out.grad_source(i) = -w.weights(i) * sigmoid_scalar(-disc_logits_s(i)) / ns;
    out.grad_weights(i) = -log_d / ns;
  }
  out.value = source / ns + target_term(disc_logits_t, out.grad_target);
  return out;
}

CurriculumObjective cmss_objective(const Vector& disc_logits_s, const WeightVector& w) {
  check_weights(disc_logits_s, w);
  if (disc_logits_s.size() == 0) throw ArtifactError("curriculum objective of an empty batch");
  const auto ns = static_cast<double>(disc_logits_s.size());
  CurriculumObjective out{0.0, Vector(disc_logits_s.size()), Vector(disc_logits_s.size())};
  for (Eigen::Index i = 0; i < disc_logits_s.size(); ++i) {
    const double log_d = log_sigmoid(disc_logits_s(i));
    out.value += w.weights(i) * log_d;
    out.grad_weights(i) = log_d / ns;
    out.grad_source(i) = w.weights(i) * sigmoid_scalar(-disc_logits_s(i)) / ns;
  }
  out.value /= ns;
  return out;
}

Vector logit(const Vector& probabilities) {
  return (probabilities.array().log() - (-probabilities.array()).log1p()).matrix();
}

}  // namespace cmss
