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

#include <span>

#include "cmss/tensor.hpp"

namespace cmss {

// Adversarial weight ramp: 2 / (1 + exp(-gamma * p)) - 1 for progress p in
// [0, 1]. Rises from 0 toward (but never reaching) 1.
double compute_lambda(double progress, double gamma);

inline constexpr double kDefaultGamma = 10.0;

// Curriculum weights for one source mini-batch: softmax(raw) * N, so every
// entry is non-negative and the batch sums to N.
struct WeightVector {
  Vector weights;
  Vector raw;
};

WeightVector normalize_weights(const Vector& raw_scores);
// Pulls a gradient with respect to the weights back to the raw scores.
Vector normalize_weights_backward(const WeightVector& w, const Vector& grad_weights);

// Numerically stable log(sigmoid(z)).
double log_sigmoid(double z);

// The discriminator losses below take D's clamped pre-activations z, with
// D = sigmoid(z), so log D and log(1 - D) are evaluated without forming D.
// Every gradient is taken with respect to the loss value as written.

struct ClassificationLoss {
  double value;
  Matrix grad_logits;
};

// Mean cross-entropy of the true class. Labels are 0-based.
ClassificationLoss loss_cls(const Matrix& class_logits, std::span<const int> labels);

struct DomainLoss {
  double value;
  Vector grad_source;  // d value / d z_s
  Vector grad_target;  // d value / d z_t
  Vector grad_weights; // d value / d w; empty for the unweighted loss
};

// -mean log D_s - mean log(1 - D_t).
DomainLoss loss_dom(const Vector& disc_logits_s, const Vector& disc_logits_t);

// -(1/N_s) sum w_i log D_s,i - (1/N_t) sum log(1 - D_t,j). Target samples are
// never weighted.
DomainLoss loss_wdom(const Vector& disc_logits_s, const Vector& disc_logits_t,
                     const WeightVector& w);

struct CurriculumObjective {
  double value;
  Vector grad_weights;
  Vector grad_source;
};

// (1/N_s) sum w_i log D_s,i, the quantity the curriculum manager minimizes.
CurriculumObjective cmss_objective(const Vector& disc_logits_s, const WeightVector& w);

// logit(p) = log(p) - log(1 - p), for writing fixtures in terms of D values.
Vector logit(const Vector& probabilities);

}  // namespace cmss
