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

#include <string>
#include <vector>

#include "cmss/networks.hpp"
#include "cmss/objectives.hpp"
#include "cmss/trainer.hpp"
#include "support.hpp"

namespace cmss::testing {

struct GradientCheck {
  std::string name;
  double relative_error;
};

// Analytic gradients from the trainer's compute_* functions against central
// differences of the corresponding scalar losses on the 44-parameter toy.
inline std::vector<GradientCheck> run_gradient_suite(std::uint64_t seed, double eps = 1e-5) {
  std::vector<GradientCheck> out;
  ModelBundle bundle = toy_bundle(seed);
  const Batch batch = toy_batch(seed + 1000);
  const WeightVector w = normalize_weights(infer_all(bundle, batch).raw_scores_s);
  const double lambda = 0.6;

  auto cls = [&] { return loss_cls(infer_all(bundle, batch).class_logits_s, batch.source_labels).value; };
  auto dom = [&] {
    const ForwardOutputs o = infer_all(bundle, batch);
    return loss_dom(o.disc_logits_s, o.disc_logits_t).value;
  };
  auto wdom = [&] {
    const ForwardOutputs o = infer_all(bundle, batch);
    return loss_wdom(o.disc_logits_s, o.disc_logits_t, w).value;
  };
  auto objective = [&] {
    const ForwardOutputs o = infer_all(bundle, batch);
    return cmss_objective(o.disc_logits_s, normalize_weights(o.raw_scores_s)).value;
  };

  {
    compute_feature_gradients(bundle, batch, 0.0, w);
    std::vector<Parameter> params = bundle.feature.parameters();
    for (auto& p : bundle.classifier.parameters()) params.push_back(p);
    const auto analytic = flatten_grads(params);
    out.push_back({"L_cls wrt theta,phi", relative_error(analytic, numeric_gradient(params, cls, eps))});
  }
  {
    compute_discriminator_gradients(bundle, batch, 1.0, nullptr);
    const auto params = bundle.discriminator.parameters();
    const auto analytic = flatten_grads(params);
    out.push_back({"L_dom wrt psi", relative_error(analytic, numeric_gradient(params, dom, eps))});
  }
  {
    compute_discriminator_gradients(bundle, batch, 1.0, &w);
    const auto params = bundle.discriminator.parameters();
    const auto analytic = flatten_grads(params);
    out.push_back({"L_wdom wrt psi", relative_error(analytic, numeric_gradient(params, wdom, eps))});
  }
  {
    compute_curriculum_gradients(bundle, batch, 1.0);
    const auto params = bundle.curriculum.parameters();
    const auto analytic = flatten_grads(params);
    out.push_back({"cmss_obj wrt rho", relative_error(analytic, numeric_gradient(params, objective, eps))});
  }
  {
    compute_feature_gradients(bundle, batch, lambda, w);
    const auto params = bundle.feature.parameters();
    const auto analytic = flatten_grads(params);
    auto composed = [&] { return cls() - lambda * wdom(); };
    out.push_back({"L_cls - lambda L_wdom wrt theta", relative_error(analytic, numeric_gradient(params, composed, eps))});
  }
  return out;
}

// One rho step on a frozen random fixture. True when the weight of the
// source sample with the lowest D increased.
inline bool hard_sample_fixture(std::uint64_t seed, double learning_rate = 1e-3) {
  TrainConfig cfg;
  cfg.strategy = Strategy::kCmss;
  cfg.iterations = 1;
  cfg.lr_curriculum = learning_rate;
  cfg.momentum = 0.0;
  TrainState state(cfg, toy_bundle(seed));
  const Batch batch = toy_batch(seed + 7, 8, 8);
  const ForwardOutputs before = infer_all(state.bundle, batch);
  Eigen::Index j = 0;
  before.d_s.minCoeff(&j);
  const double w_before = normalize_weights(before.raw_scores_s).weights(j);
  update_curriculum(state, batch, 1.0);
  const double w_after = curriculum_weights(state.bundle, batch.source_inputs).weights(j);
  return w_after > w_before;
}

}  // namespace cmss::testing
