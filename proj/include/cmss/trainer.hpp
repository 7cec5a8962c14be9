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

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmss/datasets.hpp"
#include "cmss/networks.hpp"
#include "cmss/objectives.hpp"
#include "cmss/optimizer.hpp"

namespace cmss {

enum class Strategy { kCmss, kDann, kIwan, kSourceOnly };

std::string to_string(Strategy strategy);
Strategy strategy_from_string(const std::string& name);

struct TrainConfig {
  Strategy strategy = Strategy::kCmss;
  long iterations = 2000;
  std::size_t batch_source = 32;
  std::size_t batch_target = 32;
  double gamma = kDefaultGamma;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double momentum = 0.9;
  double lr_features = 0.01;       // theta and phi
  double lr_discriminator = 0.01;  // psi
  double lr_curriculum = 0.001;    // rho, cmss only
  std::uint64_t seed = 0;
  long eval_every = 100;           // 0 disables periodic evaluation
  long snapshot_every = 500;       // 0 keeps only the initial and final snapshots
  // Train D on the curriculum-weighted loss instead of the unweighted one.
  bool discriminator_weighted = false;
  bool dump_features = true;
  std::size_t metrics_window = 256;

  void validate() const;
  OptimizerSettings optimizer_settings(double learning_rate) const;
  nlohmann::json to_json() const;
};

struct WeightStats {
  double mean = 0.0;
  double variance = 0.0;  // population variance over the batch
  bool operator==(const WeightStats&) const = default;
};

WeightStats weight_stats(const Vector& weights);

struct StepReport {
  long iteration = 0;  // value of t after the step (1-based)
  double lambda = 0.0;
  double loss_cls = 0.0;
  double loss_dom = 0.0;
  double loss_wdom = 0.0;
  double cmss_obj = 0.0;
  WeightStats weights;

  bool operator==(const StepReport&) const = default;
};

struct TrainState {
  TrainState(TrainConfig config, ModelBundle bundle);

  TrainConfig config;
  ModelBundle bundle;
  long iteration = 0;
  double lambda = 0.0;  // compute_lambda(iteration / iterations, gamma)
  Optimizer features_optimizer;
  Optimizer discriminator_optimizer;
  Optimizer curriculum_optimizer;
  std::deque<StepReport> recent;

  std::vector<Parameter> feature_parameters();  // theta and phi
  double scheduled_lambda() const;
};

// ---- the three alternating updates -----------------------------------------
//
// Each computes gradients from a fresh forward pass. The compute_* variants
// leave gradients in the bundle without applying them.

// rho: minimize -lambda * L_wdom with the other networks frozen.
void compute_curriculum_gradients(ModelBundle& bundle, const Batch& batch, double lambda);
void update_curriculum(TrainState& state, const Batch& batch, double lambda);

// psi: minimize lambda * L_dom (or lambda * L_wdom when weights are given).
void compute_discriminator_gradients(ModelBundle& bundle, const Batch& batch, double lambda,
                                     const WeightVector* weights);
void update_discriminator(TrainState& state, const Batch& batch, double lambda,
                          const WeightVector* weights);

// theta, phi: minimize L_cls - lambda * L_wdom through gradient reversal, with
// the weights held constant.
void compute_feature_gradients(ModelBundle& bundle, const Batch& batch, double lambda,
                               const WeightVector& weights);
void update_features(TrainState& state, const Batch& batch, double lambda,
                     const WeightVector& weights);

// Source weights derived from the discriminator: 1 - D_s, rescaled to sum N.
WeightVector discriminator_weights(const Vector& d_source);
WeightVector uniform_weights(std::size_t n);
WeightVector curriculum_weights(const ModelBundle& bundle, const Matrix& source_inputs);

enum class CurriculumMode { kLearned, kPinned };

// kPinned fixes the weights at one and skips the rho update.
StepReport train_step_cmss(TrainState& state, const Batch& batch,
                           CurriculumMode mode = CurriculumMode::kLearned);
StepReport train_step_dann(TrainState& state, const Batch& batch);
StepReport train_step_iwan(TrainState& state, const Batch& batch);
StepReport train_step_source_only(TrainState& state, const Batch& batch);
StepReport train_step(TrainState& state, const Batch& batch);

// Fraction of rows whose first maximal logit is the label.
double accuracy_from_logits(const Matrix& logits, std::span<const int> labels);
double evaluate(const ModelBundle& bundle, const Matrix& inputs, std::span<const int> labels);

// ---- checkpointing ------------------------------------------------------------

Checkpoint make_checkpoint(TrainState& state, const BatcherState& batcher);
// Restores state and batcher position; the config must match the checkpoint.
void restore_checkpoint(const Checkpoint& checkpoint, TrainState& state, BatcherState& batcher);

// ---- fit ------------------------------------------------------------------------

struct RunArtifacts {
  std::filesystem::path run_dir;
  std::filesystem::path metrics;
  std::filesystem::path run_config;
  std::filesystem::path samples;
  std::filesystem::path bound_report;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::filesystem::path> weight_dumps;
  std::vector<std::filesystem::path> feature_dumps;
  std::vector<StepReport> reports;  // steps executed by this call
  std::optional<double> final_accuracy;
};

struct FitOptions {
  std::optional<std::filesystem::path> resume_from;
  // Folded into run_config.json (e.g. the data section).
  nlohmann::json extra_config = nlohmann::json::object();
  bool write_artifacts = true;
};

inline constexpr const char* kMetricsHeader =
    "iter,lambda,L_cls,L_dom,L_wdom,cmss_obj,w_mean,w_var,target_acc";

// Runs config.iterations steps of the configured strategy. Periodic
// evaluation uses the labeled target test set; snapshots write a checkpoint
// plus weight and feature dumps indexed by snapshot number.
RunArtifacts fit(const TrainConfig& config, const ArchitectureSpec& architecture,
                 const DomainDataset& dataset, const std::filesystem::path& run_dir,
                 const FitOptions& options = {});

std::string format_metrics_row(const StepReport& report, std::optional<double> accuracy);

}  // namespace cmss
