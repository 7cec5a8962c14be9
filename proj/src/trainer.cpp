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

#include "cmss/trainer.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cmss/content_hash.hpp"
#include "cmss/diagnostics.hpp"
#include "cmss/errors.hpp"

namespace cmss {

std::string to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::kCmss:
      return "cmss";
    case Strategy::kDann:
      return "dann";
    case Strategy::kIwan:
      return "iwan";
    case Strategy::kSourceOnly:
      return "source_only";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "cmss") return Strategy::kCmss;
  if (name == "dann") return Strategy::kDann;
  if (name == "iwan") return Strategy::kIwan;
  if (name == "source_only") return Strategy::kSourceOnly;
  throw ConfigError(fmt::format("unknown strategy '{}'", name));
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be non-negative");
  if (batch_source == 0 || batch_target == 0) throw ConfigError("batch sizes must be positive");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be positive");
  for (double lr : {lr_features, lr_discriminator, lr_curriculum}) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rates must be non-negative");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (eval_every < 0 || snapshot_every < 0) throw ConfigError("eval/snapshot periods must be non-negative");
  if (discriminator_weighted && strategy != Strategy::kCmss) {
    throw ConfigError("discriminator_weighted only applies to the cmss strategy");
  }
  if (metrics_window == 0) throw ConfigError("metrics_window must be positive");
}

OptimizerSettings TrainConfig::optimizer_settings(double learning_rate) const {
  OptimizerSettings s;
  s.kind = optimizer;
  s.learning_rate = learning_rate;
  s.momentum = momentum;
  return s;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"strategy", to_string(strategy)},
          {"iterations", iterations},
          {"batch_source", batch_source},
          {"batch_target", batch_target},
          {"gamma", gamma},
          {"optimizer", to_string(optimizer)},
          {"momentum", momentum},
          {"lr_features", lr_features},
          {"lr_discriminator", lr_discriminator},
          {"lr_curriculum", lr_curriculum},
          {"seed", seed},
          {"eval_every", eval_every},
          {"snapshot_every", snapshot_every},
          {"discriminator_weighted", discriminator_weighted},
          {"dump_features", dump_features},
          {"metrics_window", metrics_window}};
}

WeightStats weight_stats(const Vector& weights) {
  WeightStats s;
  if (weights.size() == 0) return s;
  s.mean = weights.mean();
  s.variance = (weights.array() - s.mean).square().mean();
  return s;
}

TrainState::TrainState(TrainConfig cfg, ModelBundle b)
    : config(std::move(cfg)),
      bundle(std::move(b)),
      features_optimizer(config.optimizer_settings(config.lr_features)),
      discriminator_optimizer(config.optimizer_settings(config.lr_discriminator)),
      curriculum_optimizer(config.optimizer_settings(config.lr_curriculum)) {
  config.validate();
  lambda = scheduled_lambda();
}

std::vector<Parameter> TrainState::feature_parameters() {
  auto params = bundle.feature.parameters();
  auto cls = bundle.classifier.parameters();
  params.insert(params.end(), cls.begin(), cls.end());
  return params;
}

double TrainState::scheduled_lambda() const {
  if (config.iterations == 0) return 0.0;
  const double p = std::min(1.0, static_cast<double>(iteration) / static_cast<double>(config.iterations));
  return compute_lambda(p, config.gamma);
}

// ---- weights ------------------------------------------------------------------

WeightVector uniform_weights(std::size_t n) {
  return normalize_weights(Vector::Zero(static_cast<Eigen::Index>(n)));
}

WeightVector discriminator_weights(const Vector& d_source) {
  if (d_source.size() == 0) throw ConfigError("cannot weight an empty batch");
  const Vector raw = (1.0 - d_source.array()).matrix();
  const double total = raw.sum();
  WeightVector w;
  w.raw = raw;
  if (!(total > 0.0)) {
    w.weights = Vector::Ones(d_source.size());
  } else {
    w.weights = raw * (static_cast<double>(raw.size()) / total);
  }
  return w;
}

WeightVector curriculum_weights(const ModelBundle& bundle, const Matrix& source_inputs) {
  return normalize_weights(bundle.curriculum.infer(source_inputs).col(0));
}

// ---- gradients -------------------------------------------------------------------

namespace {

void require_finite(double value, const char* what) {
  if (!std::isfinite(value)) throw DivergenceError(fmt::format("{} is not finite", what), -1);
}

Matrix stack_column(const Vector& top, const Vector& bottom) {
  Matrix g(top.size() + bottom.size(), 1);
  g.col(0).head(top.size()) = top;
  g.col(0).tail(bottom.size()) = bottom;
  return g;
}

}  // namespace

void compute_curriculum_gradients(ModelBundle& bundle, const Batch& batch, double lambda) {
  bundle.zero_grad();
  const ForwardOutputs out = forward_all(bundle, batch);
  const WeightVector w = normalize_weights(out.raw_scores_s);
  const DomainLoss wdom = loss_wdom(out.disc_logits_s, out.disc_logits_t, w);
  require_finite(wdom.value, "L_wdom");
  const Vector grad_w = -lambda * wdom.grad_weights;
  Matrix grad_raw(out.raw_scores_s.size(), 1);
  grad_raw.col(0) = normalize_weights_backward(w, grad_w);
  bundle.curriculum.backward(grad_raw);
}

void update_curriculum(TrainState& state, const Batch& batch, double lambda) {
  compute_curriculum_gradients(state.bundle, batch, lambda);
  state.curriculum_optimizer.step(state.bundle.curriculum.parameters());
}

void compute_discriminator_gradients(ModelBundle& bundle, const Batch& batch, double lambda,
                                     const WeightVector* weights) {
  bundle.zero_grad();
  const ForwardOutputs out = forward_all(bundle, batch);
  const DomainLoss loss = weights ? loss_wdom(out.disc_logits_s, out.disc_logits_t, *weights)
                                  : loss_dom(out.disc_logits_s, out.disc_logits_t);
  require_finite(loss.value, weights ? "L_wdom" : "L_dom");
  const Vector gs = clamp_backward(out.disc_preclamp_s, lambda * loss.grad_source);
  const Vector gt = clamp_backward(out.disc_preclamp_t, lambda * loss.grad_target);
  bundle.discriminator.backward(stack_column(gs, gt));
}

void update_discriminator(TrainState& state, const Batch& batch, double lambda,
                          const WeightVector* weights) {
  compute_discriminator_gradients(state.bundle, batch, lambda, weights);
  state.discriminator_optimizer.step(state.bundle.discriminator.parameters());
}

void compute_feature_gradients(ModelBundle& bundle, const Batch& batch, double lambda,
                               const WeightVector& weights) {
  bundle.zero_grad();
  const ForwardOutputs out = forward_all(bundle, batch);
  const ClassificationLoss cls = loss_cls(out.class_logits_s, batch.source_labels);
  const DomainLoss wdom = loss_wdom(out.disc_logits_s, out.disc_logits_t, weights);
  require_finite(cls.value, "L_cls");
  require_finite(wdom.value, "L_wdom");

  const Eigen::Index ns = out.features_s.rows();
  const Matrix grad_from_cls = bundle.classifier.backward(cls.grad_logits);
  const Vector gs = clamp_backward(out.disc_preclamp_s, wdom.grad_source);
  const Vector gt = clamp_backward(out.disc_preclamp_t, wdom.grad_target);
  // D's own gradients accumulated here are discarded by the next zero_grad.
  const Matrix grad_from_dom = bundle.discriminator.backward(stack_column(gs, gt));
  Matrix grad_features = grad_reverse_backward(grad_from_dom, lambda);
  grad_features.topRows(ns) += grad_from_cls;
  bundle.feature.backward(grad_features);
}

void update_features(TrainState& state, const Batch& batch, double lambda,
                     const WeightVector& weights) {
  compute_feature_gradients(state.bundle, batch, lambda, weights);
  state.features_optimizer.step(state.feature_parameters());
}

// ---- steps -------------------------------------------------------------------------

namespace {

enum class WeightSource { kCurriculum, kUniform, kDiscriminator };

StepReport measure(const TrainState& state, const Batch& batch, WeightSource source) {
  const ForwardOutputs out = infer_all(state.bundle, batch);
  WeightVector w;
  switch (source) {
    case WeightSource::kCurriculum:
      w = normalize_weights(out.raw_scores_s);
      break;
    case WeightSource::kUniform:
      w = uniform_weights(static_cast<std::size_t>(out.d_s.size()));
      break;
    case WeightSource::kDiscriminator:
      w = discriminator_weights(out.d_s);
      break;
  }
  StepReport r;
  r.iteration = state.iteration + 1;
  r.lambda = state.lambda;
  r.loss_cls = loss_cls(out.class_logits_s, batch.source_labels).value;
  r.loss_dom = loss_dom(out.disc_logits_s, out.disc_logits_t).value;
  r.loss_wdom = loss_wdom(out.disc_logits_s, out.disc_logits_t, w).value;
  r.cmss_obj = cmss_objective(out.disc_logits_s, w).value;
  r.weights = weight_stats(w.weights);
  for (double v : {r.loss_cls, r.loss_dom, r.loss_wdom, r.cmss_obj}) {
    require_finite(v, "training loss");
  }
  return r;
}

void finish_step(TrainState& state, const StepReport& report) {
  ++state.iteration;
  state.lambda = state.scheduled_lambda();
  state.recent.push_back(report);
  while (state.recent.size() > state.config.metrics_window) state.recent.pop_front();
}

void require_strategy(const TrainState& state, Strategy expected) {
  if (state.config.strategy != expected) {
    throw ConfigError(fmt::format("state configured for {}, step for {}",
                                  to_string(state.config.strategy), to_string(expected)));
  }
}

template <typename Body>
StepReport guarded(TrainState& state, Body&& body) {
  try {
    StepReport report = body();
    finish_step(state, report);
    return report;
  } catch (const DivergenceError& e) {
    throw DivergenceError(fmt::format("iteration {}: {}", state.iteration + 1, e.what()),
                          state.iteration + 1);
  }
}

}  // namespace

StepReport train_step_cmss(TrainState& state, const Batch& batch, CurriculumMode mode) {
  require_strategy(state, Strategy::kCmss);
  return guarded(state, [&] {
    const bool learned = mode == CurriculumMode::kLearned;
    const double lambda = state.lambda;
    const StepReport report =
        measure(state, batch, learned ? WeightSource::kCurriculum : WeightSource::kUniform);
    const std::size_t ns = batch.source_labels.size();

    if (learned) update_curriculum(state, batch, lambda);

    if (state.config.discriminator_weighted) {
      const WeightVector w =
          learned ? curriculum_weights(state.bundle, batch.source_inputs) : uniform_weights(ns);
      update_discriminator(state, batch, lambda, &w);
    } else {
      update_discriminator(state, batch, lambda, nullptr);
    }

    const WeightVector w =
        learned ? curriculum_weights(state.bundle, batch.source_inputs) : uniform_weights(ns);
    update_features(state, batch, lambda, w);
    return report;
  });
}

StepReport train_step_dann(TrainState& state, const Batch& batch) {
  require_strategy(state, Strategy::kDann);
  return guarded(state, [&] {
    const double lambda = state.lambda;
    const StepReport report = measure(state, batch, WeightSource::kUniform);
    update_discriminator(state, batch, lambda, nullptr);
    update_features(state, batch, lambda, uniform_weights(batch.source_labels.size()));
    return report;
  });
}

StepReport train_step_iwan(TrainState& state, const Batch& batch) {
  require_strategy(state, Strategy::kIwan);
  return guarded(state, [&] {
    const double lambda = state.lambda;
    const StepReport report = measure(state, batch, WeightSource::kDiscriminator);
    update_discriminator(state, batch, lambda, nullptr);
    const ForwardOutputs out = infer_all(state.bundle, batch);
    update_features(state, batch, lambda, discriminator_weights(out.d_s));
    return report;
  });
}

StepReport train_step_source_only(TrainState& state, const Batch& batch) {
  require_strategy(state, Strategy::kSourceOnly);
  return guarded(state, [&] {
    const StepReport report = measure(state, batch, WeightSource::kUniform);
    update_features(state, batch, 0.0, uniform_weights(batch.source_labels.size()));
    return report;
  });
}

StepReport train_step(TrainState& state, const Batch& batch) {
  switch (state.config.strategy) {
    case Strategy::kCmss:
      return train_step_cmss(state, batch);
    case Strategy::kDann:
      return train_step_dann(state, batch);
    case Strategy::kIwan:
      return train_step_iwan(state, batch);
    case Strategy::kSourceOnly:
      return train_step_source_only(state, batch);
  }
  throw ConfigError("unknown strategy");
}

// ---- evaluation -------------------------------------------------------------------

double accuracy_from_logits(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw ArtifactError("cannot evaluate on an empty test set");
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw ArtifactError(fmt::format("{} predictions for {} labels", logits.rows(), labels.size()));
  }
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    if (best == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

double evaluate(const ModelBundle& bundle, const Matrix& inputs, std::span<const int> labels) {
  if (inputs.rows() == 0) throw ArtifactError("cannot evaluate on an empty test set");
  if (inputs.cols() != static_cast<Eigen::Index>(bundle.spec.input.size())) {
    throw ArtifactError(fmt::format("test inputs have {} columns, architecture expects {}",
                                    inputs.cols(), bundle.spec.input.size()));
  }
  constexpr Eigen::Index kChunk = 256;
  Matrix logits(inputs.rows(), bundle.spec.n_classes);
  for (Eigen::Index start = 0; start < inputs.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, inputs.rows() - start);
    logits.middleRows(start, n) =
        bundle.classifier.infer(bundle.feature.infer(inputs.middleRows(start, n)));
  }
  return accuracy_from_logits(logits, labels);
}

// ---- checkpointing -------------------------------------------------------------------

namespace {

constexpr const char* kOptFeatures = "opt.features.";
constexpr const char* kOptDiscriminator = "opt.discriminator.";
constexpr const char* kOptCurriculum = "opt.curriculum.";
constexpr const char* kRecentArray = "state.recent";

std::string hex_double(double v) { return fmt::format("{:a}", v); }

double parse_double(const std::string& text) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end == text.c_str()) throw ArtifactError(fmt::format("bad number '{}' in checkpoint", text));
  return v;
}

std::string join_ids(const std::vector<std::size_t>& ids) { return fmt::format("{}", fmt::join(ids, ",")); }

std::vector<std::size_t> split_ids(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoull(item));
  }
  return out;
}

const std::string& meta(const Checkpoint& ck, const std::string& key) {
  auto it = ck.metadata.find(key);
  if (it == ck.metadata.end()) throw ArtifactError(fmt::format("checkpoint lacks '{}'", key));
  return it->second;
}

}  // namespace

Checkpoint make_checkpoint(TrainState& state, const BatcherState& batcher) {
  Checkpoint ck;
  ck.spec = state.bundle.spec;
  ck.arrays = export_parameters(state.bundle);
  for (auto [opt, prefix] : {std::pair{&state.features_optimizer, kOptFeatures},
                             std::pair{&state.discriminator_optimizer, kOptDiscriminator},
                             std::pair{&state.curriculum_optimizer, kOptCurriculum}}) {
    auto slots = opt->export_state(prefix);
    ck.arrays.insert(ck.arrays.end(), slots.begin(), slots.end());
  }
  Matrix recent(static_cast<Eigen::Index>(state.recent.size()), 8);
  for (std::size_t i = 0; i < state.recent.size(); ++i) {
    const StepReport& r = state.recent[i];
    recent.row(static_cast<Eigen::Index>(i)) << static_cast<double>(r.iteration), r.lambda, r.loss_cls,
        r.loss_dom, r.loss_wdom, r.cmss_obj, r.weights.mean, r.weights.variance;
  }
  ck.arrays.push_back({kRecentArray, recent});

  ck.metadata["train_config"] = state.config.to_json().dump();
  ck.metadata["iteration"] = std::to_string(state.iteration);
  ck.metadata["lambda"] = hex_double(state.lambda);
  ck.metadata["opt.features.steps"] = std::to_string(state.features_optimizer.steps());
  ck.metadata["opt.discriminator.steps"] = std::to_string(state.discriminator_optimizer.steps());
  ck.metadata["opt.curriculum.steps"] = std::to_string(state.curriculum_optimizer.steps());
  ck.metadata["batcher.source_order"] = join_ids(batcher.source_order);
  ck.metadata["batcher.target_order"] = join_ids(batcher.target_order);
  ck.metadata["batcher.source_cursor"] = std::to_string(batcher.source_cursor);
  ck.metadata["batcher.target_cursor"] = std::to_string(batcher.target_cursor);
  ck.metadata["batcher.epoch"] = std::to_string(batcher.epoch);
  ck.metadata["batcher.source_rng"] = batcher.source_rng;
  ck.metadata["batcher.target_rng"] = batcher.target_rng;
  return ck;
}

void restore_checkpoint(const Checkpoint& ck, TrainState& state, BatcherState& batcher) {
  if (!(ck.spec == state.bundle.spec)) {
    throw ArtifactError("checkpoint architecture differs from the configured one");
  }
  if (nlohmann::json::parse(meta(ck, "train_config")) != state.config.to_json()) {
    throw ConfigError("checkpoint was written under a different training config");
  }
  state.bundle = bundle_from_checkpoint(ck);
  std::map<std::string, const Matrix*> by_name;
  const Matrix* recent = nullptr;
  for (const auto& a : ck.arrays) {
    by_name[a.name] = &a.value;
    if (a.name == kRecentArray) recent = &a.value;
  }
  state.features_optimizer.import_state(kOptFeatures, by_name, std::stol(meta(ck, "opt.features.steps")));
  state.discriminator_optimizer.import_state(kOptDiscriminator, by_name,
                                             std::stol(meta(ck, "opt.discriminator.steps")));
  state.curriculum_optimizer.import_state(kOptCurriculum, by_name,
                                          std::stol(meta(ck, "opt.curriculum.steps")));
  state.iteration = std::stol(meta(ck, "iteration"));
  state.lambda = parse_double(meta(ck, "lambda"));
  state.recent.clear();
  if (recent) {
    for (Eigen::Index i = 0; i < recent->rows(); ++i) {
      StepReport r;
      r.iteration = static_cast<long>((*recent)(i, 0));
      r.lambda = (*recent)(i, 1);
      r.loss_cls = (*recent)(i, 2);
      r.loss_dom = (*recent)(i, 3);
      r.loss_wdom = (*recent)(i, 4);
      r.cmss_obj = (*recent)(i, 5);
      r.weights = {(*recent)(i, 6), (*recent)(i, 7)};
      state.recent.push_back(r);
    }
  }
  batcher.source_order = split_ids(meta(ck, "batcher.source_order"));
  batcher.target_order = split_ids(meta(ck, "batcher.target_order"));
  batcher.source_cursor = std::stoull(meta(ck, "batcher.source_cursor"));
  batcher.target_cursor = std::stoull(meta(ck, "batcher.target_cursor"));
  batcher.epoch = std::stoull(meta(ck, "batcher.epoch"));
  batcher.source_rng = meta(ck, "batcher.source_rng");
  batcher.target_rng = meta(ck, "batcher.target_rng");
}

// ---- fit --------------------------------------------------------------------------------

std::string format_metrics_row(const StepReport& r, std::optional<double> accuracy) {
  return fmt::format("{},{},{},{},{},{},{},{},{}", r.iteration, r.lambda, r.loss_cls, r.loss_dom,
                     r.loss_wdom, r.cmss_obj, r.weights.mean, r.weights.variance,
                     accuracy ? fmt::format("{}", *accuracy) : std::string());
}

namespace {

namespace fs = std::filesystem;

long snapshot_index(long iteration, long every) {
  if (iteration == 0) return 0;
  if (every == 0) return 1;
  return (iteration + every - 1) / every;
}

// Per-sample raw scores and batch-normalized weights over the whole source
// pool, chunked by the training source batch size in id order.
WeightDump make_weight_dump(const TrainState& state, const DomainDataset& data, long epoch) {
  const TrainingView train = data.training_view();
  const DiagnosticsView diag = data.diagnostics_view();
  const Matrix& pool = train.source_inputs();
  const auto n = static_cast<std::size_t>(pool.rows());
  Vector raw;
  switch (state.config.strategy) {
    case Strategy::kCmss:
      raw = state.bundle.curriculum.infer(pool).col(0);
      break;
    case Strategy::kIwan: {
      const Matrix feats = state.bundle.feature.infer(pool);
      const Vector d = sigmoid(clamp_logits(state.bundle.discriminator.infer(feats).col(0)));
      raw = (1.0 - d.array()).matrix();
      break;
    }
    default:
      raw = Vector::Zero(static_cast<Eigen::Index>(n));
  }
  WeightDump dump;
  dump.epoch = epoch;
  const std::size_t chunk = state.config.batch_source;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    const Vector part = raw.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len));
    Vector w;
    if (state.config.strategy == Strategy::kIwan) {
      Vector d = (1.0 - part.array()).matrix();
      w = discriminator_weights(d).weights;
    } else {
      w = normalize_weights(part).weights;
    }
    for (std::size_t i = 0; i < len; ++i) {
      dump.rows.push_back({start + i, diag.hidden_domain(start + i), part(static_cast<Eigen::Index>(i)),
                           w(static_cast<Eigen::Index>(i))});
    }
  }
  return dump;
}

std::optional<Vector> pool_probability_weights(const TrainState& state, const DomainDataset& data) {
  const Matrix& pool = data.training_view().source_inputs();
  switch (state.config.strategy) {
    case Strategy::kCmss: {
      const Vector raw = state.bundle.curriculum.infer(pool).col(0);
      Vector e = (raw.array() - raw.maxCoeff()).exp().matrix();
      return Vector(e / e.sum());
    }
    case Strategy::kIwan: {
      const Matrix feats = state.bundle.feature.infer(pool);
      const Vector d = sigmoid(clamp_logits(state.bundle.discriminator.infer(feats).col(0)));
      Vector w = (1.0 - d.array()).matrix();
      const double total = w.sum();
      if (!(total > 0.0)) return std::nullopt;
      return Vector(w / total);
    }
    default:
      return std::nullopt;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw ArtifactError(fmt::format("write failed for {}", path.string()));
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

RunArtifacts fit(const TrainConfig& config, const ArchitectureSpec& architecture,
                 const DomainDataset& dataset, const fs::path& run_dir, const FitOptions& options) {
  config.validate();
  architecture.validate();
  if (!(architecture.input == dataset.input_shape())) {
    throw ArtifactError(fmt::format("architecture input {} does not match dataset input {}",
                                    architecture.input.to_string(),
                                    dataset.input_shape().to_string()));
  }
  if (architecture.n_classes != dataset.n_classes()) {
    throw ArtifactError(fmt::format("architecture has {} classes, dataset {}", architecture.n_classes,
                                    dataset.n_classes()));
  }

  RunArtifacts art;
  art.run_dir = run_dir;
  art.metrics = run_dir / "metrics.csv";
  art.run_config = run_dir / "run_config.json";
  art.samples = run_dir / "samples.csv";
  art.bound_report = run_dir / "bound_report.json";
  const fs::path ckpt_dir = run_dir / "checkpoints";

  TrainState state(config, init_parameters(architecture, config.seed));
  Batcher batcher(dataset.training_view(), config.batch_source, config.batch_target,
                  derive_seed(config.seed, 1));
  if (options.resume_from) {
    BatcherState bs;
    restore_checkpoint(read_checkpoint(*options.resume_from), state, bs);
    batcher.restore(bs);
  }

  const TrainingView train = dataset.training_view();
  const DiagnosticsView diag = dataset.diagnostics_view();
  const bool has_test = diag.target_test_inputs().rows() > 0;
  const bool write = options.write_artifacts;

  auto io_guard = [&](auto&& fn) {
    try {
      fn();
    } catch (const fs::filesystem_error& e) {
      throw ArtifactError(fmt::format("iteration {}: {}", state.iteration, e.what()));
    } catch (const ArtifactError& e) {
      throw ArtifactError(fmt::format("iteration {}: {}", state.iteration, e.what()));
    }
  };

  auto snapshot = [&] {
    if (!write) return;
    io_guard([&] {
      const long k = snapshot_index(state.iteration, config.snapshot_every);
      const fs::path ck = ckpt_dir / fmt::format("ckpt_{:08d}.bin", state.iteration);
      write_checkpoint(make_checkpoint(state, batcher.state()), ck);
      art.checkpoints.push_back(ck);
      const fs::path wd = run_dir / fmt::format("weights_epoch{}.csv", k);
      write_weight_dump(make_weight_dump(state, dataset, k), wd);
      art.weight_dumps.push_back(wd);
      if (config.dump_features) {
        const fs::path fd = run_dir / fmt::format("features_epoch{}.csv", k);
        const auto ns = static_cast<Eigen::Index>(train.source_size());
        const auto nt = static_cast<Eigen::Index>(train.target_size());
        Matrix all(ns + nt, train.source_inputs().cols());
        all.topRows(ns) = train.source_inputs();
        all.bottomRows(nt) = train.target_inputs();
        std::vector<std::size_t> ids(static_cast<std::size_t>(ns + nt));
        std::vector<int> domains(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
          ids[i] = i;
          domains[i] = diag.hidden_domain(i);
        }
        export_features(state.bundle, all, ids, domains, fd);
        art.feature_dumps.push_back(fd);
      }
    });
  };

  if (write) {
    io_guard([&] {
      fs::create_directories(ckpt_dir);
      nlohmann::json resolved = {{"train", config.to_json()},
                                 {"architecture", architecture.to_text()},
                                 {"extra", options.extra_config}};
      resolved["config_hash"] = git_blob_hash(resolved.dump());
      write_text(art.run_config, resolved.dump(2) + "\n");

      std::string samples = std::string(kSampleManifestHeader) + "\n";
      for (std::size_t i = 0; i < train.source_size(); ++i) {
        samples += fmt::format("{},{},{}\n", i, train.source_labels()[i], diag.hidden_domain(i));
      }
      for (std::size_t i = 0; i < train.target_size(); ++i) {
        const std::size_t id = train.source_size() + i;
        samples += fmt::format("{},,{}\n", id, diag.hidden_domain(id));
      }
      write_text(art.samples, samples);

      if (options.resume_from) {
        // Keep rows up to the resumed iteration, drop anything after it.
        std::string kept;
        const auto lines = read_lines(art.metrics);
        for (std::size_t i = 0; i < lines.size(); ++i) {
          if (i == 0) {
            kept += lines[i] + "\n";
            continue;
          }
          const long iter = std::stol(lines[i].substr(0, lines[i].find(',')));
          if (iter <= state.iteration) kept += lines[i] + "\n";
        }
        if (lines.empty()) kept = std::string(kMetricsHeader) + "\n";
        write_text(art.metrics, kept);
      } else {
        write_text(art.metrics, std::string(kMetricsHeader) + "\n");
      }
    });
  }

  if (!options.resume_from) snapshot();

  std::ofstream metrics;
  if (write) {
    metrics.open(art.metrics, std::ios::app);
    if (!metrics) throw ArtifactError(fmt::format("cannot append to {}", art.metrics.string()));
  }
  long last_snapshot = state.iteration;
  while (state.iteration < config.iterations) {
    const Batch batch = batcher.next();
    StepReport report;
    try {
      report = train_step(state, batch);
    } catch (const DivergenceError&) {
      if (write) {
        io_guard([&] {
          write_checkpoint(make_checkpoint(state, batcher.state()),
                           ckpt_dir / fmt::format("diverged_{:08d}.bin", state.iteration + 1));
        });
      }
      throw;
    }
    art.reports.push_back(report);
    std::optional<double> accuracy;
    if (has_test && config.eval_every > 0 && state.iteration % config.eval_every == 0) {
      accuracy = evaluate(state.bundle, diag.target_test_inputs(), diag.target_test_labels());
    }
    if (write) {
      metrics << format_metrics_row(report, accuracy) << '\n';
      metrics.flush();
      if (!metrics) {
        throw ArtifactError(fmt::format("iteration {}: metrics write failed", state.iteration));
      }
    }
    if (config.snapshot_every > 0 && state.iteration % config.snapshot_every == 0) {
      snapshot();
      last_snapshot = state.iteration;
    }
  }
  if (last_snapshot != state.iteration) snapshot();

  if (has_test) {
    art.final_accuracy = evaluate(state.bundle, diag.target_test_inputs(), diag.target_test_labels());
  }
  if (write) {
    io_guard([&] {
      const BoundReport report =
          compute_bound_report(state.bundle, train.source_inputs(), train.source_labels(),
                               train.target_inputs(), pool_probability_weights(state, dataset),
                               config.seed);
      write_bound_report(report, art.bound_report);
    });
  }
  return art;
}

}  // namespace cmss
