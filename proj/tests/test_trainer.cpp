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

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "cmss/diagnostics.hpp"
#include "cmss/errors.hpp"
#include "cmss/trainer.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace cmss;
using namespace cmss::testing;

namespace {

TrainConfig toy_config(Strategy strategy, long iterations = 10) {
  TrainConfig c;
  c.strategy = strategy;
  c.iterations = iterations;
  c.batch_source = 5;
  c.batch_target = 4;
  c.lr_curriculum = 0.05;
  return c;
}

std::vector<double> group_values(ModelBundle& b, Sequential ModelBundle::*net) {
  return flatten_values((b.*net).parameters());
}

DomainDataset small_synthetic(std::uint64_t seed = 0) {
  SyntheticConfig c;
  c.n_source_domains = 3;
  c.n_classes = 2;
  c.samples_per_domain = 30;
  c.test_samples = 20;
  c.rotations_deg = {80, 45, 0, 90};
  c.seed = seed;
  return generate_synthetic(c);
}

ArchitectureSpec small_arch() {
  ArchitectureSpec a = toy_spec();
  a.feature_widths = {6};
  a.discriminator_hidden = 4;
  return a;
}

}  // namespace

TEST_CASE("gradient suite on toy bundles") {
  CHECK(flatten_values(toy_bundle(0).parameters()).size() <= 50);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (const auto& check : run_gradient_suite(seed)) {
      INFO(check.name, " seed ", seed);
      CHECK(check.relative_error <= 1e-4);
    }
  }
}

TEST_CASE("update isolation: each sub-step touches only its own group") {
  TrainState state(toy_config(Strategy::kCmss), toy_bundle(1));
  const Batch batch = toy_batch(2);
  ModelBundle& b = state.bundle;
  const auto f0 = group_values(b, &ModelBundle::feature);
  const auto c0 = group_values(b, &ModelBundle::classifier);
  const auto d0 = group_values(b, &ModelBundle::discriminator);
  const auto g0 = group_values(b, &ModelBundle::curriculum);

  update_curriculum(state, batch, 0.8);
  CHECK(group_values(b, &ModelBundle::feature) == f0);
  CHECK(group_values(b, &ModelBundle::classifier) == c0);
  CHECK(group_values(b, &ModelBundle::discriminator) == d0);
  const auto g1 = group_values(b, &ModelBundle::curriculum);
  CHECK(g1 != g0);

  update_discriminator(state, batch, 0.8, nullptr);
  CHECK(group_values(b, &ModelBundle::feature) == f0);
  CHECK(group_values(b, &ModelBundle::classifier) == c0);
  CHECK(group_values(b, &ModelBundle::curriculum) == g1);
  const auto d1 = group_values(b, &ModelBundle::discriminator);
  CHECK(d1 != d0);

  update_features(state, batch, 0.8, curriculum_weights(b, batch.source_inputs));
  CHECK(group_values(b, &ModelBundle::discriminator) == d1);
  CHECK(group_values(b, &ModelBundle::curriculum) == g1);
  CHECK(group_values(b, &ModelBundle::feature) != f0);
  CHECK(group_values(b, &ModelBundle::classifier) != c0);
}

TEST_CASE("first cmss step reports L_wdom equal to L_dom") {
  TrainState state(toy_config(Strategy::kCmss), init_parameters(toy_spec(), 3));
  const StepReport r = train_step_cmss(state, toy_batch(3));
  CHECK(r.loss_wdom == r.loss_dom);
  CHECK(r.weights.variance == 0.0);
  CHECK(r.weights.mean == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.iteration == 1);
  CHECK(r.lambda == 0.0);
}

TEST_CASE("pinned-weight cmss step equals the dann step parameter for parameter") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    TrainState cmss_state(toy_config(Strategy::kCmss), toy_bundle(seed));
    TrainState dann_state(toy_config(Strategy::kDann), toy_bundle(seed));
    cmss_state.iteration = dann_state.iteration = 4;
    cmss_state.lambda = dann_state.lambda = cmss_state.scheduled_lambda();
    for (int step = 0; step < 3; ++step) {
      const Batch batch = toy_batch(seed * 10 + static_cast<std::uint64_t>(step));
      const StepReport a = train_step_cmss(cmss_state, batch, CurriculumMode::kPinned);
      const StepReport b = train_step_dann(dann_state, batch);
      CHECK(a == b);
    }
    CHECK(flatten_values(cmss_state.bundle.parameters()) == flatten_values(dann_state.bundle.parameters()));
  }
}

TEST_CASE("iwan with equal discriminator outputs equals dann") {
  TrainConfig iwan_cfg = toy_config(Strategy::kIwan);
  TrainConfig dann_cfg = toy_config(Strategy::kDann);
  iwan_cfg.lr_discriminator = dann_cfg.lr_discriminator = 0.0;
  TrainState iwan(iwan_cfg, toy_bundle(5));
  TrainState dann(dann_cfg, toy_bundle(5));
  // A zeroed, frozen discriminator emits the same value for every input.
  for (TrainState* s : {&iwan, &dann}) {
    for (auto& p : s->bundle.discriminator.parameters()) p.value->setZero();
    s->iteration = 3;
    s->lambda = s->scheduled_lambda();
  }
  const Batch batch = toy_batch(5);
  const ForwardOutputs out = infer_all(iwan.bundle, batch);
  const WeightVector w = discriminator_weights(out.d_s);
  for (Eigen::Index i = 0; i < w.weights.size(); ++i) CHECK(w.weights(i) == doctest::Approx(1.0).epsilon(1e-15));
  train_step_iwan(iwan, batch);
  train_step_dann(dann, batch);
  const auto a = flatten_values(iwan.bundle.parameters());
  const auto b = flatten_values(dann.bundle.parameters());
  CHECK(relative_error(a, b) <= 1e-12);
}

TEST_CASE("iwan weights prefer the sample the discriminator thinks is target") {
  Vector d(2);
  d << 0.9, 0.1;
  const WeightVector w = discriminator_weights(d);
  CHECK(w.weights(1) > w.weights(0));
  CHECK(w.weights.sum() == doctest::Approx(2.0));
}

TEST_CASE("lambda zero leaves only the classification gradient") {
  ModelBundle a = toy_bundle(6);
  ModelBundle b = toy_bundle(6);
  const Batch batch = toy_batch(6);
  compute_feature_gradients(a, batch, 0.0, curriculum_weights(a, batch.source_inputs));
  // Classification-only gradient computed by hand through C and F.
  b.zero_grad();
  const ForwardOutputs out = forward_all(b, batch);
  const ClassificationLoss cls = loss_cls(out.class_logits_s, batch.source_labels);
  const Matrix gf = b.classifier.backward(cls.grad_logits);
  Matrix full = Matrix::Zero(out.features_s.rows() + out.features_t.rows(), gf.cols());
  full.topRows(gf.rows()) = gf;
  b.feature.backward(full);
  CHECK(flatten_grads(a.feature.parameters()) == flatten_grads(b.feature.parameters()));
  CHECK(flatten_grads(a.classifier.parameters()) == flatten_grads(b.classifier.parameters()));
}

TEST_CASE("a small psi step decreases L_dom") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelBundle base = toy_bundle(seed);
    const Batch batch = toy_batch(seed + 50);
    auto dom = [&](const ModelBundle& m) {
      const ForwardOutputs o = infer_all(m, batch);
      return loss_dom(o.disc_logits_s, o.disc_logits_t).value;
    };
    const double before = dom(base);
    bool decreased = false;
    for (double lr = 0.1; lr > 1e-8 && !decreased; lr /= 2) {
      TrainConfig cfg = toy_config(Strategy::kDann);
      cfg.lr_discriminator = lr;
      TrainState state(cfg, base);
      update_discriminator(state, batch, 1.0, nullptr);
      decreased = dom(state.bundle) < before;
    }
    CHECK(decreased);
  }
}

TEST_CASE("a small rho step does not increase cmss_obj") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    ModelBundle base = toy_bundle(seed);
    const Batch batch = toy_batch(seed + 60);
    auto objective = [&](const ModelBundle& m) {
      const ForwardOutputs o = infer_all(m, batch);
      return cmss_objective(o.disc_logits_s, normalize_weights(o.raw_scores_s)).value;
    };
    const double before = objective(base);
    bool ok = false;
    for (double lr = 0.1; lr > 1e-8 && !ok; lr /= 2) {
      TrainConfig cfg = toy_config(Strategy::kCmss);
      cfg.lr_curriculum = lr;
      TrainState state(cfg, base);
      update_curriculum(state, batch, 1.0);
      ok = objective(state.bundle) <= before;
    }
    CHECK(ok);
  }
}

TEST_CASE("score-space step from uniform weights favors the lowest D") {
  Rng rng(11);
  std::uniform_real_distribution<double> logit(-3.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index n = 2 + trial % 9;
    Vector disc(n);
    for (Eigen::Index i = 0; i < n; ++i) disc(i) = logit(rng);
    Eigen::Index j = 0;
    disc.minCoeff(&j);
    if ((disc.array() == disc(j)).count() > 1) continue;
    Vector scores = Vector::Zero(n);
    const WeightVector w = normalize_weights(scores);
    const CurriculumObjective obj = cmss_objective(disc, w);
    const Vector grad_scores = normalize_weights_backward(w, obj.grad_weights);
    scores -= 1e-3 * grad_scores;
    CHECK(normalize_weights(scores).weights(j) > w.weights(j));
  }
}

TEST_CASE("hard-sample preference through the curriculum network") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) hits += hard_sample_fixture(seed);
  // Parameter sharing in G couples the samples; see the acceptance report.
  CHECK(hits >= 90);
}

TEST_CASE("step functions check the configured strategy") {
  TrainState state(toy_config(Strategy::kDann), toy_bundle(0));
  CHECK_THROWS_AS(train_step_cmss(state, toy_batch(0)), ConfigError);
  CHECK_THROWS_AS(train_step_iwan(state, toy_batch(0)), ConfigError);
  CHECK_NOTHROW(train_step(state, toy_batch(0)));
}

TEST_CASE("lambda follows the schedule as steps advance") {
  TrainState state(toy_config(Strategy::kCmss, 8), toy_bundle(0));
  for (int t = 0; t < 8; ++t) {
    CHECK(state.lambda == compute_lambda(t / 8.0, kDefaultGamma));
    const StepReport r = train_step(state, toy_batch(static_cast<std::uint64_t>(t)));
    CHECK(r.lambda == compute_lambda(t / 8.0, kDefaultGamma));
  }
  CHECK(state.lambda == compute_lambda(1.0, kDefaultGamma));
}

TEST_CASE("non-finite losses abort with the iteration number") {
  TrainState state(toy_config(Strategy::kCmss), toy_bundle(0));
  Batch batch = toy_batch(0);
  batch.source_inputs(0, 0) = std::nan("");
  try {
    train_step(state, batch);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() == 1);
  }
}

TEST_CASE("identical config and seed give identical report streams") {
  const DomainDataset data = small_synthetic();
  for (Strategy s : {Strategy::kCmss, Strategy::kDann, Strategy::kIwan, Strategy::kSourceOnly}) {
    TrainConfig cfg = toy_config(s, 15);
    FitOptions opts;
    opts.write_artifacts = false;
    const RunArtifacts a = fit(cfg, small_arch(), data, {}, opts);
    const RunArtifacts b = fit(cfg, small_arch(), data, {}, opts);
    CHECK(a.reports == b.reports);
    CHECK(a.reports.size() == 15);
  }
}

TEST_CASE("config validation") {
  TrainConfig c;
  c.batch_source = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.iterations = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.strategy = Strategy::kDann;
  c.discriminator_weighted = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(strategy_from_string("mdan"), ConfigError);
  CHECK(strategy_from_string(to_string(Strategy::kSourceOnly)) == Strategy::kSourceOnly);
}

TEST_CASE("discriminator_weighted trains D on the weighted loss") {
  TrainConfig cfg = toy_config(Strategy::kCmss);
  cfg.discriminator_weighted = true;
  TrainState weighted(cfg, toy_bundle(9));
  TrainState plain(toy_config(Strategy::kCmss), toy_bundle(9));
  for (TrainState* s : {&weighted, &plain}) {
    s->iteration = 5;
    s->lambda = s->scheduled_lambda();
  }
  const Batch batch = toy_batch(9);
  train_step_cmss(weighted, batch);
  train_step_cmss(plain, batch);
  CHECK(flatten_values(weighted.bundle.discriminator.parameters()) !=
        flatten_values(plain.bundle.discriminator.parameters()));
}

TEST_CASE("evaluate examples") {
  SUBCASE("one-hot logits give 1") {
    Matrix logits = Matrix::Zero(4, 3);
    const std::vector<int> y = {0, 2, 1, 2};
    for (int i = 0; i < 4; ++i) logits(i, y[static_cast<std::size_t>(i)]) = 1.0;
    CHECK(accuracy_from_logits(logits, y) == 1.0);
  }
  SUBCASE("constant prediction on a balanced four-class set") {
    const Matrix logits = Matrix::Zero(8, 4);
    const std::vector<int> y = {0, 1, 2, 3, 0, 1, 2, 3};
    CHECK(accuracy_from_logits(logits, y) == 0.25);
  }
  SUBCASE("ten-row fixture with ties") {
    Matrix logits(10, 3);
    logits << 1, 0, 0,   // 0
        0, 2, 1,         // 1
        0, 0, 0,         // tie -> 0
        3, 3, 1,         // tie -> 0
        0, 1, 5,         // 2
        -1, -2, -3,      // 0
        2, 1, 2,         // tie -> 0
        0, 4, 4,         // tie -> 1
        1, 2, 3,         // 2
        5, 1, 0;         // 0
    const std::vector<int> y = {0, 1, 1, 0, 2, 1, 2, 1, 2, 1};
    // Hand count: rows 0,1,3,4,7,8 correct.
    CHECK(accuracy_from_logits(logits, y) == doctest::Approx(0.6));
  }
  SUBCASE("empty set") {
    CHECK_THROWS_AS(accuracy_from_logits(Matrix(0, 3), std::vector<int>{}), ArtifactError);
  }
}

TEST_CASE("fit with zero iterations writes the initial artifacts") {
  TempDir dir;
  const DomainDataset data = small_synthetic();
  const RunArtifacts art = fit(toy_config(Strategy::kCmss, 0), small_arch(), data, dir.path());
  CHECK(std::filesystem::exists(art.metrics));
  CHECK(slurp(art.metrics) == std::string(kMetricsHeader) + "\n");
  REQUIRE(art.checkpoints.size() == 1);
  CHECK(art.checkpoints[0].filename() == "ckpt_00000000.bin");
  CHECK(std::filesystem::exists(art.run_config));
  CHECK(std::filesystem::exists(art.samples));
  CHECK(std::filesystem::exists(art.bound_report));
  CHECK(art.weight_dumps.size() == 1);
  CHECK(art.reports.empty());
}

TEST_CASE("fit writes metrics rows and periodic snapshots") {
  TempDir dir;
  const DomainDataset data = small_synthetic();
  TrainConfig cfg = toy_config(Strategy::kCmss, 12);
  cfg.eval_every = 4;
  cfg.snapshot_every = 5;
  const RunArtifacts art = fit(cfg, small_arch(), data, dir.path());
  const std::string metrics = slurp(art.metrics);
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 13);
  CHECK(art.checkpoints.size() == 4);  // 0, 5, 10, 12
  CHECK(art.weight_dumps.back().filename() == "weights_epoch3.csv");
  const auto traj = weight_trajectory(art.metrics);
  REQUIRE(traj.size() == 12);
  CHECK(traj[0].iteration == 1);
  CHECK(traj[0].w_var == 0.0);
  CHECK(art.final_accuracy.has_value());
  const std::string row4 = metrics.substr(metrics.find("\n4,") + 1);
  CHECK(row4.substr(0, row4.find('\n')).back() != ',');
  const std::string row3 = metrics.substr(metrics.find("\n3,") + 1);
  CHECK(row3.substr(0, row3.find('\n')).back() == ',');
}

TEST_CASE("resume from a checkpoint reproduces the uninterrupted run") {
  for (Strategy s : {Strategy::kCmss, Strategy::kIwan}) {
    TempDir full, resumed;
    const DomainDataset data = small_synthetic(3);
    TrainConfig cfg = toy_config(s, 20);
    cfg.snapshot_every = 10;
    cfg.eval_every = 5;
    const RunArtifacts a = fit(cfg, small_arch(), data, full.path());
    std::filesystem::copy(full.path(), resumed.path(), std::filesystem::copy_options::recursive |
                                                          std::filesystem::copy_options::overwrite_existing);
    FitOptions opts;
    opts.resume_from = resumed.path() / "checkpoints" / "ckpt_00000010.bin";
    const RunArtifacts b = fit(cfg, small_arch(), data, resumed.path(), opts);
    CHECK(b.reports.size() == 10);
    CHECK(slurp(a.metrics) == slurp(b.metrics));
    CHECK(slurp(full / "checkpoints/ckpt_00000020.bin") == slurp(resumed / "checkpoints/ckpt_00000020.bin"));
    CHECK(slurp(full / "weights_epoch2.csv") == slurp(resumed / "weights_epoch2.csv"));
  }
}

TEST_CASE("resume rejects a different config") {
  TempDir dir;
  const DomainDataset data = small_synthetic();
  TrainConfig cfg = toy_config(Strategy::kCmss, 4);
  cfg.snapshot_every = 2;
  fit(cfg, small_arch(), data, dir.path());
  TrainConfig other = cfg;
  other.lr_features = 0.5;
  FitOptions opts;
  opts.resume_from = dir / "checkpoints/ckpt_00000002.bin";
  CHECK_THROWS_AS(fit(other, small_arch(), data, dir.path(), opts), ConfigError);
}

TEST_CASE("fit rejects an architecture that does not match the data") {
  const DomainDataset data = small_synthetic();
  ArchitectureSpec arch = small_arch();
  arch.input = InputShape{3, 1, 1};
  FitOptions opts;
  opts.write_artifacts = false;
  CHECK_THROWS_AS(fit(toy_config(Strategy::kDann, 1), arch, data, {}, opts), ArtifactError);
}

TEST_CASE("weight dumps satisfy the simplex per chunk") {
  TempDir dir;
  const DomainDataset data = small_synthetic();
  TrainConfig cfg = toy_config(Strategy::kCmss, 30);
  cfg.lr_curriculum = 0.5;
  const RunArtifacts art = fit(cfg, small_arch(), data, dir.path());
  const WeightDump dump = read_weight_dump(art.weight_dumps.back());
  REQUIRE(dump.rows.size() == data.source_size());
  for (std::size_t start = 0; start < dump.rows.size(); start += cfg.batch_source) {
    const std::size_t end = std::min(dump.rows.size(), start + cfg.batch_source);
    double sum = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      CHECK(dump.rows[i].normalized_weight >= 0.0);
      sum += dump.rows[i].normalized_weight;
    }
    CHECK(sum == doctest::Approx(static_cast<double>(end - start)).epsilon(1e-12));
  }
}
