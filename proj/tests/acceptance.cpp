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

// Acceptance report: one PASS / FAIL / SKIP line per criterion.
//
// Exit status is 0 once every criterion has been evaluated, whatever the
// verdicts; --strict turns any FAIL into exit status 1.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "cmss/config.hpp"
#include "cmss/diagnostics.hpp"
#include "cmss/objectives.hpp"
#include "cmss/trainer.hpp"
#include "fixtures.hpp"
#include "support.hpp"

#ifndef CMSS_SOURCE_DIR
#define CMSS_SOURCE_DIR "."
#endif

using namespace cmss;
using namespace cmss::testing;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances --------------------------------------------------------

constexpr double kLambdaAtHalf = 0.98661429;
constexpr double kLambdaTol = 1e-8;
constexpr int kLambdaGrid = 100;
constexpr double kGradientTol = 1e-4;
constexpr int kGradientSeeds = 10;
constexpr int kWeightBatches = 10000;
constexpr double kWeightSumTol = 1e-5;
constexpr int kHardFixtures = 100;
constexpr int kSeeds = 5;
constexpr int kSeedsRequired = 4;
constexpr double kMinMarginPoints = 2.0;
constexpr double kBenchmarkBudgetSeconds = 600.0;
constexpr double kBoundRelTol = 1e-12;
constexpr double kProxyIdenticalMax = 0.2;
constexpr double kProxySeparatedMin = 1.8;
constexpr int kDigitsTargets = 5;
constexpr int kDigitsRequired = 4;

enum class Verdict { kPass, kFail, kSkip };

int g_failures = 0;

void report(const std::string& name, Verdict v, const std::string& detail) {
  const char* tag = v == Verdict::kPass ? "PASS" : v == Verdict::kFail ? "FAIL" : "SKIP";
  if (v == Verdict::kFail) ++g_failures;
  std::cout << fmt::format("{} {}: {}", tag, name, detail) << std::endl;
}

Verdict verdict(bool ok) { return ok ? Verdict::kPass : Verdict::kFail; }

// ---- exact identities -------------------------------------------------------

void exact_identities() {
  Rng rng(1);
  bool grl = true;
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix x = random_matrix(1 + trial % 7, 1 + trial % 5, rng, 1e3);
    const Matrix y = grad_reverse(x, 0.37 * trial);
    grl = grl && y.size() == x.size() &&
          std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) == 0;
  }

  bool unit = true;
  std::uniform_real_distribution<double> z(-20.0, 20.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index ns = 1 + trial % 31, nt = 1 + (trial * 7) % 29;
    Vector zs(ns), zt(nt);
    for (auto& v : zs) v = z(rng);
    for (auto& v : zt) v = z(rng);
    WeightVector ones;
    ones.weights = Vector::Ones(ns);
    ones.raw = Vector::Zero(ns);
    const DomainLoss a = loss_dom(zs, zt);
    const DomainLoss b = loss_wdom(zs, zt, ones);
    unit = unit && a.value == b.value && a.grad_source == b.grad_source && a.grad_target == b.grad_target;
  }

  bool pinned = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TrainConfig cfg;
    cfg.strategy = Strategy::kCmss;
    cfg.iterations = 10;
    TrainState c(cfg, toy_bundle(seed));
    cfg.strategy = Strategy::kDann;
    TrainState d(cfg, toy_bundle(seed));
    for (int step = 0; step < 5; ++step) {
      const Batch batch = toy_batch(seed * 100 + static_cast<std::uint64_t>(step));
      pinned = pinned && train_step_cmss(c, batch, CurriculumMode::kPinned) == train_step_dann(d, batch);
    }
    pinned = pinned && flatten_values(c.bundle.parameters()) == flatten_values(d.bundle.parameters());
  }
  report("exact identities", verdict(grl && unit && pinned),
         fmt::format("grad_reverse forward bit-exact {}, unit-weight L_wdom == L_dom {}, pinned CMSS == DANN {}",
                     grl, unit, pinned));
}

// ---- schedule ----------------------------------------------------------------

void schedule() {
  const double at0 = compute_lambda(0.0, kDefaultGamma);
  const double at_half = compute_lambda(0.5, kDefaultGamma);
  // 2 / (1 + e^-x) - 1 == tanh(x / 2).
  const double oracle = std::tanh(kDefaultGamma * 0.5 / 2.0);
  bool monotone = true;
  double prev = at0;
  for (int i = 1; i <= kLambdaGrid; ++i) {
    const double v = compute_lambda(static_cast<double>(i) / kLambdaGrid, kDefaultGamma);
    monotone = monotone && v > prev;
    prev = v;
  }
  const bool ok = at0 == 0.0 && std::abs(at_half - kLambdaAtHalf) <= kLambdaTol &&
                  std::abs(at_half - oracle) <= kLambdaTol && monotone;
  report("schedule", verdict(ok),
         fmt::format("lambda(0)={} lambda(0.5)={:.10f} (target {} +/- {:g}, tanh oracle {:.10f}), "
                     "increasing over {} grid points {}",
                     at0, at_half, kLambdaAtHalf, kLambdaTol, oracle, kLambdaGrid, monotone));
}

// ---- gradient suite --------------------------------------------------------------

void gradient_suite() {
  std::map<std::string, double> worst;
  for (int seed = 0; seed < kGradientSeeds; ++seed) {
    for (const auto& c : run_gradient_suite(static_cast<std::uint64_t>(seed))) {
      worst[c.name] = std::max(worst[c.name], c.relative_error);
    }
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, err] : worst) {
    ok = ok && err <= kGradientTol;
    detail += fmt::format("{}{} {:.2e}", detail.empty() ? "" : ", ", name, err);
  }
  const std::size_t n_params = flatten_values(toy_bundle(0).parameters()).size();
  report("gradient suite", verdict(ok && n_params <= 50),
         fmt::format("max rel err over {} seeds, {} params, tol {:g}: {}", kGradientSeeds, n_params, kGradientTol,
                     detail));
}

// ---- weight algebra ---------------------------------------------------------------

void weight_algebra() {
  Rng rng(2);
  std::uniform_int_distribution<int> size(1, 128);
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  int bad = 0;
  double worst = 0.0;
  auto check = [&](const Vector& raw) {
    const WeightVector w = normalize_weights(raw);
    const double n = static_cast<double>(raw.size());
    const double dev = std::abs(w.weights.sum() - n) / n;
    worst = std::max(worst, dev);
    if (!w.weights.allFinite() || (w.weights.array() < 0.0).any() || dev > kWeightSumTol) ++bad;
  };
  for (int b = 0; b < kWeightBatches; ++b) {
    Vector raw(size(rng));
    const double scale = std::pow(10.0, log_scale(rng));
    for (auto& v : raw) v = scale * normal(rng);
    check(raw);
  }
  constexpr double kMax = std::numeric_limits<double>::max();
  constexpr double kTiny = std::numeric_limits<double>::denorm_min();
  int extreme = 0;
  for (const std::vector<double>& raw : std::vector<std::vector<double>>{
           {kMax, 0.0, -kMax},
           {kMax, kMax, kMax},
           {-kMax, -kMax},
           {1e300, -1e300, 1e300, 0.0},
           {kTiny, -kTiny, 0.0},
           {800.0, -800.0, 0.0, 799.0},
           {-745.0, -746.0, -744.0},
           {1e-300}}) {
    check(Eigen::Map<const Vector>(raw.data(), static_cast<Eigen::Index>(raw.size())));
    ++extreme;
  }
  report("weight algebra", verdict(bad == 0),
         fmt::format("{} random + {} extreme batches, {} violations, worst |sum-N|/N {:.2e} (tol {:g})",
                     kWeightBatches, extreme, bad, worst, kWeightSumTol));
}

// ---- hard-sample preference ------------------------------------------------------------

void hard_sample() {
  int hits = 0;
  for (int seed = 0; seed < kHardFixtures; ++seed) hits += hard_sample_fixture(static_cast<std::uint64_t>(seed));
  report("hard-sample preference", verdict(hits == kHardFixtures),
         fmt::format("{}/{} fixtures increased the weight of the lowest-D sample (required {}/{})", hits,
                     kHardFixtures, kHardFixtures, kHardFixtures));
}

// ---- synthetic benchmark and the criteria that reuse it --------------------------------

struct BenchRun {
  double accuracy = 0.0;
  std::vector<double> w_var;
  fs::path last_dump;
  fs::path last_checkpoint;
};

struct Bench {
  ResolvedConfig base;
  DataConfig data;
  std::map<Strategy, std::vector<BenchRun>> runs;
  double seconds = 0.0;  // cmss + dann + source_only
  std::vector<DomainDataset> datasets;
};

BenchRun run_one(const ConfigDocument& doc, Strategy strategy, int seed, const fs::path& dir, Bench& bench) {
  ConfigDocument d = doc;
  d.set(fmt::format("train.seed={}", seed));
  d.set("train.strategy=" + to_string(strategy));
  const ResolvedConfig cfg = resolve_config(d);
  const DomainDataset& data = bench.datasets.at(static_cast<std::size_t>(seed));
  ArchitectureSpec arch = cfg.model;
  arch.input = data.input_shape();
  arch.n_classes = data.n_classes();
  const RunArtifacts art = fit(cfg.train, arch, data, dir);
  BenchRun r;
  r.accuracy = art.final_accuracy.value_or(std::nan(""));
  for (const auto& rep : art.reports) r.w_var.push_back(rep.weights.variance);
  r.last_dump = art.weight_dumps.back();
  r.last_checkpoint = art.checkpoints.back();
  return r;
}

double mean_of(const std::vector<double>& v, std::size_t begin, std::size_t end) {
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(begin), v.begin() + static_cast<std::ptrdiff_t>(end),
                         0.0) /
         static_cast<double>(end - begin);
}

Bench run_benchmark(const fs::path& config_path, const fs::path& work) {
  const ConfigDocument doc = ConfigDocument::load(config_path);
  Bench bench;
  bench.base = resolve_config(doc);
  bench.data = bench.base.data;
  for (int seed = 0; seed < kSeeds; ++seed) {
    bench.datasets.push_back(load_dataset(bench.data, static_cast<std::uint64_t>(seed), config_path.parent_path()));
  }
  const auto t0 = std::chrono::steady_clock::now();
  for (Strategy s : {Strategy::kCmss, Strategy::kDann, Strategy::kSourceOnly}) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      bench.runs[s].push_back(
          run_one(doc, s, seed, work / to_string(s) / fmt::format("seed_{}", seed), bench));
    }
  }
  bench.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (int seed = 0; seed < kSeeds; ++seed) {
    bench.runs[Strategy::kIwan].push_back(
        run_one(doc, Strategy::kIwan, seed, work / "iwan" / fmt::format("seed_{}", seed), bench));
  }
  return bench;
}

std::string accuracies(const std::vector<BenchRun>& runs) {
  std::string s;
  for (const auto& r : runs) s += fmt::format("{}{:.4f}", s.empty() ? "" : " ", r.accuracy);
  return s;
}

double mean_accuracy(const std::vector<BenchRun>& runs) {
  double m = 0.0;
  for (const auto& r : runs) m += r.accuracy;
  return m / static_cast<double>(runs.size());
}

void benchmark_ordering(const Bench& b) {
  const double cmss = mean_accuracy(b.runs.at(Strategy::kCmss));
  const double dann = mean_accuracy(b.runs.at(Strategy::kDann));
  const double src = mean_accuracy(b.runs.at(Strategy::kSourceOnly));
  const double margin = 100.0 * (cmss - dann);
  const bool ok = cmss >= dann && dann >= src && margin >= kMinMarginPoints && b.seconds <= kBenchmarkBudgetSeconds;
  report("synthetic benchmark ordering", verdict(ok),
         fmt::format("mean target acc cmss {:.4f} dann {:.4f} source_only {:.4f}; cmss-dann {:+.2f} points "
                     "(required >= {}); {:.0f}s for {} runs (budget {:.0f}s); per-seed cmss [{}] dann [{}] "
                     "source_only [{}]",
                     cmss, dann, src, margin, kMinMarginPoints, b.seconds, 3 * kSeeds, kBenchmarkBudgetSeconds,
                     accuracies(b.runs.at(Strategy::kCmss)), accuracies(b.runs.at(Strategy::kDann)),
                     accuracies(b.runs.at(Strategy::kSourceOnly))));
}

void variance_decay(const Bench& b) {
  int decayed = 0, iwan_below = 0;
  std::string detail;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto& v = b.runs.at(Strategy::kCmss)[static_cast<std::size_t>(seed)].w_var;
    const std::size_t n = v.size(), decile = std::max<std::size_t>(1, n / 10);
    const double first = mean_of(v, 0, decile);
    const double last = mean_of(v, n - decile, n);
    if (last < first) ++decayed;
    // IWAN must stay below that level in every decile.
    const auto& iv = b.runs.at(Strategy::kIwan)[static_cast<std::size_t>(seed)].w_var;
    double iwan_max = 0.0;
    for (std::size_t start = 0; start + decile <= iv.size(); start += decile) {
      iwan_max = std::max(iwan_max, mean_of(iv, start, start + decile));
    }
    if (iwan_max < first) ++iwan_below;
    detail += fmt::format("{}seed {}: first {:.3e} last {:.3e} iwan max-decile {:.3e}", detail.empty() ? "" : "; ",
                          seed, first, last, iwan_max);
  }
  report("weight-variance decay", verdict(decayed >= kSeedsRequired && iwan_below >= kSeedsRequired),
         fmt::format("last < first decile in {}/{} seeds, IWAN below CMSS first decile in {}/{} seeds "
                     "(required {} each); {}",
                     decayed, kSeeds, iwan_below, kSeeds, kSeedsRequired, detail));
}

void domain_preference(const Bench& b) {
  const auto& rot = b.data.synthetic.rotations_deg;
  const std::size_t s = rot.size() - 1;
  std::size_t nearest = 0;
  auto dist = [&](std::size_t i) {
    const double d = std::fmod(std::abs(rot[i] - rot[s]), 360.0);
    return std::min(d, 360.0 - d);
  };
  for (std::size_t i = 1; i < s; ++i) {
    if (dist(i) < dist(nearest)) nearest = i;
  }
  int first = 0;
  std::string detail;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const WeightDump dump = read_weight_dump(b.runs.at(Strategy::kCmss)[static_cast<std::size_t>(seed)].last_dump);
    double tau = 0.0;
    for (const auto& r : dump.rows) tau += r.raw_score;
    tau /= static_cast<double>(dump.rows.size());
    const auto counts = domain_preference_counts(dump, tau);
    bool top = true;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (i != nearest && counts[i] >= counts[nearest]) top = false;
    }
    first += top;
    std::string c;
    for (std::size_t x : counts) c += fmt::format("{}{}", c.empty() ? "" : ",", x);
    detail += fmt::format("{}seed {}: [{}]", detail.empty() ? "" : "; ", seed, c);
  }
  report("domain preference", verdict(first >= kSeedsRequired),
         fmt::format("{:g} deg source (domain {}) strictly first in {}/{} seeds (required {}), tau = mean raw "
                     "score of the final dump; counts {}",
                     rot[nearest], nearest, first, kSeeds, kSeedsRequired, detail));
}

bool close(double a, double b) { return std::abs(a - b) <= kBoundRelTol * std::max({1.0, std::abs(a), std::abs(b)}); }

Matrix gaussian(Eigen::Index n, Eigen::Index d, double offset, Rng& rng) {
  std::normal_distribution<double> normal(offset, 1.0);
  Matrix m(n, d);
  for (auto& v : m.reshaped()) v = normal(rng);
  return m;
}

void bound_feasibility(const Bench* b) {
  bool uniform_ok = true, range_ok = true;
  int reports = 0;
  auto compare = [&](const ModelBundle& bundle, const Matrix& xs, std::span<const int> ys, const Matrix& xt,
                     std::uint64_t seed) {
    const BoundReport plain = compute_bound_report(bundle, xs, ys, xt, std::nullopt, seed);
    const Vector uniform = Vector::Constant(xs.rows(), 1.0 / static_cast<double>(xs.rows()));
    const BoundReport weighted = compute_bound_report(bundle, xs, ys, xt, uniform, seed);
    uniform_ok = uniform_ok && close(plain.weighted_source_risk, weighted.weighted_source_risk) &&
                 close(plain.proxy_divergence, weighted.proxy_divergence);
    for (double v : {plain.proxy_divergence, weighted.proxy_divergence}) range_ok = range_ok && v >= 0.0 && v <= 2.0;
    ++reports;
  };
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix xs = gaussian(80, 2, 0.0, rng);
    const Matrix xt = gaussian(60, 2, 0.5 * static_cast<double>(seed), rng);
    std::vector<int> ys(80);
    for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = static_cast<int>((i * 7 + seed) % 2);
    compare(toy_bundle(seed), xs, ys, xt, seed);
  }
  if (b) {
    for (int seed = 0; seed < kSeeds; ++seed) {
      const DomainDataset& data = b->datasets[static_cast<std::size_t>(seed)];
      const ModelBundle bundle = bundle_from_checkpoint(
          read_checkpoint(b->runs.at(Strategy::kCmss)[static_cast<std::size_t>(seed)].last_checkpoint));
      const TrainingView tv = data.training_view();
      compare(bundle, tv.source_inputs(), tv.source_labels(), tv.target_inputs(), static_cast<std::uint64_t>(seed));
    }
  }

  double identical_max = 0.0, separated_min = 2.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix a = gaussian(500, 4, 0.0, rng);
    const double same = proxy_a_distance(a, a, std::nullopt, seed);
    const double sep = proxy_a_distance(a, gaussian(500, 4, 10.0, rng), std::nullopt, seed);
    identical_max = std::max(identical_max, same);
    separated_min = std::min(separated_min, sep);
    range_ok = range_ok && same >= 0.0 && same <= 2.0 && sep >= 0.0 && sep <= 2.0;
  }
  const bool ok = uniform_ok && range_ok && identical_max < kProxyIdenticalMax && separated_min > kProxySeparatedMin;
  report("bound feasibility", verdict(ok),
         fmt::format("uniform-weight == unweighted on {} reports (rel tol {:g}) {}; proxy in [0,2] {}; identical "
                     "max {:.4f} (< {}); separated min {:.4f} (> {})",
                     reports, kBoundRelTol, uniform_ok, range_ok, identical_max, kProxyIdenticalMax, separated_min,
                     kProxySeparatedMin));
}

// ---- digits smoke run ----------------------------------------------------------------------

void digits(const fs::path& work) {
  const char* config_env = std::getenv("CMSS_DIGITS_CONFIG");
  if (!config_env || !fs::exists(config_env)) {
    report("digits smoke run", Verdict::kSkip,
           "set CMSS_DIGITS_CONFIG to a digits config (see configs/digits_small.toml) to run it");
    return;
  }
  const fs::path config_path = fs::absolute(config_env);
  const ConfigDocument doc = ConfigDocument::load(config_path);
  int wins = 0;
  std::string detail;
  for (int target = 0; target < kDigitsTargets; ++target) {
    std::map<Strategy, double> acc;
    for (Strategy s : {Strategy::kCmss, Strategy::kDann}) {
      ConfigDocument d = doc;
      d.set(fmt::format("data.target_domain={}", target));
      d.set("train.strategy=" + to_string(s));
      const ResolvedConfig cfg = resolve_config(d);
      const DomainDataset data = load_dataset(cfg.data, cfg.train.seed, config_path.parent_path());
      ArchitectureSpec arch = cfg.model;
      arch.input = data.input_shape();
      arch.n_classes = data.n_classes();
      const RunArtifacts art =
          fit(cfg.train, arch, data, work / "digits" / fmt::format("target{}_{}", target, to_string(s)));
      acc[s] = art.final_accuracy.value_or(std::nan(""));
    }
    wins += acc[Strategy::kCmss] >= acc[Strategy::kDann];
    detail += fmt::format("{}target {}: cmss {:.4f} dann {:.4f}", detail.empty() ? "" : "; ", target,
                          acc[Strategy::kCmss], acc[Strategy::kDann]);
  }
  report("digits smoke run", verdict(wins >= kDigitsRequired),
         fmt::format("cmss >= dann on {}/{} targets (required {}); {}", wins, kDigitsTargets, kDigitsRequired,
                     detail));
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--strict") strict = true;
    else if (a == "--quick") quick = true;
    else {
      std::cerr << "usage: cmss_acceptance [--strict] [--quick]\n";
      return 2;
    }
  }
  try {
    exact_identities();
    schedule();
    gradient_suite();
    weight_algebra();
    hard_sample();

    TempDir work;
    std::optional<Bench> bench;
    if (quick) {
      for (const char* name : {"synthetic benchmark ordering", "weight-variance decay", "domain preference"}) {
        report(name, Verdict::kSkip, "--quick");
      }
    } else {
      bench = run_benchmark(fs::path(CMSS_SOURCE_DIR) / "configs" / "synth_cmss.toml", work.path());
      benchmark_ordering(*bench);
      variance_decay(*bench);
      domain_preference(*bench);
    }
    bound_feasibility(bench ? &*bench : nullptr);
    digits(work.path());
  } catch (const std::exception& e) {
    std::cerr << "acceptance run aborted: " << e.what() << "\n";
    return 3;
  }
  std::cout << fmt::format("{} criteria failed", g_failures) << std::endl;
  return strict && g_failures > 0 ? 1 : 0;
}
