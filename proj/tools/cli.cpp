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

#include "cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cmss/config.hpp"
#include "cmss/content_hash.hpp"
#include "cmss/diagnostics.hpp"
#include "cmss/errors.hpp"
#include "cmss/plots.hpp"
#include "cmss/run_dir.hpp"
#include "cmss/trainer.hpp"

namespace cmss::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(fmt::format("cannot read {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes through a process-unique temporary so concurrent readers never see
// a partial file.
void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + fmt::format(".tmp{}", ::getpid());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ArtifactError(fmt::format("cannot write {}", tmp.string()));
    out << text;
    if (!out) throw ArtifactError(fmt::format("write failed for {}", tmp.string()));
  }
  fs::rename(tmp, path);
}

ConfigDocument load_document(const std::optional<fs::path>& config_path,
                             const std::vector<std::string>& overrides) {
  ConfigDocument doc = config_path ? ConfigDocument::load(*config_path) : ConfigDocument{};
  for (const auto& o : overrides) doc.set(o);
  return doc;
}

fs::path config_base(const std::optional<fs::path>& config_path) {
  if (!config_path) return fs::current_path();
  return fs::absolute(*config_path).parent_path();
}

// ---- train -------------------------------------------------------------------

struct TrainArgs {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::vector<std::string> overrides;
  std::optional<fs::path> out;
  std::optional<fs::path> resume;
  int seeds = 1;
};

fs::path train_one(ConfigDocument doc, const fs::path& base, const fs::path& run_dir,
                   const std::optional<fs::path>& resume, std::ostream& out) {
  const ResolvedConfig cfg = resolve_config(doc);
  const DomainDataset dataset = load_dataset(cfg.data, cfg.train.seed, base);
  ArchitectureSpec arch = cfg.model;
  arch.input = dataset.input_shape();
  arch.n_classes = dataset.n_classes();
  try {
    arch.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("model: {}", e.what()));
  }

  FitOptions options;
  options.resume_from = resume;
  options.extra_config = {{"data", cfg.data.to_json()},
                          {"config_text", doc.to_text()},
                          {"config_base", base.string()}};

  RunLock lock(run_dir);
  RunManifest manifest;
  manifest.run_id = run_dir.filename().string();
  manifest.seed = cfg.train.seed;
  manifest.started_at = utc_timestamp();
  const RunArtifacts art = fit(cfg.train, arch, dataset, run_dir, options);
  manifest.finished_at = utc_timestamp();
  manifest.config_hash = nlohmann::json::parse(read_file(art.run_config)).at("config_hash");
  auto rel = [&](const fs::path& p) { return fs::relative(p, run_dir); };
  for (const fs::path& p : {art.run_config, art.metrics, art.samples, art.bound_report}) {
    manifest.artifacts.push_back(rel(p));
  }
  for (const auto* group : {&art.checkpoints, &art.weight_dumps, &art.feature_dumps}) {
    for (const auto& p : *group) manifest.artifacts.push_back(rel(p));
  }
  write_run_manifest(manifest, run_dir);

  out << "run_dir: " << run_dir.string() << "\n";
  if (art.final_accuracy) out << fmt::format("target_accuracy: {:.4f}\n", *art.final_accuracy);
  return run_dir;
}

int cmd_train(const TrainArgs& args, std::ostream& out) {
  ConfigDocument doc = load_document(args.config, args.overrides);
  if (args.strategy) doc.set("train.strategy=" + *args.strategy);
  if (args.seed) doc.set(fmt::format("train.seed={}", *args.seed));
  if (args.seeds < 1) throw UsageError("--seeds must be at least 1");
  if (args.seeds > 1 && args.resume) throw UsageError("--resume applies to a single run");

  const ResolvedConfig first = resolve_config(doc);
  const fs::path base = config_base(args.config);
  const std::uint64_t seed0 = first.train.seed;
  const std::string id = fmt::format("{}-seed{}-{}", to_string(first.train.strategy), seed0,
                                     git_blob_hash(doc.to_text()).substr(0, 8));
  const fs::path root = args.out.value_or(runs_root() / id);

  if (args.seeds == 1) {
    train_one(doc, base, root, args.resume, out);
    return kExitOk;
  }
  for (int k = 0; k < args.seeds; ++k) {
    ConfigDocument seeded = doc;
    const std::uint64_t seed = seed0 + static_cast<std::uint64_t>(k);
    seeded.set(fmt::format("train.seed={}", seed));
    train_one(seeded, base, root / fmt::format("seed_{}", seed), std::nullopt, out);
  }
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------------

struct EvalArgs {
  std::vector<fs::path> run_dirs;
  std::optional<fs::path> checkpoint;
  std::optional<fs::path> dataset;
  std::optional<int> seeds;
  std::optional<fs::path> out;
};

fs::path latest_checkpoint(const fs::path& run_dir) {
  const fs::path dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) throw ArtifactError(fmt::format("no checkpoints in {}", run_dir.string()));
  std::vector<fs::path> found;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0 && e.path().extension() == ".bin") found.push_back(e.path());
  }
  if (found.empty()) throw ArtifactError(fmt::format("no checkpoints in {}", run_dir.string()));
  std::sort(found.begin(), found.end());
  return found.back();
}

DomainDataset dataset_from_config_file(const fs::path& path) {
  const ResolvedConfig cfg = resolve_config(ConfigDocument::load(path));
  return load_dataset(cfg.data, cfg.train.seed, config_base(path));
}

DomainDataset eval_dataset(const fs::path& run_dir, const std::optional<fs::path>& override_path) {
  if (override_path) {
    if (override_path->extension() == ".toml") return dataset_from_config_file(*override_path);
    return read_synthetic_export(*override_path);
  }
  const auto j = nlohmann::json::parse(read_file(run_dir / "run_config.json"));
  const auto& extra = j.at("extra");
  if (!extra.contains("config_text")) {
    throw ArtifactError(fmt::format("{} does not record its dataset; pass --dataset", run_dir.string()));
  }
  const ResolvedConfig cfg =
      resolve_config(ConfigDocument::parse(extra.at("config_text").get<std::string>(), "run_config"));
  return load_dataset(cfg.data, cfg.train.seed, extra.at("config_base").get<std::string>());
}

std::vector<fs::path> seed_dirs(const fs::path& parent) {
  std::vector<std::pair<std::uint64_t, fs::path>> found;
  const std::regex pattern("seed_([0-9]+)");
  std::smatch m;
  if (fs::is_directory(parent)) {
    for (const auto& e : fs::directory_iterator(parent)) {
      const std::string name = e.path().filename().string();
      if (e.is_directory() && std::regex_match(name, m, pattern)) {
        found.emplace_back(std::stoull(m[1].str()), e.path());
      }
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [_, p] : found) out.push_back(p);
  return out;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  std::vector<fs::path> runs = args.run_dirs;
  std::optional<fs::path> parent;
  if (args.seeds) {
    if (*args.seeds < 1) throw UsageError("--seeds must be at least 1");
    if (runs.size() == 1 && !fs::exists(runs[0] / "checkpoints")) {
      parent = runs[0];
      runs = seed_dirs(runs[0]);
    }
    if (runs.size() < static_cast<std::size_t>(*args.seeds)) {
      throw ArtifactError(fmt::format("--seeds {} needs {} run directories, found {}", *args.seeds,
                                      *args.seeds, runs.size()));
    }
    runs.resize(static_cast<std::size_t>(*args.seeds));
  }
  if (args.checkpoint && runs.size() != 1) throw UsageError("--checkpoint applies to a single run");

  nlohmann::json report = {{"runs", nlohmann::json::array()}};
  std::vector<double> accs;
  for (const auto& run : runs) {
    const fs::path ckpt = args.checkpoint.value_or(latest_checkpoint(run));
    const ModelBundle bundle = bundle_from_checkpoint(read_checkpoint(ckpt));
    const DomainDataset data = eval_dataset(run, args.dataset);
    const DiagnosticsView diag = data.diagnostics_view();
    if (diag.target_test_inputs().rows() == 0) throw ArtifactError("dataset has no labeled target test set");
    if (!(bundle.spec.input == data.input_shape())) {
      throw ArtifactError(fmt::format("checkpoint expects input {}, dataset has {}",
                                      bundle.spec.input.to_string(), data.input_shape().to_string()));
    }
    const double acc = evaluate(bundle, diag.target_test_inputs(), diag.target_test_labels());
    accs.push_back(acc);
    report["runs"].push_back({{"run_dir", run.string()}, {"checkpoint", ckpt.string()}, {"accuracy", acc}});
  }

  fs::path json_path;
  if (runs.size() == 1 && !args.seeds) {
    out << fmt::format("{:.4f}\n", accs[0]);
    report["accuracy"] = accs[0];
    json_path = args.out.value_or(runs[0] / "eval.json");
  } else {
    double mean = 0.0;
    for (double a : accs) mean += a;
    mean /= static_cast<double>(accs.size());
    double ss = 0.0;
    for (double a : accs) ss += (a - mean) * (a - mean);
    const double stddev = accs.size() > 1 ? std::sqrt(ss / static_cast<double>(accs.size() - 1)) : 0.0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      out << fmt::format("{}\t{:.4f}\n", runs[i].string(), accs[i]);
    }
    out << fmt::format("{:.4f} ± {:.4f}\n", mean, stddev);
    report["mean"] = mean;
    report["std"] = stddev;
    report["n"] = accs.size();
    json_path = args.out.value_or(parent ? *parent / "eval.json" : fs::path("eval.json"));
  }
  write_file_atomic(json_path, report.dump(2) + "\n");
  return kExitOk;
}

// ---- analyze -------------------------------------------------------------------

struct AnalyzeArgs {
  fs::path run_dir;
  std::optional<double> tau;
  bool no_preference = false;
  std::optional<int> class_filter;
  std::optional<fs::path> out;
};

std::optional<long> dump_epoch(const std::string& name) {
  static const std::regex pattern("weights_epoch([0-9]+)\\.csv");
  std::smatch m;
  if (!std::regex_match(name, m, pattern)) return std::nullopt;
  return std::stol(m[1].str());
}

struct SampleTable {
  std::vector<int> labels;  // -1 for unlabeled
  int n_classes = 0;
};

SampleTable read_samples(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  if (line != kSampleManifestHeader) throw ArtifactError(fmt::format("{}: unexpected header", path.string()));
  SampleTable t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw ArtifactError(fmt::format("{}: malformed row '{}'", path.string(), line));
    }
    const std::size_t id = std::stoull(line.substr(0, c1));
    const std::string label = line.substr(c1 + 1, c2 - c1 - 1);
    if (t.labels.size() <= id) t.labels.resize(id + 1, -1);
    if (!label.empty()) {
      t.labels[id] = std::stoi(label);
      t.n_classes = std::max(t.n_classes, t.labels[id] + 1);
    }
  }
  return t;
}

int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err) {
  if (!args.no_preference && !args.tau) {
    throw UsageError("--tau is required for domain preference counts (or pass --no-preference)");
  }
  const fs::path run = args.run_dir;
  std::vector<fs::path> missing;
  std::vector<std::pair<long, fs::path>> dumps;
  const fs::path manifest = run / "manifest.json";
  if (fs::exists(manifest)) {
    const auto j = nlohmann::json::parse(read_file(manifest));
    for (const auto& a : j.at("artifacts")) {
      const fs::path p = run / a.get<std::string>();
      if (auto k = dump_epoch(p.filename().string())) {
        if (fs::exists(p)) {
          dumps.emplace_back(*k, p);
        } else {
          missing.push_back(p);
        }
      }
    }
  } else if (fs::is_directory(run)) {
    for (const auto& e : fs::directory_iterator(run)) {
      if (auto k = dump_epoch(e.path().filename().string())) dumps.emplace_back(*k, e.path());
    }
  }
  if (dumps.empty() && missing.empty()) missing.push_back(run / "weights_epoch*.csv");
  if (!fs::exists(run / "metrics.csv")) missing.push_back(run / "metrics.csv");
  if (args.class_filter && !fs::exists(run / "samples.csv")) missing.push_back(run / "samples.csv");
  if (!missing.empty()) {
    for (const auto& m : missing) err << "missing artifact: " << m.string() << "\n";
    return kExitArtifact;
  }
  std::sort(dumps.begin(), dumps.end());

  const fs::path out_dir = args.out.value_or(run / "analysis");
  fs::create_directories(out_dir);

  WeightDump last;
  if (!args.no_preference) {
    std::string combined = "epoch,domain,count\n";
    std::vector<Bar> bars;
    for (const auto& [k, path] : dumps) {
      const WeightDump dump = read_weight_dump(path, k);
      const auto counts = domain_preference_counts(dump, *args.tau);
      std::string csv = "domain,count\n";
      for (std::size_t d = 0; d < counts.size(); ++d) {
        csv += fmt::format("{},{}\n", d, counts[d]);
        combined += fmt::format("{},{},{}\n", k, d, counts[d]);
      }
      write_file_atomic(out_dir / fmt::format("domain_preference_epoch{}.csv", k), csv);
      if (k == dumps.back().first) {
        for (std::size_t d = 0; d < counts.size(); ++d) {
          bars.push_back({fmt::format("domain {}", d), static_cast<double>(counts[d])});
        }
      }
    }
    write_file_atomic(out_dir / "domain_preference.csv", combined);
    write_bar_chart_svg(bars, fmt::format("Samples with score > {} (snapshot {})", *args.tau, dumps.back().first),
                        out_dir / "domain_preference.svg");
  }

  const auto trajectory = weight_trajectory(run / "metrics.csv");
  std::string traj = "iter,w_mean,w_var\n";
  Series mean{"w_mean", {}, {}};
  Series var{"w_var", {}, {}};
  for (const auto& p : trajectory) {
    traj += fmt::format("{},{},{}\n", p.iteration, p.w_mean, p.w_var);
    mean.x.push_back(static_cast<double>(p.iteration));
    mean.y.push_back(p.w_mean);
    var.x.push_back(static_cast<double>(p.iteration));
    var.y.push_back(p.w_var);
  }
  write_file_atomic(out_dir / "weight_trajectory.csv", traj);
  write_line_plot_svg({var}, "Per-batch weight variance", out_dir / "weight_trajectory.svg");

  last = read_weight_dump(dumps.back().second, dumps.back().first);
  std::vector<std::size_t> ranked;
  if (args.class_filter) {
    const SampleTable samples = read_samples(run / "samples.csv");
    ranked = rank_samples(last, args.class_filter, samples.labels, samples.n_classes);
  } else {
    ranked = rank_samples(last);
  }
  std::map<std::size_t, const WeightDumpRow*> by_id;
  for (const auto& row : last.rows) by_id[row.sample_id] = &row;
  std::string ranking = "rank,sample_id,hidden_domain,normalized_weight\n";
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const WeightDumpRow& row = *by_id.at(ranked[r]);
    ranking += fmt::format("{},{},{},{}\n", r + 1, row.sample_id, row.hidden_domain, row.normalized_weight);
  }
  write_file_atomic(out_dir / "ranking.csv", ranking);
  out << "analysis: " << out_dir.string() << "\n";
  return kExitOk;
}

// ---- synth-data ------------------------------------------------------------------

struct SynthArgs {
  std::optional<fs::path> config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

int cmd_synth_data(const SynthArgs& args, std::ostream& out) {
  const ResolvedConfig cfg = resolve_config(load_document(args.config, args.overrides));
  if (cfg.data.kind != DataKind::kSynthetic) throw ConfigError("data.kind: synth-data needs kind = synthetic");
  SyntheticConfig s = cfg.data.synthetic;
  s.seed = args.seed.value_or(cfg.data.seed.value_or(cfg.train.seed));
  const DomainDataset data = generate_synthetic(s);
  if (args.out.has_parent_path()) fs::create_directories(args.out.parent_path());
  write_synthetic_export(data, args.out);
  const std::string bytes = read_file(args.out);
  out << fmt::format("wrote {} ({} bytes, seed {}, sha1 {})\n", args.out.string(), bytes.size(), s.seed,
                     git_blob_hash(bytes));
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Curriculum-weighted multi-source domain adaptation", "cmss"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model and write a run directory");
  train_cmd->add_option("--config", train.config, "Config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", train.seed, "Run seed (overrides train.seed)");
  train_cmd->add_option("--strategy", train.strategy, "cmss, dann, iwan or source_only");
  train_cmd->add_option("--set", train.overrides, "Override, section.key=value")->allow_extra_args(false);
  train_cmd->add_option("--out", train.out, "Run directory (default under $CMSS_RUNS_DIR or ./runs)");
  train_cmd->add_option("--resume", train.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--seeds", train.seeds, "Train this many consecutive seeds into seed_<n> subdirs");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Target accuracy of trained runs");
  eval_cmd->add_option("run_dirs", eval.run_dirs, "Run directories")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint (default: latest)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", eval.dataset, "Synthetic export or .toml config")->check(CLI::ExistingFile);
  eval_cmd->add_option("--seeds", eval.seeds, "Aggregate this many runs into mean ± std");
  eval_cmd->add_option("--out", eval.out, "Where to write eval.json");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Preference counts, weight trajectory and ranking");
  analyze_cmd->add_option("run_dir", analyze.run_dir, "Run directory")->required();
  analyze_cmd->add_option("--tau", analyze.tau, "Raw-score threshold for preference counts");
  analyze_cmd->add_flag("--no-preference", analyze.no_preference, "Skip preference counts");
  analyze_cmd->add_option("--class", analyze.class_filter, "Rank only samples of this class");
  analyze_cmd->add_option("--out", analyze.out, "Output directory (default <run_dir>/analysis)");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth-data", "Write the synthetic benchmark in the binary export format");
  synth_cmd->add_option("--config", synth.config, "Config file")->check(CLI::ExistingFile);
  synth_cmd->add_option("--set", synth.overrides, "Override, section.key=value")->allow_extra_args(false);
  synth_cmd->add_option("--seed", synth.seed, "Data seed");
  synth_cmd->add_option("--out", synth.out, "Output file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train, out);
    if (eval_cmd->parsed()) return cmd_eval(eval, out);
    if (analyze_cmd->parsed()) return cmd_analyze(analyze, out, err);
    if (synth_cmd->parsed()) return cmd_synth_data(synth, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const ArtifactError& e) {
    err << "artifact error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const fs::filesystem_error& e) {
    err << "artifact error: " << e.what() << "\n";
    return kExitArtifact;
  } catch (const nlohmann::json::exception& e) {
    err << "artifact error: " << e.what() << "\n";
    return kExitArtifact;
  }
  return kExitConfig;
}

}  // namespace cmss::cli
