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

#include "cmss/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "cmss/errors.hpp"
#include "cmss/random.hpp"

namespace cmss {

double proxy_a_distance_from_error(double holdout_error) {
  return std::max(0.0, 2.0 * (1.0 - 2.0 * holdout_error));
}

namespace {

Matrix features_of(const ModelBundle& bundle, const Matrix& inputs) {
  if (inputs.cols() != static_cast<Eigen::Index>(bundle.spec.input.size())) {
    throw ArtifactError(fmt::format("inputs have {} columns, architecture expects {}", inputs.cols(),
                                    bundle.spec.input.size()));
  }
  constexpr Eigen::Index kChunk = 256;
  Matrix out(inputs.rows(), bundle.spec.feature_dim());
  for (Eigen::Index start = 0; start < inputs.rows(); start += kChunk) {
    const Eigen::Index n = std::min(kChunk, inputs.rows() - start);
    out.middleRows(start, n) = bundle.feature.infer(inputs.middleRows(start, n));
  }
  return out;
}

std::vector<bool> misclassified(const ModelBundle& bundle, const Matrix& inputs,
                                std::span<const int> labels) {
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
    throw ArtifactError(fmt::format("{} inputs for {} labels", inputs.rows(), labels.size()));
  }
  const Matrix logits = bundle.classifier.infer(features_of(bundle, inputs));
  std::vector<bool> wrong(labels.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    wrong[static_cast<std::size_t>(i)] = best != labels[static_cast<std::size_t>(i)];
  }
  return wrong;
}

// Weighted logistic regression fit by full-batch gradient descent.
struct LinearProbe {
  Vector weights;
  double bias = 0.0;

  void fit(const Matrix& x, const Vector& y, const Vector& sample_weight) {
    constexpr int kSteps = 400;
    constexpr double kRate = 0.5;
    constexpr double kL2 = 1e-4;
    weights = Vector::Zero(x.cols());
    bias = 0.0;
    for (int step = 0; step < kSteps; ++step) {
      const Vector z = (x * weights).array() + bias;
      const Vector p = (1.0 / (1.0 + (-z.array()).exp())).matrix();
      const Vector r = (sample_weight.array() * (p - y).array()).matrix();
      weights -= kRate * (x.transpose() * r + kL2 * weights);
      bias -= kRate * r.sum();
    }
  }

  bool predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    return row.dot(weights) + bias >= 0.0;
  }
};

}  // namespace

double proxy_a_distance(const Matrix& features_a, const Matrix& features_b,
                        const std::optional<Vector>& weights_a, std::uint64_t seed) {
  const Eigen::Index na = features_a.rows();
  const Eigen::Index nb = features_b.rows();
  if (static_cast<std::size_t>(na) < kMinProxySamples || static_cast<std::size_t>(nb) < kMinProxySamples) {
    throw ArtifactError(fmt::format("proxy A-distance needs at least {} samples per side, got {} and {}",
                                    kMinProxySamples, na, nb));
  }
  if (features_a.cols() != features_b.cols()) {
    throw ArtifactError("feature sets have different widths");
  }
  Vector wa = weights_a ? *weights_a : Vector::Ones(na);
  if (wa.size() != na) throw ArtifactError(fmt::format("{} weights for {} samples", wa.size(), na));
  if ((wa.array() < 0.0).any() || !wa.allFinite()) throw ArtifactError("weights must be finite and non-negative");

  // Standardize with pooled statistics.
  Matrix pooled(na + nb, features_a.cols());
  pooled.topRows(na) = features_a;
  pooled.bottomRows(nb) = features_b;
  const Eigen::RowVectorXd mean = pooled.colwise().mean();
  Eigen::RowVectorXd scale =
      ((pooled.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < scale.size(); ++j) {
    if (scale(j) < 1e-12) scale(j) = 1.0;
  }
  pooled = ((pooled.rowwise() - mean).array().rowwise() / scale.array()).matrix();

  Rng rng(seed);
  std::vector<Eigen::Index> ia(static_cast<std::size_t>(na)), ib(static_cast<std::size_t>(nb));
  std::iota(ia.begin(), ia.end(), 0);
  std::iota(ib.begin(), ib.end(), na);
  shuffle(std::span(ia), rng);
  shuffle(std::span(ib), rng);
  const std::size_t ha = ia.size() / 2;
  const std::size_t hb = ib.size() / 2;

  auto side_mass = [&](std::size_t begin, std::size_t end) {
    double total = 0.0;
    for (std::size_t i = begin; i < end; ++i) total += wa(ia[i]);
    return total;
  };
  const double train_mass_a = side_mass(0, ha);
  const double hold_mass_a = side_mass(ha, ia.size());
  if (!(train_mass_a > 0.0) || !(hold_mass_a > 0.0)) {
    throw ArtifactError("degenerate split: a half of side A carries no weight");
  }

  // Each domain carries half of the training mass.
  const auto n_train = static_cast<Eigen::Index>(ha + hb);
  Matrix x(n_train, pooled.cols());
  Vector y(n_train), sw(n_train);
  for (std::size_t i = 0; i < ha; ++i) {
    x.row(static_cast<Eigen::Index>(i)) = pooled.row(ia[i]);
    y(static_cast<Eigen::Index>(i)) = 1.0;
    sw(static_cast<Eigen::Index>(i)) = 0.5 * wa(ia[i]) / train_mass_a;
  }
  for (std::size_t i = 0; i < hb; ++i) {
    const auto r = static_cast<Eigen::Index>(ha + i);
    x.row(r) = pooled.row(ib[i]);
    y(r) = 0.0;
    sw(r) = 0.5 / static_cast<double>(hb);
  }
  LinearProbe probe;
  probe.fit(x, y, sw);

  double err_a = 0.0;
  for (std::size_t i = ha; i < ia.size(); ++i) {
    if (!probe.predict(pooled.row(ia[i]))) err_a += wa(ia[i]) / hold_mass_a;
  }
  double err_b = 0.0;
  for (std::size_t i = hb; i < ib.size(); ++i) {
    if (probe.predict(pooled.row(ib[i]))) err_b += 1.0 / static_cast<double>(ib.size() - hb);
  }
  return proxy_a_distance_from_error(0.5 * (err_a + err_b));
}

double weighted_source_risk(const ModelBundle& bundle, const Matrix& inputs,
                            std::span<const int> labels, const Vector& weights) {
  if (static_cast<std::size_t>(weights.size()) != labels.size()) {
    throw ArtifactError(fmt::format("{} weights for {} samples", weights.size(), labels.size()));
  }
  if ((weights.array() < 0.0).any() || std::abs(weights.sum() - 1.0) > 1e-6) {
    throw ArtifactError("risk weights must be non-negative and sum to 1");
  }
  const auto wrong = misclassified(bundle, inputs, labels);
  double risk = 0.0;
  for (std::size_t i = 0; i < wrong.size(); ++i) {
    if (wrong[i]) risk += weights(static_cast<Eigen::Index>(i));
  }
  return risk;
}

std::vector<std::string> unestimated_bound_terms() {
  return {"C: constant term of the bound",
          "lambda: optimal combined source+target risk",
          "d: VC dimension of the hypothesis class",
          "delta: confidence level",
          "m: sample-size complexity term O(sqrt((d log(m/d) + log(1/delta)) / m))"};
}

BoundReport compute_bound_report(const ModelBundle& bundle, const Matrix& source_inputs,
                                 std::span<const int> source_labels, const Matrix& target_inputs,
                                 const std::optional<Vector>& source_weights, std::uint64_t seed) {
  BoundReport report;
  report.unestimated = unestimated_bound_terms();
  if (source_weights) {
    report.weighted_source_risk =
        weighted_source_risk(bundle, source_inputs, source_labels, *source_weights);
  } else {
    const auto wrong = misclassified(bundle, source_inputs, source_labels);
    report.weighted_source_risk = static_cast<double>(std::count(wrong.begin(), wrong.end(), true)) /
                                  static_cast<double>(wrong.size());
  }
  report.proxy_divergence = proxy_a_distance(features_of(bundle, source_inputs),
                                             features_of(bundle, target_inputs), source_weights, seed);
  return report;
}

void write_bound_report(const BoundReport& report, const std::filesystem::path& path) {
  nlohmann::json j = {{"weighted_source_risk", report.weighted_source_risk},
                      {"proxy_divergence", report.proxy_divergence},
                      {"unestimated", report.unestimated}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError(fmt::format("cannot write {}", path.string()));
  out << j.dump(2) << "\n";
}

BoundReport read_bound_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError(fmt::format("cannot open {}", path.string()));
  try {
    const auto j = nlohmann::json::parse(in);
    BoundReport r;
    r.weighted_source_risk = j.at("weighted_source_risk").get<double>();
    r.proxy_divergence = j.at("proxy_divergence").get<double>();
    r.unestimated = j.at("unestimated").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

// ---- weight dumps ------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ArtifactError(fmt::format("{}:{}: malformed number '{}'", path.string(), line, s));
  }
  return v;
}

long to_long(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw ArtifactError(fmt::format("{}:{}: malformed integer '{}'", path.string(), line, s));
  }
  return v;
}

}  // namespace

void write_weight_dump(const WeightDump& dump, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError(fmt::format("cannot write {}", path.string()));
  out << kWeightDumpHeader << '\n';
  for (const auto& r : dump.rows) {
    out << fmt::format("{},{},{},{}\n", r.sample_id, r.hidden_domain, r.raw_score, r.normalized_weight);
  }
  if (!out) throw ArtifactError(fmt::format("write failed for {}", path.string()));
}

WeightDump read_weight_dump(const std::filesystem::path& path, long epoch) {
  std::ifstream in(path);
  if (!in) throw ArtifactError(fmt::format("cannot open {}", path.string()));
  WeightDump dump;
  dump.epoch = epoch;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != kWeightDumpHeader) throw ArtifactError(fmt::format("{}: unexpected header", path.string()));
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw ArtifactError(fmt::format("{}:{}: expected 4 fields", path.string(), line_no));
    const long id = to_long(f[0], path, line_no);
    if (id < 0) throw ArtifactError(fmt::format("{}:{}: negative sample id", path.string(), line_no));
    dump.rows.push_back({static_cast<std::size_t>(id), static_cast<int>(to_long(f[1], path, line_no)),
                         to_double(f[2], path, line_no), to_double(f[3], path, line_no)});
  }
  return dump;
}

std::vector<std::size_t> domain_preference_counts(const WeightDump& dump, double tau) {
  int max_domain = -1;
  for (const auto& r : dump.rows) max_domain = std::max(max_domain, r.hidden_domain);
  std::vector<std::size_t> counts(static_cast<std::size_t>(max_domain + 1), 0);
  for (const auto& r : dump.rows) {
    if (r.hidden_domain >= 0 && r.raw_score > tau) ++counts[static_cast<std::size_t>(r.hidden_domain)];
  }
  return counts;
}

std::vector<TrajectoryPoint> weight_trajectory(const std::filesystem::path& metrics_file) {
  std::ifstream in(metrics_file);
  if (!in) throw ArtifactError(fmt::format("cannot open {}", metrics_file.string()));
  std::vector<TrajectoryPoint> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t i_iter = 0, i_mean = 0, i_var = 0, n_fields = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      const auto header = split_csv(line);
      n_fields = header.size();
      auto find = [&](const char* name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
          throw ArtifactError(fmt::format("{}: missing column {}", metrics_file.string(), name));
        }
        return static_cast<std::size_t>(it - header.begin());
      };
      i_iter = find("iter");
      i_mean = find("w_mean");
      i_var = find("w_var");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != n_fields) {
      throw ArtifactError(fmt::format("{}:{}: expected {} fields, got {}", metrics_file.string(), line_no,
                                      n_fields, f.size()));
    }
    out.push_back({to_long(f[i_iter], metrics_file, line_no), to_double(f[i_mean], metrics_file, line_no),
                   to_double(f[i_var], metrics_file, line_no)});
  }
  return out;
}

std::vector<std::size_t> rank_samples(const WeightDump& dump, std::optional<int> class_filter,
                                      std::span<const int> labels_by_id, int n_classes) {
  if (class_filter) {
    if (labels_by_id.empty()) throw ConfigError("class filter needs per-sample labels");
    if (*class_filter < 0 || (n_classes > 0 && *class_filter >= n_classes)) {
      throw ConfigError(fmt::format("unknown class id {}", *class_filter));
    }
  }
  std::vector<const WeightDumpRow*> rows;
  for (const auto& r : dump.rows) {
    if (class_filter) {
      if (r.sample_id >= labels_by_id.size()) {
        throw ArtifactError(fmt::format("no label for sample {}", r.sample_id));
      }
      if (labels_by_id[r.sample_id] != *class_filter) continue;
    }
    rows.push_back(&r);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const WeightDumpRow* a, const WeightDumpRow* b) {
    if (a->normalized_weight != b->normalized_weight) return a->normalized_weight > b->normalized_weight;
    return a->sample_id < b->sample_id;
  });
  std::vector<std::size_t> ids;
  ids.reserve(rows.size());
  for (const auto* r : rows) ids.push_back(r->sample_id);
  return ids;
}

void export_features(const ModelBundle& bundle, const Matrix& inputs,
                     std::span<const std::size_t> sample_ids, std::span<const int> hidden_domains,
                     const std::filesystem::path& path) {
  if (sample_ids.size() != static_cast<std::size_t>(inputs.rows()) ||
      hidden_domains.size() != sample_ids.size()) {
    throw ArtifactError("feature export needs one id and domain per input row");
  }
  const Matrix features = features_of(bundle, inputs);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ArtifactError(fmt::format("cannot write {}", path.string()));
  out << "sample_id,hidden_domain";
  for (Eigen::Index j = 0; j < features.cols(); ++j) out << ",f_" << j;
  out << '\n';
  fmt::memory_buffer buf;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf), "{},{}", sample_ids[static_cast<std::size_t>(i)],
                   hidden_domains[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      fmt::format_to(std::back_inserter(buf), ",{}", features(i, j));
    }
    buf.push_back('\n');
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw ArtifactError(fmt::format("write failed for {}", path.string()));
}

}  // namespace cmss
