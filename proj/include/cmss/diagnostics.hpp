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
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmss/datasets.hpp"
#include "cmss/networks.hpp"
#include "cmss/tensor.hpp"

namespace cmss {

// ---- bound terms -----------------------------------------------------------
//
// Two weight conventions meet here. Curriculum weights sum to the batch size
// during training; the risk and divergence estimates below treat weights as
// a probability mass over the evaluation set (sum to 1).

inline constexpr std::size_t kMinProxySamples = 20;

// 2 (1 - 2 eps), clamped below at 0.
double proxy_a_distance_from_error(double holdout_error);

// Proxy A-distance between two feature sets. Each side is split 50/50 by a
// seeded shuffle; a logistic-regression domain probe is fit on the training
// halves (side A examples weighted by weights_a when given) and its balanced,
// weighted holdout error eps gives max(0, 2 (1 - 2 eps)).
double proxy_a_distance(const Matrix& features_a, const Matrix& features_b,
                        const std::optional<Vector>& weights_a = std::nullopt,
                        std::uint64_t seed = 0);

// Sum_i w_i * [C(F(x_i)) != y_i]; weights must sum to 1.
double weighted_source_risk(const ModelBundle& bundle, const Matrix& inputs,
                            std::span<const int> labels, const Vector& weights);

struct BoundReport {
  double weighted_source_risk = 0.0;
  double proxy_divergence = 0.0;
  // Terms of the generalization bound that cannot be estimated from data.
  std::vector<std::string> unestimated;
};

std::vector<std::string> unestimated_bound_terms();

// Source weights nullopt means the unweighted estimates (plain error rate and
// unweighted divergence).
BoundReport compute_bound_report(const ModelBundle& bundle, const Matrix& source_inputs,
                                 std::span<const int> source_labels, const Matrix& target_inputs,
                                 const std::optional<Vector>& source_weights,
                                 std::uint64_t seed = 0);
void write_bound_report(const BoundReport& report, const std::filesystem::path& path);
BoundReport read_bound_report(const std::filesystem::path& path);

// ---- weight dumps ------------------------------------------------------------

struct WeightDumpRow {
  std::size_t sample_id;
  int hidden_domain;
  double raw_score;
  double normalized_weight;
};

struct WeightDump {
  long epoch = 0;
  std::vector<WeightDumpRow> rows;
};

inline constexpr const char* kWeightDumpHeader = "sample_id,hidden_domain,raw_score,normalized_weight";

void write_weight_dump(const WeightDump& dump, const std::filesystem::path& path);
WeightDump read_weight_dump(const std::filesystem::path& path, long epoch = 0);

// Number of rows per hidden domain whose raw score exceeds tau. The result is
// indexed by domain id and sized to the largest id present plus one.
std::vector<std::size_t> domain_preference_counts(const WeightDump& dump, double tau);

struct TrajectoryPoint {
  long iteration;
  double w_mean;
  double w_var;
  bool operator==(const TrajectoryPoint&) const = default;
};

// Reads (iter, w_mean, w_var) out of a metrics.csv.
std::vector<TrajectoryPoint> weight_trajectory(const std::filesystem::path& metrics_file);

// Ids by normalized weight, descending; ties by id ascending. With a class
// filter only samples whose label (looked up in labels_by_id) matches are
// kept.
std::vector<std::size_t> rank_samples(const WeightDump& dump,
                                      std::optional<int> class_filter = std::nullopt,
                                      std::span<const int> labels_by_id = {},
                                      int n_classes = 0);

// ---- feature export -------------------------------------------------------------

inline constexpr const char* kSampleManifestHeader = "sample_id,label,hidden_domain";

// Rows of sample_id,hidden_domain,f_0..f_{d-1}.
void export_features(const ModelBundle& bundle, const Matrix& inputs,
                     std::span<const std::size_t> sample_ids, std::span<const int> hidden_domains,
                     const std::filesystem::path& path);

}  // namespace cmss
