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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmss/errors.hpp"
#include "cmss/random.hpp"
#include "cmss/tensor.hpp"

namespace cmss {

struct InputShape {
  int channels = 1;
  int height = 1;
  int width = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::string to_string() const;
  bool operator==(const InputShape&) const = default;
};

// Labeled block of inputs from a single domain, one sample per row.
struct LabeledSet {
  InputShape shape;
  Matrix inputs;
  std::vector<int> labels;
};

class TrainingView;
class DiagnosticsView;

// Multi-source pool plus an unlabeled target pool. Sample ids are global:
// source pool entries are [0, N_s), target pool entries [N_s, N_s + N_t).
// Domain ids are 0-based; the target domain is reported as n_source_domains().
// Immutable after construction.
class DomainDataset {
 public:
  DomainDataset(InputShape shape, int n_classes, int n_source_domains,
                Matrix source_inputs, std::vector<int> source_labels,
                std::vector<int> source_domains, Matrix target_inputs,
                Matrix target_test_inputs, std::vector<int> target_test_labels);

  const InputShape& input_shape() const { return shape_; }
  int n_classes() const { return n_classes_; }
  std::size_t source_size() const { return static_cast<std::size_t>(source_inputs_.rows()); }
  std::size_t target_size() const { return static_cast<std::size_t>(target_inputs_.rows()); }

  TrainingView training_view() const;
  DiagnosticsView diagnostics_view() const;

  // FNV-1a over every stored byte.
  std::uint64_t checksum() const;

 private:
  friend class TrainingView;
  friend class DiagnosticsView;

  InputShape shape_;
  int n_classes_;
  int n_source_domains_;
  Matrix source_inputs_;
  std::vector<int> source_labels_;
  std::vector<int> source_domains_;
  Matrix target_inputs_;
  Matrix target_test_inputs_;
  std::vector<int> target_test_labels_;
};

// What the training loop sees. Domain membership is not reachable from here.
class TrainingView {
 public:
  explicit TrainingView(const DomainDataset& data) : data_(&data) {}

  const InputShape& input_shape() const { return data_->shape_; }
  int n_classes() const { return data_->n_classes_; }
  std::size_t source_size() const { return data_->source_size(); }
  std::size_t target_size() const { return data_->target_size(); }
  const Matrix& source_inputs() const { return data_->source_inputs_; }
  std::span<const int> source_labels() const { return data_->source_labels_; }
  const Matrix& target_inputs() const { return data_->target_inputs_; }

 private:
  const DomainDataset* data_;
};

// Evaluation and interpretability access, including hidden domain ids and
// the labeled held-out target set.
class DiagnosticsView {
 public:
  explicit DiagnosticsView(const DomainDataset& data) : data_(&data) {}

  int n_source_domains() const { return data_->n_source_domains_; }
  std::span<const int> source_domains() const { return data_->source_domains_; }
  // Domain of a global sample id; target pool ids map to n_source_domains().
  int hidden_domain(std::size_t sample_id) const;
  const Matrix& target_test_inputs() const { return data_->target_test_inputs_; }
  std::span<const int> target_test_labels() const { return data_->target_test_labels_; }

 private:
  const DomainDataset* data_;
};

inline TrainingView DomainDataset::training_view() const { return TrainingView(*this); }
inline DiagnosticsView DomainDataset::diagnostics_view() const { return DiagnosticsView(*this); }

struct SyntheticConfig {
  int n_source_domains = 3;
  int n_classes = 3;
  int samples_per_domain = 500;
  // Size of the labeled held-out target set; 0 means samples_per_domain.
  int test_samples = 0;
  // S source rotations followed by the target rotation.
  std::vector<double> rotations_deg = {80.0, 45.0, 0.0, 90.0};
  double noise_std = 0.2;
  std::uint64_t seed = 0;
};

// Every domain is the same ring of n_classes cluster centers on the unit
// circle, rotated by that domain's angle, plus isotropic Gaussian noise.
// Coordinates are rounded to float32 so the binary export is lossless.
DomainDataset generate_synthetic(const SyntheticConfig& config);

// Per-feature standardization using source-pool statistics.
DomainDataset standardize_inputs(const DomainDataset& data);

// Builds a dataset from per-domain labeled sets. When per_domain_limit is
// set, each domain is subsampled uniformly without replacement by seed.
// Target training labels are dropped; target_test keeps its labels.
DomainDataset assemble_domains(const std::vector<LabeledSet>& sources,
                               const LabeledSet& target_train,
                               const LabeledSet& target_test, int n_classes,
                               std::optional<std::size_t> per_domain_limit,
                               std::uint64_t seed);

// ---- IDX ------------------------------------------------------------------

class IdxError : public ArtifactError {
 public:
  enum class Kind { kIo, kBadMagic, kTruncated, kDimOverflow, kCountMismatch };
  IdxError(Kind kind, const std::string& what) : ArtifactError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Images as [n, 1, rows, cols], pixel bytes scaled to [0, 1].
LabeledSet load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);
LabeledSet load_idx_dataset(const std::filesystem::path& images_path,
                            const std::filesystem::path& labels_path);

// ---- CSV manifest -----------------------------------------------------------

// Lines of `path,label,domain`; paths are binary PGM (P5, 8-bit) images,
// relative paths resolve against the manifest's directory. Returns one
// LabeledSet per domain id, indexed by domain.
std::vector<LabeledSet> load_manifest(const std::filesystem::path& manifest);

// ---- synthetic export -------------------------------------------------------
//
// Little-endian. Header: u32 version (=1), u32 S, u32 n_classes, u32 count.
// Then count rows of 2 x float32, then count u8 labels, then count u8 domain
// ids. Rows are the source pool, the target pool (label 255) and the labeled
// target test set (domain S), in that order.

inline constexpr std::uint32_t kSyntheticExportVersion = 1;
inline constexpr std::uint8_t kUnlabeled = 255;

void write_synthetic_export(const DomainDataset& data, const std::filesystem::path& path);
DomainDataset read_synthetic_export(const std::filesystem::path& path);

// ---- batching ---------------------------------------------------------------

struct Batch {
  Matrix source_inputs;
  std::vector<int> source_labels;
  Matrix target_inputs;
  std::vector<std::size_t> source_ids;
  std::vector<std::size_t> target_ids;
};

struct BatcherState {
  std::vector<std::size_t> source_order;
  std::vector<std::size_t> target_order;
  std::size_t source_cursor = 0;
  std::size_t target_cursor = 0;
  std::uint64_t epoch = 0;
  std::string source_rng;
  std::string target_rng;
};

// Source pool reshuffled at every epoch, remainder dropped. Target pool cycled
// under its own independently seeded shuffle.
class Batcher {
 public:
  Batcher(TrainingView view, std::size_t source_batch, std::size_t target_batch,
          std::uint64_t seed);

  Batch next();

  std::size_t batches_per_epoch() const { return view_.source_size() / source_batch_; }
  std::uint64_t epoch() const { return epoch_; }

  BatcherState state() const;
  void restore(const BatcherState& state);

 private:
  void reshuffle_source();
  void reshuffle_target();

  TrainingView view_;
  std::size_t source_batch_;
  std::size_t target_batch_;
  Rng source_rng_;
  Rng target_rng_;
  std::vector<std::size_t> source_order_;
  std::vector<std::size_t> target_order_;
  std::size_t source_cursor_ = 0;
  std::size_t target_cursor_ = 0;
  std::uint64_t epoch_ = 0;
};

inline Batcher make_batcher(const DomainDataset& data, std::size_t source_batch,
                            std::size_t target_batch, std::uint64_t seed) {
  return Batcher(data.training_view(), source_batch, target_batch, seed);
}

}  // namespace cmss
