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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmss/datasets.hpp"
#include "cmss/networks.hpp"
#include "cmss/trainer.hpp"

namespace cmss {

// Flat TOML-style configuration: `[section]` headers, `key = value` lines,
// `#` comments. Values are quoted strings, numbers, true/false, or flat
// lists in brackets. Keys are stored fully qualified ("train.seed").
struct ConfigValue {
  enum class Kind { kString, kScalar, kList };
  Kind kind = Kind::kScalar;
  std::string text;                // string contents or scalar token
  std::vector<std::string> items;  // list elements, unquoted
};

class ConfigDocument {
 public:
  static ConfigDocument parse(const std::string& text, const std::string& origin = "<config>");
  static ConfigDocument load(const std::filesystem::path& path);

  // Applies a `section.key=value` override (value uses config syntax).
  void set(const std::string& assignment);

  // Canonical text: one fully qualified `key = value` line per entry, sorted.
  std::string to_text() const;

  bool contains(const std::string& key) const { return values_.count(key) > 0; }
  const std::map<std::string, ConfigValue>& values() const { return values_; }

 private:
  std::map<std::string, ConfigValue> values_;
};

enum class DataKind { kSynthetic, kExport, kIdx, kManifest };

struct DataConfig {
  DataKind kind = DataKind::kSynthetic;
  bool standardize = false;
  std::optional<std::uint64_t> seed;  // defaults to the run seed
  SyntheticConfig synthetic;
  std::filesystem::path path;  // export file or manifest
  std::vector<std::filesystem::path> source_images;
  std::vector<std::filesystem::path> source_labels;
  std::filesystem::path target_images;
  std::filesystem::path target_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::size_t per_domain_limit = 0;  // 0 keeps every sample
  int target_domain = -1;            // manifest: which domain id is the target
  std::filesystem::path test_manifest;
  int n_classes = 10;                // idx/manifest

  nlohmann::json to_json() const;
};

struct ResolvedConfig {
  TrainConfig train;
  ArchitectureSpec model;  // input shape and class count filled from the data
  DataConfig data;
};

// Maps a document onto typed settings. Unknown keys and type errors raise
// ConfigError naming the key.
ResolvedConfig resolve_config(const ConfigDocument& doc);

// Materializes the configured dataset. Relative paths resolve against base.
DomainDataset load_dataset(const DataConfig& data, std::uint64_t run_seed,
                           const std::filesystem::path& base = {});

// Keys accepted by resolve_config, for documentation and error messages.
const std::vector<std::string>& known_config_keys();

}  // namespace cmss
