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

#include "cmss/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cmss/errors.hpp"

namespace cmss {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing comment that is not inside quotes.
std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

std::string unquote(const std::string& token, const std::string& where) {
  if (token.size() >= 2 && token.front() == '"' && token.back() == '"') {
    return token.substr(1, token.size() - 2);
  }
  if (!token.empty() && token.front() == '"') throw ConfigError(fmt::format("{}: unterminated string", where));
  return token;
}

ConfigValue parse_value(const std::string& raw, const std::string& where) {
  const std::string text = trim(raw);
  if (text.empty()) throw ConfigError(fmt::format("{}: missing value", where));
  ConfigValue v;
  if (text.front() == '[') {
    if (text.back() != ']') throw ConfigError(fmt::format("{}: unterminated list", where));
    v.kind = ConfigValue::Kind::kList;
    std::stringstream ss(text.substr(1, text.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (item.empty()) continue;
      v.items.push_back(unquote(item, where));
    }
    return v;
  }
  if (text.front() == '"') {
    v.kind = ConfigValue::Kind::kString;
    v.text = unquote(text, where);
    return v;
  }
  v.kind = ConfigValue::Kind::kScalar;
  v.text = text;
  return v;
}

}  // namespace

ConfigDocument ConfigDocument::parse(const std::string& text, const std::string& origin) {
  ConfigDocument doc;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string where = fmt::format("{}:{}", origin, line_no);
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(fmt::format("{}: malformed section header", where));
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(fmt::format("{}: empty section name", where));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("{}: expected key = value", where));
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("{}: empty key", where));
    const std::string full = section.empty() ? key : section + "." + key;
    if (doc.values_.count(full)) throw ConfigError(fmt::format("{}: duplicate key '{}'", where, full));
    doc.values_[full] = parse_value(line.substr(eq + 1), where);
  }
  return doc;
}

ConfigDocument ConfigDocument::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read config file {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

void ConfigDocument::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(fmt::format("override '{}' is not key=value", assignment));
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError(fmt::format("override '{}' has an empty key", assignment));
  values_[key] = parse_value(assignment.substr(eq + 1), "override " + key);
}

std::string ConfigDocument::to_text() const {
  std::string out;
  for (const auto& [key, v] : values_) {
    switch (v.kind) {
      case ConfigValue::Kind::kString:
        out += fmt::format("{} = \"{}\"\n", key, v.text);
        break;
      case ConfigValue::Kind::kScalar:
        out += fmt::format("{} = {}\n", key, v.text);
        break;
      case ConfigValue::Kind::kList: {
        std::vector<std::string> quoted;
        for (const auto& item : v.items) quoted.push_back(fmt::format("\"{}\"", item));
        out += fmt::format("{} = [{}]\n", key, fmt::join(quoted, ", "));
        break;
      }
    }
  }
  return out;
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "train.strategy", "train.iterations", "train.batch_source", "train.batch_target",
      "train.gamma", "train.seed", "train.eval_every", "train.snapshot_every",
      "train.dump_features", "train.metrics_window", "train.discriminator_weighted",
      "optimizer.kind", "optimizer.momentum", "optimizer.lr_features",
      "optimizer.lr_discriminator", "optimizer.lr_curriculum",
      "model.preset", "model.feature_widths", "model.conv_channels",
      "model.discriminator_hidden", "model.activation",
      "data.kind", "data.normalize", "data.seed", "data.n_source_domains", "data.n_classes",
      "data.samples_per_domain", "data.test_samples", "data.rotations_deg", "data.noise_std",
      "data.path", "data.source_images", "data.source_labels", "data.target_images",
      "data.target_labels", "data.test_images", "data.test_labels", "data.per_domain_limit",
      "data.manifest", "data.target_domain", "data.test_manifest"};
  return keys;
}

namespace {

class Reader {
 public:
  explicit Reader(const ConfigDocument& doc) : doc_(doc) {}

  const ConfigValue* find(const std::string& key) const {
    auto it = doc_.values().find(key);
    return it == doc_.values().end() ? nullptr : &it->second;
  }

  std::string scalar_text(const std::string& key, const ConfigValue& v) const {
    if (v.kind == ConfigValue::Kind::kList) throw ConfigError(fmt::format("{}: expected a single value", key));
    return v.text;
  }

  template <typename T>
  void number(const std::string& key, T& out) const {
    const ConfigValue* v = find(key);
    if (!v) return;
    out = parse_number<T>(key, scalar_text(key, *v));
  }

  void boolean(const std::string& key, bool& out) const {
    const ConfigValue* v = find(key);
    if (!v) return;
    const std::string t = scalar_text(key, *v);
    if (t == "true") {
      out = true;
    } else if (t == "false") {
      out = false;
    } else {
      throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, t));
    }
  }

  void string(const std::string& key, std::string& out) const {
    const ConfigValue* v = find(key);
    if (v) out = scalar_text(key, *v);
  }

  void path(const std::string& key, std::filesystem::path& out) const {
    const ConfigValue* v = find(key);
    if (v) out = scalar_text(key, *v);
  }

  template <typename T>
  void list(const std::string& key, std::vector<T>& out) const {
    const ConfigValue* v = find(key);
    if (!v) return;
    out.clear();
    if (v->kind != ConfigValue::Kind::kList) {
      out.push_back(convert<T>(key, v->text));
      return;
    }
    for (const auto& item : v->items) out.push_back(convert<T>(key, item));
  }

 private:
  template <typename T>
  static T convert(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, std::filesystem::path>) {
      return std::filesystem::path(text);
    } else {
      return parse_number<T>(key, text);
    }
  }

  template <typename T>
  static T parse_number(const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      if constexpr (std::is_floating_point_v<T>) {
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return static_cast<T>(v);
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!text.empty() && text[0] == '-') throw std::invalid_argument(text);
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return static_cast<T>(v);
      } else {
        const long long v = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return static_cast<T>(v);
      }
    } catch (const std::logic_error&) {
      throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, text));
    }
  }

  const ConfigDocument& doc_;
};

DataKind data_kind_from_string(const std::string& s) {
  if (s == "synthetic") return DataKind::kSynthetic;
  if (s == "export") return DataKind::kExport;
  if (s == "idx") return DataKind::kIdx;
  if (s == "manifest") return DataKind::kManifest;
  throw ConfigError(fmt::format("data.kind: unknown kind '{}'", s));
}

std::string to_string(DataKind kind) {
  switch (kind) {
    case DataKind::kSynthetic:
      return "synthetic";
    case DataKind::kExport:
      return "export";
    case DataKind::kIdx:
      return "idx";
    case DataKind::kManifest:
      return "manifest";
  }
  return "unknown";
}

}  // namespace

nlohmann::json DataConfig::to_json() const {
  nlohmann::json j = {{"kind", to_string(kind)}, {"normalize", standardize ? "standardize" : "none"}};
  if (seed) j["seed"] = *seed;
  auto paths = [](const std::vector<std::filesystem::path>& ps) {
    std::vector<std::string> out;
    for (const auto& p : ps) out.push_back(p.string());
    return out;
  };
  switch (kind) {
    case DataKind::kSynthetic:
      j["n_source_domains"] = synthetic.n_source_domains;
      j["n_classes"] = synthetic.n_classes;
      j["samples_per_domain"] = synthetic.samples_per_domain;
      j["test_samples"] = synthetic.test_samples;
      j["rotations_deg"] = synthetic.rotations_deg;
      j["noise_std"] = synthetic.noise_std;
      break;
    case DataKind::kExport:
      j["path"] = path.string();
      break;
    case DataKind::kIdx:
      j["source_images"] = paths(source_images);
      j["source_labels"] = paths(source_labels);
      j["target_images"] = target_images.string();
      j["target_labels"] = target_labels.string();
      j["test_images"] = test_images.string();
      j["test_labels"] = test_labels.string();
      j["per_domain_limit"] = per_domain_limit;
      j["n_classes"] = n_classes;
      break;
    case DataKind::kManifest:
      j["manifest"] = path.string();
      j["target_domain"] = target_domain;
      j["test_manifest"] = test_manifest.string();
      j["per_domain_limit"] = per_domain_limit;
      j["n_classes"] = n_classes;
      break;
  }
  return j;
}

ResolvedConfig resolve_config(const ConfigDocument& doc) {
  const auto& known = known_config_keys();
  for (const auto& [key, _] : doc.values()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError(fmt::format("unknown config key '{}'", key));
    }
  }
  Reader r(doc);
  ResolvedConfig cfg;
  TrainConfig& t = cfg.train;

  std::string text = to_string(t.strategy);
  r.string("train.strategy", text);
  t.strategy = strategy_from_string(text);
  r.number("train.iterations", t.iterations);
  r.number("train.batch_source", t.batch_source);
  r.number("train.batch_target", t.batch_target);
  r.number("train.gamma", t.gamma);
  r.number("train.seed", t.seed);
  r.number("train.eval_every", t.eval_every);
  r.number("train.snapshot_every", t.snapshot_every);
  r.boolean("train.dump_features", t.dump_features);
  r.number("train.metrics_window", t.metrics_window);
  r.boolean("train.discriminator_weighted", t.discriminator_weighted);

  text = to_string(t.optimizer);
  r.string("optimizer.kind", text);
  t.optimizer = optimizer_from_string(text);
  r.number("optimizer.momentum", t.momentum);
  r.number("optimizer.lr_features", t.lr_features);
  r.number("optimizer.lr_discriminator", t.lr_discriminator);
  r.number("optimizer.lr_curriculum", t.lr_curriculum);
  if (t.strategy == Strategy::kCmss && !(t.lr_curriculum > 0.0)) {
    throw ConfigError("optimizer.lr_curriculum must be positive for the cmss strategy");
  }
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("train: {}", e.what()));
  }

  ArchitectureSpec& m = cfg.model;
  text = to_string(m.preset);
  r.string("model.preset", text);
  m.preset = preset_from_string(text);
  if (m.preset == Preset::kDigitsSmall) {
    m = digits_small_spec(m.input, m.n_classes);
  }
  r.list("model.feature_widths", m.feature_widths);
  r.list("model.conv_channels", m.conv_channels);
  r.number("model.discriminator_hidden", m.discriminator_hidden);
  text = to_string(m.activation);
  r.string("model.activation", text);
  m.activation = activation_from_string(text);

  DataConfig& d = cfg.data;
  text = to_string(d.kind);
  r.string("data.kind", text);
  d.kind = data_kind_from_string(text);
  text = "none";
  r.string("data.normalize", text);
  if (text != "none" && text != "standardize") {
    throw ConfigError(fmt::format("data.normalize: expected none or standardize, got '{}'", text));
  }
  d.standardize = text == "standardize";
  if (doc.contains("data.seed")) {
    std::uint64_t s = 0;
    r.number("data.seed", s);
    d.seed = s;
  }
  SyntheticConfig& s = d.synthetic;
  r.number("data.n_source_domains", s.n_source_domains);
  r.number("data.n_classes", d.kind == DataKind::kSynthetic ? s.n_classes : d.n_classes);
  r.number("data.samples_per_domain", s.samples_per_domain);
  r.number("data.test_samples", s.test_samples);
  r.list("data.rotations_deg", s.rotations_deg);
  r.number("data.noise_std", s.noise_std);
  r.path("data.path", d.path);
  r.list("data.source_images", d.source_images);
  r.list("data.source_labels", d.source_labels);
  r.path("data.target_images", d.target_images);
  r.path("data.target_labels", d.target_labels);
  r.path("data.test_images", d.test_images);
  r.path("data.test_labels", d.test_labels);
  r.number("data.per_domain_limit", d.per_domain_limit);
  if (doc.contains("data.manifest")) r.path("data.manifest", d.path);
  r.number("data.target_domain", d.target_domain);
  r.path("data.test_manifest", d.test_manifest);

  if (d.kind == DataKind::kSynthetic) {
    if (s.rotations_deg.size() != static_cast<std::size_t>(s.n_source_domains) + 1) {
      throw ConfigError(fmt::format("data.rotations_deg: need {} angles, got {}", s.n_source_domains + 1,
                                    s.rotations_deg.size()));
    }
    if (std::isnan(s.noise_std)) throw ConfigError("data.noise_std: must not be NaN");
  }
  if (d.kind == DataKind::kIdx && d.source_images.size() != d.source_labels.size()) {
    throw ConfigError("data.source_labels: one labels file per source images file is required");
  }
  return cfg;
}

DomainDataset load_dataset(const DataConfig& data, std::uint64_t run_seed,
                           const std::filesystem::path& base) {
  const std::uint64_t seed = data.seed.value_or(run_seed);
  auto resolve = [&](const std::filesystem::path& p) {
    return p.is_relative() && !base.empty() ? base / p : p;
  };
  const std::optional<std::size_t> limit =
      data.per_domain_limit > 0 ? std::optional<std::size_t>(data.per_domain_limit) : std::nullopt;

  DomainDataset out = [&]() -> DomainDataset {
    switch (data.kind) {
      case DataKind::kSynthetic: {
        SyntheticConfig s = data.synthetic;
        s.seed = seed;
        return generate_synthetic(s);
      }
      case DataKind::kExport:
        return read_synthetic_export(resolve(data.path));
      case DataKind::kIdx: {
        if (data.source_images.empty()) throw ConfigError("data.source_images: at least one source is required");
        std::vector<LabeledSet> sources;
        for (std::size_t i = 0; i < data.source_images.size(); ++i) {
          sources.push_back(load_idx_dataset(resolve(data.source_images[i]), resolve(data.source_labels[i])));
        }
        const LabeledSet target = load_idx_dataset(resolve(data.target_images), resolve(data.target_labels));
        const LabeledSet test = data.test_images.empty()
                                    ? target
                                    : load_idx_dataset(resolve(data.test_images), resolve(data.test_labels));
        return assemble_domains(sources, target, test, data.n_classes, limit, seed);
      }
      case DataKind::kManifest: {
        auto domains = load_manifest(resolve(data.path));
        if (data.target_domain < 0 || static_cast<std::size_t>(data.target_domain) >= domains.size()) {
          throw ConfigError(fmt::format("data.target_domain: {} is not a domain in the manifest", data.target_domain));
        }
        LabeledSet target = domains[static_cast<std::size_t>(data.target_domain)];
        LabeledSet test = target;
        if (!data.test_manifest.empty()) {
          auto test_domains = load_manifest(resolve(data.test_manifest));
          if (static_cast<std::size_t>(data.target_domain) >= test_domains.size()) {
            throw ConfigError("data.test_manifest: target domain missing");
          }
          test = test_domains[static_cast<std::size_t>(data.target_domain)];
        }
        std::vector<LabeledSet> sources;
        for (std::size_t i = 0; i < domains.size(); ++i) {
          if (static_cast<int>(i) != data.target_domain && domains[i].inputs.rows() > 0) {
            sources.push_back(domains[i]);
          }
        }
        return assemble_domains(sources, target, test, data.n_classes, limit, seed);
      }
    }
    throw ConfigError("unknown data kind");
  }();
  return data.standardize ? standardize_inputs(out) : out;
}

}  // namespace cmss
