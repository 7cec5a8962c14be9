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

#include "cmss/networks.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cmss/binary_io.hpp"
#include "cmss/errors.hpp"

namespace cmss {

std::string to_string(Preset preset) {
  return preset == Preset::kMlpSynth ? "mlp_synth" : "digits_small";
}

Preset preset_from_string(const std::string& name) {
  if (name == "mlp_synth") return Preset::kMlpSynth;
  if (name == "digits_small") return Preset::kDigitsSmall;
  throw ConfigError(fmt::format("unknown architecture preset '{}'", name));
}

std::string to_string(Activation activation) {
  return activation == Activation::kRelu ? "relu" : "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError(fmt::format("unknown activation '{}'", name));
}

int ArchitectureSpec::feature_dim() const { return feature_widths.back(); }

void ArchitectureSpec::validate() const {
  if (n_classes < 2) throw ConfigError("n_classes must be at least 2");
  if (input.channels <= 0 || input.height <= 0 || input.width <= 0) {
    throw ConfigError("input shape must be positive");
  }
  if (feature_widths.empty()) throw ConfigError("feature_widths must not be empty");
  for (int w : feature_widths) {
    if (w <= 0) throw ConfigError("feature widths must be positive");
  }
  if (discriminator_hidden < 0) throw ConfigError("discriminator_hidden must be non-negative");
  if (preset == Preset::kDigitsSmall) {
    if (conv_channels.size() != 3) throw ConfigError("digits_small needs exactly 3 conv widths");
    if (feature_widths.size() != 1) throw ConfigError("digits_small takes a single fc width");
    if (input.height < 4 || input.width < 4) throw ConfigError("digits_small needs at least 4x4 inputs");
  }
}

std::string ArchitectureSpec::to_text() const {
  return fmt::format(
      "preset={}\ninput={}\nn_classes={}\nfeature_widths={}\nconv_channels={}\n"
      "discriminator_hidden={}\nactivation={}\n",
      to_string(preset), input.to_string(), n_classes, fmt::join(feature_widths, ","),
      fmt::join(conv_channels, ","), discriminator_hidden, to_string(activation));
}

namespace {

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

ArchitectureSpec ArchitectureSpec::from_text(const std::string& text) {
  ArchitectureSpec spec;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  try {
    while (std::getline(ss, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(fmt::format("bad architecture line '{}'", line));
      const std::string key = line.substr(0, eq);
      const std::string value = line.substr(eq + 1);
      seen.insert(key);
      if (key == "preset") {
        spec.preset = preset_from_string(value);
      } else if (key == "input") {
        int c = 0, h = 0, w = 0;
        if (std::sscanf(value.c_str(), "%dx%dx%d", &c, &h, &w) != 3) {
          throw ConfigError(fmt::format("bad input shape '{}'", value));
        }
        spec.input = InputShape{c, h, w};
      } else if (key == "n_classes") {
        spec.n_classes = std::stoi(value);
      } else if (key == "feature_widths") {
        spec.feature_widths = parse_int_list(value);
      } else if (key == "conv_channels") {
        spec.conv_channels = parse_int_list(value);
      } else if (key == "discriminator_hidden") {
        spec.discriminator_hidden = std::stoi(value);
      } else if (key == "activation") {
        spec.activation = activation_from_string(value);
      } else {
        throw ConfigError(fmt::format("unknown architecture key '{}'", key));
      }
    }
  } catch (const std::invalid_argument&) {
    throw ConfigError("malformed number in architecture text");
  } catch (const std::out_of_range&) {
    throw ConfigError("number out of range in architecture text");
  }
  spec.validate();
  return spec;
}

ArchitectureSpec digits_small_spec(InputShape input, int n_classes) {
  ArchitectureSpec spec;
  spec.preset = Preset::kDigitsSmall;
  spec.input = input;
  spec.n_classes = n_classes;
  spec.feature_widths = {1024};
  spec.conv_channels = {64, 64, 128};
  spec.discriminator_hidden = 1024;
  spec.activation = Activation::kRelu;
  return spec;
}

std::vector<Parameter> ModelBundle::parameters() {
  std::vector<Parameter> out;
  for (Sequential* net : {&feature, &classifier, &discriminator, &curriculum}) {
    auto p = net->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void ModelBundle::zero_grad() {
  feature.zero_grad();
  classifier.zero_grad();
  discriminator.zero_grad();
  curriculum.zero_grad();
}

std::uint64_t ModelBundle::checksum(Sequential& net) {
  io::Fnv1a h;
  for (const auto& p : net.parameters()) {
    h.update(p.value->data(), sizeof(double) * static_cast<std::size_t>(p.value->size()));
  }
  return h.digest();
}

namespace {

void add_activation(Sequential& net, Activation a) {
  if (a == Activation::kRelu) {
    net.add(Relu{});
  } else {
    net.add(Tanh{});
  }
}

// Builds F's layer layout into `net`, initializing weights from `rng`.
void build_trunk(const ArchitectureSpec& spec, Sequential& net, Rng& rng) {
  if (spec.preset == Preset::kMlpSynth) {
    int in = static_cast<int>(spec.input.size());
    for (int width : spec.feature_widths) {
      net.add(Dense(in, width)).init_uniform(rng);
      add_activation(net, spec.activation);
      in = width;
    }
    return;
  }
  ImageDims dims{spec.input.channels, spec.input.height, spec.input.width};
  for (std::size_t i = 0; i < spec.conv_channels.size(); ++i) {
    Conv2d& conv = net.add(Conv2d(dims, spec.conv_channels[i], 5, 2));
    conv.init_uniform(rng);
    dims = conv.output_dims();
    add_activation(net, spec.activation);
    if (i + 1 < spec.conv_channels.size()) {
      MaxPool2d& pool = net.add(MaxPool2d(dims));
      dims = pool.output_dims();
    }
  }
  net.add(Dense(dims.size(), spec.feature_widths[0])).init_uniform(rng);
  add_activation(net, spec.activation);
}

}  // namespace

ModelBundle init_parameters(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelBundle bundle;
  bundle.spec = spec;
  const int df = spec.feature_dim();

  Rng f_rng(derive_seed(seed, 10));
  build_trunk(spec, bundle.feature, f_rng);

  Rng c_rng(derive_seed(seed, 11));
  bundle.classifier.add(Dense(df, spec.n_classes)).init_uniform(c_rng);

  Rng d_rng(derive_seed(seed, 12));
  if (spec.discriminator_hidden > 0) {
    bundle.discriminator.add(Dense(df, spec.discriminator_hidden)).init_uniform(d_rng);
    add_activation(bundle.discriminator, spec.activation);
    bundle.discriminator.add(Dense(spec.discriminator_hidden, 1)).init_uniform(d_rng);
  } else {
    bundle.discriminator.add(Dense(df, 1)).init_uniform(d_rng);
  }

  Rng g_rng(derive_seed(seed, 13));
  build_trunk(spec, bundle.curriculum, g_rng);
  bundle.curriculum.add(Dense(df, 1)).init_zero();
  return bundle;
}

GradientReversal::GradientReversal(double lambda) : lambda_(lambda) {
  if (!std::isfinite(lambda)) throw ConfigError("gradient reversal lambda must be finite");
}

Vector clamp_logits(const Vector& preclamp) {
  return preclamp.cwiseMax(-kDiscriminatorClamp).cwiseMin(kDiscriminatorClamp);
}

Vector clamp_backward(const Vector& preclamp, const Vector& grad) {
  return (preclamp.array().abs() <= kDiscriminatorClamp).select(grad, 0.0);
}

Vector sigmoid(const Vector& z) { return (1.0 / (1.0 + (-z.array()).exp())).matrix(); }

namespace {

void check_batch(const ModelBundle& bundle, const Batch& batch) {
  const auto dim = static_cast<Eigen::Index>(bundle.spec.input.size());
  if (batch.source_inputs.cols() != dim ||
      (batch.target_inputs.rows() > 0 && batch.target_inputs.cols() != dim)) {
    throw ArtifactError(fmt::format("batch has {} input columns, architecture expects {} ({})",
                                    batch.source_inputs.cols(), dim,
                                    bundle.spec.input.to_string()));
  }
}

template <typename Run>
ForwardOutputs run_forward(const ModelBundle& bundle, const Batch& batch, Run&& run) {
  check_batch(bundle, batch);
  const Eigen::Index ns = batch.source_inputs.rows();
  const Eigen::Index nt = batch.target_inputs.rows();
  Matrix inputs(ns + nt, batch.source_inputs.cols());
  inputs.topRows(ns) = batch.source_inputs;
  if (nt > 0) inputs.bottomRows(nt) = batch.target_inputs;

  ForwardOutputs out;
  const Matrix features = run(0, inputs);
  out.features_s = features.topRows(ns);
  out.features_t = features.bottomRows(nt);
  out.class_logits_s = run(1, out.features_s);
  const Matrix disc = run(2, features);
  out.disc_preclamp_s = disc.col(0).head(ns);
  out.disc_preclamp_t = disc.col(0).tail(nt);
  out.disc_logits_s = clamp_logits(out.disc_preclamp_s);
  out.disc_logits_t = clamp_logits(out.disc_preclamp_t);
  out.d_s = sigmoid(out.disc_logits_s);
  out.d_t = sigmoid(out.disc_logits_t);
  out.raw_scores_s = run(3, batch.source_inputs).col(0);
  return out;
}

}  // namespace

ForwardOutputs forward_all(ModelBundle& bundle, const Batch& batch) {
  Sequential* nets[] = {&bundle.feature, &bundle.classifier, &bundle.discriminator,
                        &bundle.curriculum};
  return run_forward(bundle, batch,
                     [&](int i, const Matrix& x) { return nets[i]->forward(x); });
}

ForwardOutputs infer_all(const ModelBundle& bundle, const Batch& batch) {
  const Sequential* nets[] = {&bundle.feature, &bundle.classifier, &bundle.discriminator,
                              &bundle.curriculum};
  return run_forward(bundle, batch, [&](int i, const Matrix& x) { return nets[i]->infer(x); });
}

// ---- checkpoint -------------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[8] = {'C', 'M', 'S', 'S', 'C', 'K', 'P', 'T'};
}

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ArtifactError(fmt::format("cannot write checkpoint {}", path.string()));
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    io::write_le<std::uint32_t>(out, kCheckpointVersion);
    io::write_string(out, checkpoint.spec.to_text());
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.arrays.size()));
    for (const auto& a : checkpoint.arrays) {
      io::write_string(out, a.name);
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.value.rows()));
      io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.value.cols()));
      out.write(reinterpret_cast<const char*>(a.value.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(a.value.size())));
    }
    io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(checkpoint.metadata.size()));
    for (const auto& [k, v] : checkpoint.metadata) {
      io::write_string(out, k);
      io::write_string(out, v);
    }
    if (!out) throw ArtifactError(fmt::format("write failed for checkpoint {}", path.string()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError(fmt::format("cannot open checkpoint {}", path.string()));
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() != sizeof(magic) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw ArtifactError(fmt::format("{} is not a checkpoint", path.string()));
  }
  const auto version = io::read_le<std::uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw ArtifactError(fmt::format("unsupported checkpoint version {}", version));
  }
  Checkpoint ck;
  ck.spec = ArchitectureSpec::from_text(io::read_string(in, "architecture"));
  const auto n = io::read_le<std::uint32_t>(in, "array count");
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = io::read_string(in, "array name");
    const auto rows = io::read_le<std::uint32_t>(in, "rows");
    const auto cols = io::read_le<std::uint32_t>(in, "cols");
    a.value.resize(rows, cols);
    const auto bytes = static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(a.value.size()));
    in.read(reinterpret_cast<char*>(a.value.data()), bytes);
    if (in.gcount() != bytes) throw ArtifactError(fmt::format("truncated array {}", a.name));
    ck.arrays.push_back(std::move(a));
  }
  const auto m = io::read_le<std::uint32_t>(in, "metadata count");
  for (std::uint32_t i = 0; i < m; ++i) {
    std::string k = io::read_string(in, "metadata key");
    ck.metadata[k] = io::read_string(in, "metadata value");
  }
  return ck;
}

std::vector<NamedArray> export_parameters(ModelBundle& bundle) {
  std::vector<NamedArray> out;
  for (const auto& p : bundle.parameters()) out.push_back({p.name, *p.value});
  return out;
}

ModelBundle bundle_from_checkpoint(const Checkpoint& checkpoint) {
  ModelBundle bundle = init_parameters(checkpoint.spec, 0);
  std::map<std::string, const Matrix*> by_name;
  for (const auto& a : checkpoint.arrays) by_name[a.name] = &a.value;
  for (auto& p : bundle.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ArtifactError(fmt::format("checkpoint lacks parameter {}", p.name));
    if (it->second->rows() != p.value->rows() || it->second->cols() != p.value->cols()) {
      throw ArtifactError(fmt::format("parameter {} has shape {}x{}, expected {}x{}", p.name,
                                      it->second->rows(), it->second->cols(), p.value->rows(),
                                      p.value->cols()));
    }
    *p.value = *it->second;
  }
  return bundle;
}

}  // namespace cmss
