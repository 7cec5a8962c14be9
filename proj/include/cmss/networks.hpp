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
#include <string>
#include <vector>

#include "cmss/datasets.hpp"
#include "cmss/layers.hpp"
#include "cmss/tensor.hpp"

namespace cmss {

enum class Preset { kMlpSynth, kDigitsSmall };
enum class Activation { kRelu, kTanh };

std::string to_string(Preset preset);
Preset preset_from_string(const std::string& name);
std::string to_string(Activation activation);
Activation activation_from_string(const std::string& name);

// Layer table for both presets (d_f = feature_dim()):
//
//   mlp_synth    F: dense(in->w_0) act ... dense(w_{k-1}->w_k) act, d_f = w_k
//   digits_small F: conv(64,5x5,pad 2) relu pool2, conv(64,5x5,pad 2) relu pool2,
//                   conv(128,5x5,pad 2) relu, dense(->fc) relu, d_f = fc
//                   (28x28 input: 128*7*7 = 6272 -> 1024)
//   both         C: dense(d_f->n_classes)
//                D: dense(d_f->h) act dense(h->1), or dense(d_f->1) when h == 0
//                G: copy of F's layer layout + dense(d_f->1), head zero-initialized
struct ArchitectureSpec {
  Preset preset = Preset::kMlpSynth;
  InputShape input{2, 1, 1};
  int n_classes = 4;
  // mlp_synth: hidden widths of F. digits_small: a single fc width.
  std::vector<int> feature_widths = {64, 64};
  std::vector<int> conv_channels = {64, 64, 128};
  int discriminator_hidden = 64;
  Activation activation = Activation::kRelu;

  int feature_dim() const;
  void validate() const;

  // Canonical "key=value" lines; from_text(to_text()) reproduces the spec.
  std::string to_text() const;
  static ArchitectureSpec from_text(const std::string& text);

  bool operator==(const ArchitectureSpec&) const = default;
};

ArchitectureSpec digits_small_spec(InputShape input, int n_classes);

// F (theta), C (phi), D (psi) and the curriculum manager G (rho). D emits a
// pre-activation; G consumes raw inputs and emits an unbounded score.
struct ModelBundle {
  ArchitectureSpec spec;
  Sequential feature{"F"};
  Sequential classifier{"C"};
  Sequential discriminator{"D"};
  Sequential curriculum{"G"};

  std::vector<Parameter> parameters();
  void zero_grad();
  // FNV-1a over the parameter bytes of one network.
  static std::uint64_t checksum(Sequential& net);
};

ModelBundle init_parameters(const ArchitectureSpec& spec, std::uint64_t seed);

// D's pre-activation is clamped to this range before the sigmoid.
inline constexpr double kDiscriminatorClamp = 15.0;

// Identity on the way forward; multiplies the gradient by -lambda on the way
// back.
class GradientReversal {
 public:
  explicit GradientReversal(double lambda);
  const Matrix& forward(const Matrix& x) const { return x; }
  Matrix backward(const Matrix& grad_output) const { return -lambda_ * grad_output; }
  double lambda() const { return lambda_; }

 private:
  double lambda_;
};

inline Matrix grad_reverse(const Matrix& x, double lambda) {
  return GradientReversal(lambda).forward(x);
}
inline Matrix grad_reverse_backward(const Matrix& grad_output, double lambda) {
  return GradientReversal(lambda).backward(grad_output);
}

struct ForwardOutputs {
  Matrix features_s;
  Matrix features_t;
  Matrix class_logits_s;
  Vector disc_preclamp_s;
  Vector disc_preclamp_t;
  Vector disc_logits_s;  // clamped
  Vector disc_logits_t;  // clamped
  Vector d_s;            // sigmoid(disc_logits_s), strictly inside (0, 1)
  Vector d_t;
  Vector raw_scores_s;
};

// Training forward: leaves every network's cache primed for backward().
// F and D run once over the concatenated [source; target] batch.
ForwardOutputs forward_all(ModelBundle& bundle, const Batch& batch);
// Cache-free forward for evaluation.
ForwardOutputs infer_all(const ModelBundle& bundle, const Batch& batch);

Vector clamp_logits(const Vector& preclamp);
// Zeroes gradient entries whose pre-activation sat outside the clamp.
Vector clamp_backward(const Vector& preclamp, const Vector& grad);
Vector sigmoid(const Vector& z);

// ---- checkpoint container ------------------------------------------------
//
// Little-endian: "CMSSCKPT", u32 version, architecture text, u32 n_arrays,
// then per array {name, u32 rows, u32 cols, rows*cols float64}, then u32
// n_meta and {key, value} string pairs. Strings are u32 length + bytes.
// Parameters are stored as float64 so training state round-trips exactly.

struct NamedArray {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  ArchitectureSpec spec;
  std::vector<NamedArray> arrays;
  std::map<std::string, std::string> metadata;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Parameters of the bundle as named arrays, and the inverse.
std::vector<NamedArray> export_parameters(ModelBundle& bundle);
ModelBundle bundle_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace cmss
