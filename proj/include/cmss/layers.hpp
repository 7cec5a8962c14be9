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

#include <memory>
#include <string>
#include <vector>

#include "cmss/random.hpp"
#include "cmss/tensor.hpp"

namespace cmss {

// Named view of one trainable array and its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix* value;
  Matrix* grad;
};

// A layer maps a batch (one sample per row) to a batch. forward() caches what
// backward() needs; backward() accumulates parameter gradients and returns
// the gradient with respect to the layer input. infer() leaves no trace.
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Matrix forward(const Matrix& input) = 0;
  virtual Matrix backward(const Matrix& grad_output) = 0;
  virtual Matrix infer(const Matrix& input) const = 0;

  virtual std::vector<Parameter> parameters() { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual std::string describe() const = 0;
};

class Dense final : public Layer {
 public:
  Dense(int in, int out);

  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  Matrix infer(const Matrix& input) const override;
  std::vector<Parameter> parameters() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }
  std::string describe() const override;

  // Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  void init_uniform(Rng& rng);
  void init_zero();

  Matrix& weight() { return weight_; }
  Matrix& bias() { return bias_; }

 private:
  Matrix weight_;  // out x in
  Matrix bias_;    // 1 x out
  Matrix weight_grad_;
  Matrix bias_grad_;
  Matrix input_cache_;
};

class Relu final : public Layer {
 public:
  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  Matrix infer(const Matrix& input) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }
  std::string describe() const override { return "relu"; }

 private:
  Matrix output_;
};

class Tanh final : public Layer {
 public:
  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  Matrix infer(const Matrix& input) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(*this); }
  std::string describe() const override { return "tanh"; }

 private:
  Matrix output_;
};

struct ImageDims {
  int channels;
  int height;
  int width;
  int size() const { return channels * height * width; }
};

// Square-kernel convolution, stride 1, zero padding. Rows hold C x H x W
// images in channel-major order.
class Conv2d final : public Layer {
 public:
  Conv2d(ImageDims input, int out_channels, int kernel, int padding);

  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  Matrix infer(const Matrix& input) const override;
  std::vector<Parameter> parameters() override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }
  std::string describe() const override;

  void init_uniform(Rng& rng);
  ImageDims output_dims() const { return output_; }

 private:
  Matrix im2col(const Eigen::Ref<const Eigen::RowVectorXd>& image) const;
  void col2im(const Matrix& cols, Eigen::Ref<Eigen::RowVectorXd> image) const;

  ImageDims input_;
  ImageDims output_;
  int kernel_;
  int padding_;
  Matrix weight_;  // out_c x (in_c * k * k)
  Matrix bias_;    // 1 x out_c
  Matrix weight_grad_;
  Matrix bias_grad_;
  Matrix input_cache_;
};

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
class MaxPool2d final : public Layer {
 public:
  explicit MaxPool2d(ImageDims input);

  Matrix forward(const Matrix& input) override;
  Matrix backward(const Matrix& grad_output) override;
  Matrix infer(const Matrix& input) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2d>(*this); }
  std::string describe() const override;
  ImageDims output_dims() const { return output_; }

 private:
  Matrix pool(const Matrix& input, std::vector<Eigen::Index>* argmax) const;

  ImageDims input_;
  ImageDims output_;
  std::vector<Eigen::Index> argmax_;
  Eigen::Index batch_ = 0;
};

class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(std::string name) : name_(std::move(name)) {}
  Sequential(const Sequential& other);
  Sequential& operator=(const Sequential& other);
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L>
  L& add(L layer) {
    layers_.push_back(std::make_unique<L>(std::move(layer)));
    return static_cast<L&>(*layers_.back());
  }

  Matrix forward(const Matrix& input);
  Matrix backward(const Matrix& grad_output);
  Matrix infer(const Matrix& input) const;

  // Names are "<sequential name>.<layer index>.<weight|bias>".
  std::vector<Parameter> parameters();
  void zero_grad();

  const std::string& name() const { return name_; }
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  std::string describe() const;

 private:
  std::string name_;
  std::vector<std::unique_ptr<Layer>> layers_;
};

}  // namespace cmss
