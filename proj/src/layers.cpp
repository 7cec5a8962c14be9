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

#include "cmss/layers.hpp"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "cmss/errors.hpp"

namespace cmss {

namespace {

void expect_cols(const Matrix& input, Eigen::Index cols, const std::string& layer) {
  if (input.cols() != cols) {
    throw ArtifactError(
        fmt::format("{} expects {} input columns, got {}", layer, cols, input.cols()));
  }
}

}  // namespace

// ---- Dense ----------------------------------------------------------------

Dense::Dense(int in, int out)
    : weight_(Matrix::Zero(out, in)),
      bias_(Matrix::Zero(1, out)),
      weight_grad_(Matrix::Zero(out, in)),
      bias_grad_(Matrix::Zero(1, out)) {}

Matrix Dense::infer(const Matrix& input) const {
  expect_cols(input, weight_.cols(), describe());
  Matrix out = input * weight_.transpose();
  out.rowwise() += bias_.row(0);
  return out;
}

Matrix Dense::forward(const Matrix& input) {
  input_cache_ = input;
  return infer(input);
}

Matrix Dense::backward(const Matrix& grad_output) {
  weight_grad_.noalias() += grad_output.transpose() * input_cache_;
  bias_grad_ += grad_output.colwise().sum();
  return grad_output * weight_;
}

std::vector<Parameter> Dense::parameters() {
  return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
}

std::string Dense::describe() const {
  return fmt::format("dense({}->{})", weight_.cols(), weight_.rows());
}

void Dense::init_uniform(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight_.cols()));
  for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = uniform(rng, -bound, bound);
  for (Eigen::Index i = 0; i < bias_.size(); ++i) bias_.data()[i] = uniform(rng, -bound, bound);
}

void Dense::init_zero() {
  weight_.setZero();
  bias_.setZero();
}

// ---- activations ------------------------------------------------------------

Matrix Relu::infer(const Matrix& input) const { return input.cwiseMax(0.0); }

Matrix Relu::forward(const Matrix& input) {
  output_ = infer(input);
  return output_;
}

Matrix Relu::backward(const Matrix& grad_output) {
  return (output_.array() > 0.0).select(grad_output, 0.0);
}

Matrix Tanh::infer(const Matrix& input) const { return input.array().tanh().matrix(); }

Matrix Tanh::forward(const Matrix& input) {
  output_ = infer(input);
  return output_;
}

Matrix Tanh::backward(const Matrix& grad_output) {
  return (grad_output.array() * (1.0 - output_.array().square())).matrix();
}

// ---- Conv2d -----------------------------------------------------------------

Conv2d::Conv2d(ImageDims input, int out_channels, int kernel, int padding)
    : input_(input), kernel_(kernel), padding_(padding) {
  output_ = ImageDims{out_channels, input.height + 2 * padding - kernel + 1,
                      input.width + 2 * padding - kernel + 1};
  if (output_.height <= 0 || output_.width <= 0) {
    throw ConfigError(fmt::format("conv kernel {} does not fit a {}x{} input", kernel,
                                  input.height, input.width));
  }
  const int fan_in = input.channels * kernel * kernel;
  weight_ = Matrix::Zero(out_channels, fan_in);
  bias_ = Matrix::Zero(1, out_channels);
  weight_grad_ = Matrix::Zero(out_channels, fan_in);
  bias_grad_ = Matrix::Zero(1, out_channels);
}

Matrix Conv2d::im2col(const Eigen::Ref<const Eigen::RowVectorXd>& image) const {
  const int k = kernel_;
  Matrix cols = Matrix::Zero(input_.channels * k * k, output_.height * output_.width);
  for (int c = 0; c < input_.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < output_.height; ++oy) {
          const int iy = oy + ky - padding_;
          if (iy < 0 || iy >= input_.height) continue;
          for (int ox = 0; ox < output_.width; ++ox) {
            const int ix = ox + kx - padding_;
            if (ix < 0 || ix >= input_.width) continue;
            cols(row, oy * output_.width + ox) = image((c * input_.height + iy) * input_.width + ix);
          }
        }
      }
    }
  }
  return cols;
}

void Conv2d::col2im(const Matrix& cols, Eigen::Ref<Eigen::RowVectorXd> image) const {
  const int k = kernel_;
  image.setZero();
  for (int c = 0; c < input_.channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Eigen::Index row = (c * k + ky) * k + kx;
        for (int oy = 0; oy < output_.height; ++oy) {
          const int iy = oy + ky - padding_;
          if (iy < 0 || iy >= input_.height) continue;
          for (int ox = 0; ox < output_.width; ++ox) {
            const int ix = ox + kx - padding_;
            if (ix < 0 || ix >= input_.width) continue;
            image((c * input_.height + iy) * input_.width + ix) += cols(row, oy * output_.width + ox);
          }
        }
      }
    }
  }
}

Matrix Conv2d::infer(const Matrix& input) const {
  expect_cols(input, input_.size(), describe());
  const Eigen::Index spatial = output_.height * output_.width;
  Matrix out(input.rows(), output_.size());
  for (Eigen::Index n = 0; n < input.rows(); ++n) {
    Matrix result = weight_ * im2col(input.row(n));
    result.colwise() += bias_.row(0).transpose();
    out.row(n) = Eigen::Map<const Eigen::RowVectorXd>(result.data(), output_.channels * spatial);
  }
  return out;
}

Matrix Conv2d::forward(const Matrix& input) {
  input_cache_ = input;
  return infer(input);
}

Matrix Conv2d::backward(const Matrix& grad_output) {
  const Eigen::Index spatial = output_.height * output_.width;
  Matrix grad_input(input_cache_.rows(), input_.size());
  for (Eigen::Index n = 0; n < input_cache_.rows(); ++n) {
    const Matrix cols = im2col(input_cache_.row(n));
    Eigen::Map<const Matrix> g(grad_output.row(n).data(), output_.channels, spatial);
    weight_grad_.noalias() += g * cols.transpose();
    bias_grad_ += g.rowwise().sum().transpose();
    const Matrix grad_cols = weight_.transpose() * g;
    Eigen::RowVectorXd image(input_.size());
    col2im(grad_cols, image);
    grad_input.row(n) = image;
  }
  return grad_input;
}

std::vector<Parameter> Conv2d::parameters() {
  return {{"weight", &weight_, &weight_grad_}, {"bias", &bias_, &bias_grad_}};
}

std::string Conv2d::describe() const {
  return fmt::format("conv({}x{}x{} -> {}, {}x{}, pad {})", input_.channels, input_.height,
                     input_.width, output_.channels, kernel_, kernel_, padding_);
}

void Conv2d::init_uniform(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight_.cols()));
  for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = uniform(rng, -bound, bound);
  for (Eigen::Index i = 0; i < bias_.size(); ++i) bias_.data()[i] = uniform(rng, -bound, bound);
}

// ---- MaxPool2d --------------------------------------------------------------

MaxPool2d::MaxPool2d(ImageDims input)
    : input_(input), output_{input.channels, input.height / 2, input.width / 2} {
  if (output_.height == 0 || output_.width == 0) {
    throw ConfigError(fmt::format("cannot pool a {}x{} map", input.height, input.width));
  }
}

Matrix MaxPool2d::pool(const Matrix& input, std::vector<Eigen::Index>* argmax) const {
  expect_cols(input, input_.size(), describe());
  Matrix out(input.rows(), output_.size());
  if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
  for (Eigen::Index n = 0; n < input.rows(); ++n) {
    for (int c = 0; c < output_.channels; ++c) {
      for (int oy = 0; oy < output_.height; ++oy) {
        for (int ox = 0; ox < output_.width; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          Eigen::Index best_idx = 0;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const Eigen::Index idx =
                  (c * input_.height + 2 * oy + dy) * input_.width + 2 * ox + dx;
              if (input(n, idx) > best) {
                best = input(n, idx);
                best_idx = idx;
              }
            }
          }
          const Eigen::Index o = (c * output_.height + oy) * output_.width + ox;
          out(n, o) = best;
          if (argmax) (*argmax)[static_cast<std::size_t>(n * output_.size() + o)] = best_idx;
        }
      }
    }
  }
  return out;
}

Matrix MaxPool2d::infer(const Matrix& input) const { return pool(input, nullptr); }

Matrix MaxPool2d::forward(const Matrix& input) {
  batch_ = input.rows();
  return pool(input, &argmax_);
}

Matrix MaxPool2d::backward(const Matrix& grad_output) {
  Matrix grad_input = Matrix::Zero(batch_, input_.size());
  for (Eigen::Index n = 0; n < batch_; ++n) {
    for (Eigen::Index o = 0; o < output_.size(); ++o) {
      grad_input(n, argmax_[static_cast<std::size_t>(n * output_.size() + o)]) += grad_output(n, o);
    }
  }
  return grad_input;
}

std::string MaxPool2d::describe() const {
  return fmt::format("maxpool2({}x{}x{})", input_.channels, input_.height, input_.width);
}

// ---- Sequential -------------------------------------------------------------

Sequential::Sequential(const Sequential& other) : name_(other.name_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Sequential& Sequential::operator=(const Sequential& other) {
  if (this != &other) {
    Sequential copy(other);
    *this = std::move(copy);
  }
  return *this;
}

Matrix Sequential::forward(const Matrix& input) {
  Matrix x = input;
  for (auto& l : layers_) x = l->forward(x);
  return x;
}

Matrix Sequential::backward(const Matrix& grad_output) {
  Matrix g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Matrix Sequential::infer(const Matrix& input) const {
  Matrix x = input;
  for (const auto& l : layers_) x = l->infer(x);
  return x;
}

std::vector<Parameter> Sequential::parameters() {
  std::vector<Parameter> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (auto p : layers_[i]->parameters()) {
      p.name = fmt::format("{}.{}.{}", name_, i, p.name);
      out.push_back(p);
    }
  }
  return out;
}

void Sequential::zero_grad() {
  for (auto& p : parameters()) p.grad->setZero();
}

std::string Sequential::describe() const {
  std::string out;
  for (const auto& l : layers_) {
    if (!out.empty()) out += " -> ";
    out += l->describe();
  }
  return out;
}

}  // namespace cmss
