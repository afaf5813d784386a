// SPDX-License-Identifier: Apache-2.0
//
// Copyright 2026 The kwsnas Authors
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

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kwsnas {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major array with an optional gradient buffer of the same length.
///
/// Activation tensors are (batch, channels, height, width).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  /// Allocates the gradient buffer (zero-filled) if absent.
  void ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  }
  void zero_grad() { std::fill(grad_.begin(), grad_.end(), 0.0); }
  void drop_grad() { grad_.clear(); }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

/// A weight tensor plus the flags that govern training and quantization.
///
/// When `quantize` is set and a quantizer is active, forward passes consume the
/// quantized view of `value`; updates are applied to `value` itself.
struct Parameter {
  std::string name;
  Tensor value;
  bool learnable = true;
  bool quantize = false;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool learn = true, bool quant = false)
      : name(std::move(n)), value(std::move(v)), learnable(learn), quantize(quant) {
    value.ensure_grad();
  }
};

enum class LayerKind { Conv2d, DepthwiseConv2d, BatchNorm, ReLU, GlobalAvgPool, FullyConnected };

struct Padding {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Conv2d;
  std::size_t kh = 1, kw = 1;
  std::size_t sh = 1, sw = 1;
  std::size_t in_channels = 0, out_channels = 0;
  Padding pad;

  /// Total padding k-1 per axis, split floor before / ceil after.
  static Padding same_padding(std::size_t kh, std::size_t kw) {
    return {(kh - 1) / 2, (kh - 1) - (kh - 1) / 2, (kw - 1) / 2, (kw - 1) - (kw - 1) / 2};
  }

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw,
                        std::size_t sh = 1, std::size_t sw = 1) {
    return {LayerKind::Conv2d, kh, kw, sh, sw, in, out, same_padding(kh, kw)};
  }
  static LayerSpec depthwise(std::size_t channels, std::size_t k, std::size_t sh = 1,
                             std::size_t sw = 1) {
    return {LayerKind::DepthwiseConv2d, k, k, sh, sw, channels, channels, same_padding(k, k)};
  }

  std::size_t out_h(std::size_t h) const { return (h + pad.top + pad.bottom - kh) / sh + 1; }
  std::size_t out_w(std::size_t w) const { return (w + pad.left + pad.right - kw) / sw + 1; }

  void validate() const {
    if (sh < 1 || sw < 1) throw ShapeError("stride components must be >= 1");
    if (kind == LayerKind::DepthwiseConv2d && in_channels != out_channels) {
      throw ShapeError("depthwise convolution requires in_channels == out_channels");
    }
  }
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     std::to_string(t.rank()) + " with shape " + shape_str(t.shape()));
  }
}

inline void require_dim(std::size_t got, std::size_t want, const std::string& name) {
  if (got != want) {
    throw ShapeError("dimension '" + name + "' mismatch: expected " + std::to_string(want) +
                     ", got " + std::to_string(got));
  }
}

}  // namespace kwsnas
