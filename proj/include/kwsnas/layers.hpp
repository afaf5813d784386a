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

#include <cstdint>
#include <memory>
#include <random>
#include <string_view>

#include "kwsnas/ops.hpp"
#include "kwsnas/quantization.hpp"

namespace kwsnas {

/// Flags shared by one forward/backward pass.
struct ForwardContext {
  bool training = true;      // batch-norm normalizes with batch statistics
  bool update_stats = true;  // batch-norm running moments are updated (training only)
  bool param_grads = true;   // backward accumulates parameter gradients
  bool cache = true;         // layers keep what backward needs
  QuantMode quant;           // active weight quantizer, nullopt = full precision

  static ForwardContext inference(QuantMode q = std::nullopt) {
    ForwardContext c;
    c.training = false;
    c.update_stats = false;
    c.param_grads = false;
    c.cache = false;
    c.quant = q;
    return c;
  }
};

/// Named non-learnable state (batch-norm running moments) for checkpointing.
struct Buffer {
  std::string name;
  std::vector<double>* data;
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Seed for a named parameter; identical names draw identical initial values.
inline std::uint64_t parameter_seed(std::uint64_t root, std::string_view name) {
  return fnv1a(name, root * 0x9E3779B97F4A7C15ull + 1469598103934665603ull);
}

/// Fan-in scaled normal initialization, std = sqrt(2 / fan_in).
inline void init_fan_in(Parameter& p, std::size_t fan_in, std::uint64_t root_seed) {
  std::mt19937_64 rng(parameter_seed(root_seed, p.name));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : p.value.values()) v = dist(rng);
}

class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) = 0;
  /// Returns d(loss)/d(input); accumulates parameter gradients when ctx.param_grads.
  virtual Tensor backward(const Tensor& grad_out, const ForwardContext& ctx) = 0;
  /// Output shape including the batch dimension.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual void reset_parameters(std::uint64_t /*seed*/) {}

  virtual std::vector<Parameter*> parameters() { return {}; }
  virtual std::vector<Buffer> buffers() { return {}; }
};

using LayerPtr = std::unique_ptr<Layer>;

/// Convolution (dense or depthwise) without bias. The weight is quantize-flagged.
class ConvLayer final : public Layer {
 public:
  ConvLayer(std::string name, LayerSpec spec) : spec_(spec) {
    spec_.validate();
    Shape wshape = spec.kind == LayerKind::DepthwiseConv2d
                       ? Shape{spec.out_channels, 1, spec.kh, spec.kw}
                       : Shape{spec.out_channels, spec.in_channels, spec.kh, spec.kw};
    weight_ = Parameter(std::move(name) + ".weight", Tensor(wshape), true, true);
  }

  const LayerSpec& spec() const { return spec_; }
  Parameter& weight() { return weight_; }
  const Parameter& weight() const { return weight_; }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    Tensor w = effective_weights(weight_, ctx.quant);
    Tensor y = spec_.kind == LayerKind::DepthwiseConv2d ? depthwise_conv2d_forward(x, w, spec_)
                                                        : conv2d_forward(x, w, spec_);
    if (ctx.cache) {
      input_ = x;
      used_weights_ = std::move(w);
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, const ForwardContext& ctx) override {
    Tensor gx(input_.shape());
    std::span<double> gw;
    if (ctx.param_grads && weight_.learnable) {
      weight_.value.ensure_grad();
      gw = weight_.value.grad();  // straight-through: d/dW_q lands on W unchanged
    }
    if (spec_.kind == LayerKind::DepthwiseConv2d) {
      depthwise_conv2d_backward(input_, used_weights_, spec_, grad_out, gx.data(), gw);
    } else {
      conv2d_backward(input_, used_weights_, spec_, grad_out, gx.data(), gw);
    }
    return gx;
  }

  Shape output_shape(const Shape& in) const override { return conv_output_shape(in, spec_); }
  LayerPtr clone() const override { return std::make_unique<ConvLayer>(*this); }

  void reset_parameters(std::uint64_t seed) override {
    const std::size_t fan_in =
        (spec_.kind == LayerKind::DepthwiseConv2d ? 1 : spec_.in_channels) * spec_.kh * spec_.kw;
    init_fan_in(weight_, fan_in, seed);
  }

  std::vector<Parameter*> parameters() override { return {&weight_}; }

 private:
  LayerSpec spec_;
  Parameter weight_;
  Tensor input_;
  Tensor used_weights_;
};

class BatchNormLayer final : public Layer {
 public:
  BatchNormLayer(const std::string& name, std::size_t channels)
      : gamma_(name + ".gamma", Tensor({channels}, 1.0)),
        beta_(name + ".beta", Tensor({channels}, 0.0)),
        state_(channels),
        name_(name) {}

  BatchNormState& state() { return state_; }
  Parameter& gamma() { return gamma_; }
  Parameter& beta() { return beta_; }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    const NormMode mode = ctx.training ? NormMode::Train : NormMode::Infer;
    return batchnorm_forward(x, gamma_.value, beta_.value, state_, mode,
                             ctx.cache ? &cache_ : nullptr, ctx.training && ctx.update_stats);
  }

  Tensor backward(const Tensor& grad_out, const ForwardContext& ctx) override {
    Tensor gx(cache_.normalized.shape());
    std::span<double> gg, gb;
    if (ctx.param_grads) {
      gamma_.value.ensure_grad();
      beta_.value.ensure_grad();
      gg = gamma_.value.grad();
      gb = beta_.value.grad();
    }
    batchnorm_backward(cache_, gamma_.value, grad_out, gx.data(), gg, gb);
    return gx;
  }

  Shape output_shape(const Shape& in) const override { return in; }
  LayerPtr clone() const override { return std::make_unique<BatchNormLayer>(*this); }

  void reset_parameters(std::uint64_t) override {
    gamma_.value.fill(1.0);
    beta_.value.fill(0.0);
    std::fill(state_.running_mean.begin(), state_.running_mean.end(), 0.0);
    std::fill(state_.running_var.begin(), state_.running_var.end(), 1.0);
  }

  std::vector<Parameter*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Buffer> buffers() override {
    return {{name_ + ".running_mean", &state_.running_mean},
            {name_ + ".running_var", &state_.running_var}};
  }

 private:
  Parameter gamma_, beta_;
  BatchNormState state_;
  BatchNormCache cache_;
  std::string name_;
};

class ReLULayer final : public Layer {
 public:
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    Tensor y = relu_forward(x);
    if (ctx.cache) output_ = y;
    return y;
  }
  Tensor backward(const Tensor& grad_out, const ForwardContext&) override {
    Tensor gx(output_.shape());
    relu_backward(output_, grad_out, gx.data());
    return gx;
  }
  Shape output_shape(const Shape& in) const override { return in; }
  LayerPtr clone() const override { return std::make_unique<ReLULayer>(*this); }

 private:
  Tensor output_;
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    if (ctx.cache) in_shape_ = x.shape();
    return global_avg_pool_forward(x);
  }
  Tensor backward(const Tensor& grad_out, const ForwardContext&) override {
    Tensor gx(in_shape_);
    global_avg_pool_backward(in_shape_, grad_out, gx.data());
    return gx;
  }
  Shape output_shape(const Shape& in) const override { return {in.at(0), in.at(1)}; }
  LayerPtr clone() const override { return std::make_unique<GlobalAvgPoolLayer>(*this); }

 private:
  Shape in_shape_;
};

/// Fully connected layer. Weight is quantize-flagged, bias stays full precision.
class LinearLayer final : public Layer {
 public:
  LinearLayer(const std::string& name, std::size_t in, std::size_t out)
      : weight_(name + ".weight", Tensor({out, in}), true, true),
        bias_(name + ".bias", Tensor({out}), true, false) {}

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    Tensor w = effective_weights(weight_, ctx.quant);
    Tensor y = fully_connected_forward(x, w, bias_.value);
    if (ctx.cache) {
      input_ = x;
      used_weights_ = std::move(w);
    }
    return y;
  }

  Tensor backward(const Tensor& grad_out, const ForwardContext& ctx) override {
    Tensor gx(input_.shape());
    std::span<double> gw, gb;
    if (ctx.param_grads) {
      weight_.value.ensure_grad();
      bias_.value.ensure_grad();
      gw = weight_.value.grad();
      gb = bias_.value.grad();
    }
    fully_connected_backward(input_, used_weights_, grad_out, gx.data(), gw, gb);
    return gx;
  }

  Shape output_shape(const Shape& in) const override { return {in.at(0), weight_.value.dim(0)}; }
  LayerPtr clone() const override { return std::make_unique<LinearLayer>(*this); }

  void reset_parameters(std::uint64_t seed) override {
    init_fan_in(weight_, weight_.value.dim(1), seed);
    bias_.value.fill(0.0);
  }

  std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }

 private:
  Parameter weight_, bias_;
  Tensor input_;
  Tensor used_weights_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  Sequential(const Sequential& other) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      layers_.clear();
      for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    return *this;
  }
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  Sequential& add(LayerPtr layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_.at(i); }
  const Layer& at(std::size_t i) const { return *layers_.at(i); }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    Tensor h = x;
    for (auto& l : layers_) h = l->forward(h, ctx);
    return h;
  }
  Tensor backward(const Tensor& grad_out, const ForwardContext& ctx) override {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, ctx);
    return g;
  }
  Shape output_shape(const Shape& in) const override {
    Shape s = in;
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
  }
  LayerPtr clone() const override { return std::make_unique<Sequential>(*this); }
  void reset_parameters(std::uint64_t seed) override {
    for (auto& l : layers_) l->reset_parameters(seed);
  }
  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
      auto p = l->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
  std::vector<Buffer> buffers() override {
    std::vector<Buffer> out;
    for (auto& l : layers_) {
      auto b = l->buffers();
      out.insert(out.end(), b.begin(), b.end());
    }
    return out;
  }

 private:
  std::vector<LayerPtr> layers_;
};

/// Produces zeros of the shape the layer would output.
class ZeroLayer final : public Layer {
 public:
  ZeroLayer(std::size_t out_channels, std::size_t sh, std::size_t sw)
      : channels_(out_channels), sh_(sh), sw_(sw) {}

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    if (ctx.cache) in_shape_ = x.shape();
    return Tensor(output_shape(x.shape()));
  }
  Tensor backward(const Tensor&, const ForwardContext&) override { return Tensor(in_shape_); }
  Shape output_shape(const Shape& in) const override {
    return {in.at(0), channels_, (in.at(2) + sh_ - 1) / sh_, (in.at(3) + sw_ - 1) / sw_};
  }
  LayerPtr clone() const override { return std::make_unique<ZeroLayer>(*this); }

 private:
  std::size_t channels_, sh_, sw_;
  Shape in_shape_;
};

/// y = x + inner(x); requires inner to preserve shape.
class ResidualLayer final : public Layer {
 public:
  explicit ResidualLayer(LayerPtr inner) : inner_(std::move(inner)) {}
  ResidualLayer(const ResidualLayer& o) : inner_(o.inner_->clone()) {}

  Layer& inner() { return *inner_; }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) override {
    Tensor y = inner_->forward(x, ctx);
    if (y.shape() != x.shape()) {
      throw ShapeError("residual branch changes shape " + shape_str(x.shape()) + " -> " +
                       shape_str(y.shape()));
    }
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += x[i];
    return y;
  }
  Tensor backward(const Tensor& grad_out, const ForwardContext& ctx) override {
    Tensor g = inner_->backward(grad_out, ctx);
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += grad_out[i];
    return g;
  }
  Shape output_shape(const Shape& in) const override { return in; }
  LayerPtr clone() const override { return std::make_unique<ResidualLayer>(*this); }
  void reset_parameters(std::uint64_t seed) override { inner_->reset_parameters(seed); }
  std::vector<Parameter*> parameters() override { return inner_->parameters(); }
  std::vector<Buffer> buffers() override { return inner_->buffers(); }

 private:
  LayerPtr inner_;
};

inline void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    p->value.ensure_grad();
    p->value.zero_grad();
  }
}

}  // namespace kwsnas
