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

// Finite-difference gradient checks for single layers and a small supernet.

#pragma once

#include "support/oracles.hpp"

namespace kwsnas::oracle {

struct LayerCase {
  std::string name;
  std::function<LayerPtr()> make;
  Shape input;
};

inline std::vector<LayerCase> layer_cases() {
  return {
      {"conv3x3", [] { return std::make_unique<ConvLayer>("c", LayerSpec::conv(2, 3, 3, 3)); }, {2, 2, 5, 6}},
      {"conv_s2", [] { return std::make_unique<ConvLayer>("c", LayerSpec::conv(2, 3, 5, 3, 2, 2)); }, {2, 2, 5, 6}},
      {"pointwise", [] { return std::make_unique<ConvLayer>("c", LayerSpec::conv(3, 4, 1, 1)); }, {2, 3, 4, 4}},
      {"depthwise", [] { return std::make_unique<ConvLayer>("d", LayerSpec::depthwise(3, 3, 2, 1)); }, {2, 3, 5, 5}},
      {"batchnorm", [] { return std::make_unique<BatchNormLayer>("b", 3); }, {4, 3, 2, 3}},
      {"relu", [] { return std::make_unique<ReLULayer>(); }, {2, 3, 3, 3}},
      {"pool", [] { return std::make_unique<GlobalAvgPoolLayer>(); }, {2, 3, 3, 4}},
      {"linear", [] { return std::make_unique<LinearLayer>("fc", 5, 3); }, {3, 5}},
      {"mbc", [] { return make_mbc_block("m", 2, 2, 3, 3, {1, 1}); }, {3, 2, 4, 5}},
      {"mbc_s2", [] { return make_mbc_block("m", 2, 3, 2, 3, {2, 2}); }, {3, 2, 5, 5}},
      {"residual_mbc", [] { return std::make_unique<ResidualLayer>(make_mbc_block("m", 2, 2, 2, 5, {1, 1})); },
       {3, 2, 4, 4}},
  };
}

/// Largest norm-relative error between analytic and central-difference
/// gradients of <r, layer(x)> w.r.t. x and every parameter.
inline double layer_gradient_error(Layer& layer, const Shape& in_shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  layer.reset_parameters(seed);
  for (Parameter* p : layer.parameters()) {
    for (auto& v : p->value.values()) v += 0.1 * std::normal_distribution<double>()(rng);
  }
  Tensor x = random_tensor(in_shape, rng);
  ForwardContext ctx;
  ctx.update_stats = false;
  const Tensor y0 = layer.forward(x, ctx);
  const Tensor r = random_tensor(y0.shape(), rng);
  zero_grads(layer.parameters());
  const Tensor gx = layer.backward(r, ctx);

  ForwardContext probe = ctx;
  probe.cache = false;
  auto loss = [&] { return dot(r, layer.forward(x, probe)); };
  double worst = rel_error(gx.values(), numeric_gradient(loss, x.data()));
  for (Parameter* p : layer.parameters()) {
    worst = std::max(worst, rel_error(p->value.grad(), numeric_gradient(loss, p->value.data())));
  }
  return worst;
}

/// Two searchable layers, tiny input, gates frozen at random candidates.
/// Compares the cross-entropy gradient of the input and of every parameter
/// on the active path; inactive parameters must have exactly zero gradient.
inline double supernet_gradient_error(std::uint64_t seed, bool* inactive_zero = nullptr) {
  NetworkConfig cfg;
  cfg.num_mfcc = 6;
  cfg.num_frames = 8;
  cfg.base_channels = 8;
  cfg.num_layers = 2;
  cfg.num_classes = 3;
  cfg.stage1_kh = 3;
  cfg.stage1_kw = 3;
  cfg.candidates = make_candidates({1, 2}, {3, 5});
  Supernet net(cfg, seed);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> gates;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    // Non-zero candidate so the path is non-trivial.
    gates.push_back(1 + std::uniform_int_distribution<std::size_t>(0, net.layer(l).size() - 2)(rng));
  }
  net.set_gates(gates);
  Tensor x = random_tensor(net.input_shape(3), rng);
  const std::vector<int> labels{0, 2, 1};
  ForwardContext ctx;
  ctx.update_stats = false;
  auto params = net.parameters();
  zero_grads(params);
  const LossResult lr = softmax_cross_entropy(net.forward(x, ctx), labels);
  const Tensor gx = net.backward(lr.grad_logits, ctx);

  ForwardContext probe = ctx;
  probe.cache = false;
  auto loss = [&] { return softmax_cross_entropy(net.forward(x, probe), labels).loss; };
  // Analytic and numeric gradients per tensor; tensors whose gradient is
  // near zero are judged against a floor scaled to the whole gradient.
  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
  pairs.emplace_back(std::vector<double>(gx.values().begin(), gx.values().end()), numeric_gradient(loss, x.data()));
  bool zero_ok = true;
  for (Parameter* p : params) {
    bool active = p->name.rfind("stage", 0) == 0;
    for (std::size_t l = 0; l < gates.size(); ++l) {
      const std::string prefix = net.layer(l).name() + "." + net.layer(l).candidates()[gates[l]].label() + ".";
      active = active || p->name.rfind(prefix, 0) == 0;
    }
    if (!active) {
      for (double g : p->value.grad()) zero_ok = zero_ok && g == 0.0;
      continue;
    }
    const auto g = p->value.grad();
    pairs.emplace_back(std::vector<double>(g.begin(), g.end()), numeric_gradient(loss, p->value.data()));
  }
  double total = 0;
  for (const auto& [a, n] : pairs)
    for (double v : a) total += v * v;
  const double floor = std::max(1e-8, 1e-3 * std::sqrt(total));
  double worst = 0;
  for (const auto& [a, n] : pairs) worst = std::max(worst, rel_error(a, n, floor));
  if (inactive_zero) *inactive_zero = zero_ok;
  return worst;
}

}  // namespace kwsnas::oracle
