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

// Operation and weight-memory accounting.
//
// Counting convention: one multiply-accumulate is 2 ops. Convolutions count
// every kernel tap including padded positions, i.e. 2*C_out*H_out*W_out*C_in*kh*kw
// (depthwise: 2*C*H_out*W_out*kh*kw). Batch-norm, ReLU and pooling cost one op
// per element of the tensor they read. A fully connected layer costs
// 2*in*out. Zero candidates and skip additions are free.

#pragma once

#include <cmath>
#include <cstdint>

#include "kwsnas/architecture.hpp"
#include "kwsnas/quantization.hpp"

namespace kwsnas {

struct OpCost {
  std::uint64_t ops = 0;
  std::uint64_t weights = 0;         // quantize-flagged parameter count
  std::uint64_t exempt_params = 0;   // batch-norm scale/shift and fc bias

  OpCost& operator+=(const OpCost& o) {
    ops += o.ops;
    weights += o.weights;
    exempt_params += o.exempt_params;
    return *this;
  }
  friend OpCost operator+(OpCost a, const OpCost& b) { return a += b; }
  friend bool operator==(const OpCost&, const OpCost&) = default;

  /// Bytes for one copy of the weights at `spec`. Exempt parameters are
  /// stored as 32-bit floats when included.
  double bytes(const QuantizerSpec& spec, bool include_exempt = false) const {
    return memory_from_counts(weights, exempt_params, spec).total(include_exempt);
  }
};

namespace cost {

inline OpCost conv(std::size_t cin, std::size_t cout, std::size_t oh, std::size_t ow,
                   std::size_t kh, std::size_t kw) {
  return {2ull * cout * oh * ow * cin * kh * kw, cout * cin * kh * kw, 0};
}
inline OpCost depthwise(std::size_t c, std::size_t oh, std::size_t ow, std::size_t kh,
                        std::size_t kw) {
  return {2ull * c * oh * ow * kh * kw, c * kh * kw, 0};
}
inline OpCost batchnorm(std::size_t c, std::size_t h, std::size_t w) {
  return {c * h * w, 0, 2ull * c};
}
inline OpCost elementwise(std::size_t c, std::size_t h, std::size_t w) { return {c * h * w, 0, 0}; }
inline OpCost fully_connected(std::size_t in, std::size_t out) {
  return {2ull * in * out, in * out, out};
}

}  // namespace cost

/// Cost of one candidate op applied to a (channels, in_h, in_w) input.
inline OpCost candidate_cost(const CandidateOpSpec& spec, std::size_t in_channels, std::size_t in_h,
                             std::size_t in_w, std::size_t out_channels, Stride2 stride) {
  if (spec.is_zero()) return {};
  const std::size_t hidden = in_channels * static_cast<std::size_t>(spec.expansion);
  const std::size_t k = static_cast<std::size_t>(spec.kernel);
  const std::size_t oh = (in_h + stride.h - 1) / stride.h;
  const std::size_t ow = (in_w + stride.w - 1) / stride.w;
  OpCost c;
  c += cost::conv(in_channels, hidden, in_h, in_w, 1, 1);
  c += cost::batchnorm(hidden, in_h, in_w);
  c += cost::elementwise(hidden, in_h, in_w);
  c += cost::depthwise(hidden, oh, ow, k, k);
  c += cost::batchnorm(hidden, oh, ow);
  c += cost::elementwise(hidden, oh, ow);
  c += cost::conv(hidden, out_channels, oh, ow, 1, 1);
  c += cost::batchnorm(out_channels, oh, ow);
  return c;
}

inline OpCost candidate_cost(const CandidateOpSpec& spec, const LayerGeometry& g) {
  return candidate_cost(spec, g.in_channels, g.in_h, g.in_w, g.out_channels, g.stride);
}

inline OpCost stage1_cost(std::size_t out_channels, std::size_t kh, std::size_t kw,
                          std::size_t out_h, std::size_t out_w) {
  OpCost c = cost::conv(1, out_channels, out_h, out_w, kh, kw);
  c += cost::batchnorm(out_channels, out_h, out_w);
  c += cost::elementwise(out_channels, out_h, out_w);
  return c;
}

inline OpCost stage3_cost(std::size_t in_channels, std::size_t out_channels, std::size_t h,
                          std::size_t w, std::size_t classes) {
  OpCost c = cost::conv(in_channels, out_channels, h, w, 1, 1);
  c += cost::batchnorm(out_channels, h, w);
  c += cost::elementwise(out_channels, h, w);  // relu
  c += cost::elementwise(out_channels, h, w);  // pooling
  c += cost::fully_connected(out_channels, classes);
  return c;
}

/// Cost of stages (i) and (iii) for a network config.
inline OpCost fixed_stage_cost(const NetworkConfig& cfg) {
  const StageGeometry g = plan_geometry(cfg);
  return stage1_cost(cfg.channels(), cfg.stage1_kh, cfg.stage1_kw, g.stage1_out_h,
                     g.stage1_out_w) +
         stage3_cost(cfg.channels(), cfg.stage3_channels(), g.final_h, g.final_w,
                     cfg.num_classes);
}

/// Exact cost of one inference through a resolved architecture.
inline OpCost model_cost(const ArchitectureDescription& arch) {
  const std::size_t h1 = (arch.num_mfcc + arch.stage1_stride.h - 1) / arch.stage1_stride.h;
  const std::size_t w1 = (arch.num_frames + arch.stage1_stride.w - 1) / arch.stage1_stride.w;
  OpCost total = stage1_cost(arch.stage1_channels, arch.stage1_kh, arch.stage1_kw, h1, w1);
  std::size_t c = arch.stage1_channels, h = h1, w = w1;
  for (const auto& layer : arch.layers) {
    total += candidate_cost(layer.op, c, h, w, layer.channels, layer.stride);
    h = (h + layer.stride.h - 1) / layer.stride.h;
    w = (w + layer.stride.w - 1) / layer.stride.w;
    c = layer.channels;
  }
  total += stage3_cost(c, arch.stage3_channels, h, w, arch.num_classes);
  return total;
}

/// Σ fixed + Σ_layers Σ_i p_i * ops_i.
inline double expected_ops(double fixed_ops, std::span<const std::vector<double>> probs,
                           std::span<const std::vector<double>> candidate_ops) {
  require_dim(probs.size(), candidate_ops.size(), "layer count");
  double total = fixed_ops;
  for (std::size_t l = 0; l < probs.size(); ++l) {
    require_dim(probs[l].size(), candidate_ops[l].size(), "candidate count");
    for (std::size_t i = 0; i < probs[l].size(); ++i) total += probs[l][i] * candidate_ops[l][i];
  }
  return total;
}

struct TradeoffConfig {
  double beta = 0.0;
  double ops_target = 20e6;

  void validate() const {
    if (!(ops_target > 1.0)) throw std::invalid_argument("ops_target must be > 1");
    if (beta < 0.0) throw std::invalid_argument("beta must be >= 0");
  }
};

/// Regularized architecture loss CE * (log ops_exp / log ops_target)^beta and
/// its partial derivatives.
struct ArchLoss {
  double loss = 0.0;
  double scale = 1.0;          // (log ops_exp / log ops_target)^beta
  double d_loss_d_ce = 1.0;    // == scale
  double d_loss_d_ops = 0.0;   // through ops_exp only
};

inline ArchLoss arch_loss_terms(double ce, double ops_exp, const TradeoffConfig& cfg) {
  cfg.validate();
  if (!(ops_exp > 1.0)) throw std::domain_error("expected ops must be > 1 (log must be positive)");
  const double log_target = std::log(cfg.ops_target);
  const double ratio = std::log(ops_exp) / log_target;
  ArchLoss r;
  r.scale = cfg.beta == 0.0 ? 1.0 : std::pow(ratio, cfg.beta);
  r.loss = ce * r.scale;
  r.d_loss_d_ce = r.scale;
  r.d_loss_d_ops =
      cfg.beta == 0.0 ? 0.0 : ce * cfg.beta * std::pow(ratio, cfg.beta - 1.0) / (ops_exp * log_target);
  return r;
}

inline double arch_loss(double ce, double ops_exp, const TradeoffConfig& cfg) {
  return arch_loss_terms(ce, ops_exp, cfg).loss;
}

}  // namespace kwsnas
