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

#include <optional>
#include <random>

#include "kwsnas/architecture.hpp"
#include "kwsnas/cost_model.hpp"
#include "kwsnas/layers.hpp"

namespace kwsnas {

/// Inverted bottleneck: 1x1 expand -> BN -> ReLU -> kxk depthwise (strided)
/// -> BN -> ReLU -> 1x1 project -> BN. No skip; callers add it.
inline LayerPtr make_mbc_block(const std::string& name, std::size_t in_channels,
                               std::size_t out_channels, int expansion, int kernel,
                               Stride2 stride) {
  const std::size_t hidden = in_channels * static_cast<std::size_t>(expansion);
  const auto k = static_cast<std::size_t>(kernel);
  auto block = std::make_unique<Sequential>();
  block->emplace<ConvLayer>(name + ".expand", LayerSpec::conv(in_channels, hidden, 1, 1));
  block->emplace<BatchNormLayer>(name + ".expand_bn", hidden);
  block->emplace<ReLULayer>();
  block->emplace<ConvLayer>(name + ".depthwise",
                            LayerSpec::depthwise(hidden, k, stride.h, stride.w));
  block->emplace<BatchNormLayer>(name + ".depthwise_bn", hidden);
  block->emplace<ReLULayer>();
  block->emplace<ConvLayer>(name + ".project", LayerSpec::conv(hidden, out_channels, 1, 1));
  block->emplace<BatchNormLayer>(name + ".project_bn", out_channels);
  return block;
}

inline LayerPtr make_candidate(const std::string& layer_name, const CandidateOpSpec& spec,
                               const LayerGeometry& g) {
  if (spec.is_zero()) return std::make_unique<ZeroLayer>(g.out_channels, g.stride.h, g.stride.w);
  return make_mbc_block(layer_name + "." + spec.label(), g.in_channels, g.out_channels,
                        spec.expansion, spec.kernel, g.stride);
}

inline Sequential make_stage1(std::size_t channels, std::size_t kh, std::size_t kw,
                              Stride2 stride) {
  Sequential s;
  s.emplace<ConvLayer>("stage1.conv", LayerSpec::conv(1, channels, kh, kw, stride.h, stride.w));
  s.emplace<BatchNormLayer>("stage1.bn", channels);
  s.emplace<ReLULayer>();
  return s;
}

inline Sequential make_stage3(std::size_t in_channels, std::size_t channels, std::size_t classes) {
  Sequential s;
  s.emplace<ConvLayer>("stage3.conv", LayerSpec::conv(in_channels, channels, 1, 1));
  s.emplace<BatchNormLayer>("stage3.bn", channels);
  s.emplace<ReLULayer>();
  s.emplace<GlobalAvgPoolLayer>();
  s.emplace<LinearLayer>("stage3.fc", channels, classes);
  return s;
}

/// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> alphas) {
  std::vector<double> p(alphas.size());
  if (alphas.empty()) return p;
  const double mx = *std::max_element(alphas.begin(), alphas.end());
  double z = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) z += (p[i] = std::exp(alphas[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

/// dL/dalpha_i = sum_j dL/dp_j * p_j * (delta_ij - p_i).
inline std::vector<double> softmax_backward(std::span<const double> probs,
                                            std::span<const double> grad_probs) {
  double dot = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) dot += grad_probs[j] * probs[j];
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (grad_probs[i] - dot);
  return g;
}

/// Index drawn with probability probs[i].
template <typename Rng>
std::size_t sample_index(std::span<const double> probs, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = u(rng);
  double cum = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    cum += probs[i];
    if (r < cum) return i;
  }
  return last_positive;
}

/// Architecture parameters of one searchable layer.
struct LayerChoice {
  std::vector<double> alphas;
  std::optional<std::size_t> gate;  // index of the single active candidate
  std::vector<double> alpha_grad;   // last architecture-step gradient

  std::vector<double> probs() const { return softmax(alphas); }

  template <typename Rng>
  std::size_t sample_gate(Rng& rng) {
    const auto p = probs();
    gate = sample_index(p, rng);
    return *gate;
  }

  /// One-hot view of the gate.
  std::vector<double> gate_vector() const {
    std::vector<double> g(alphas.size(), 0.0);
    if (gate) g.at(*gate) = 1.0;
    return g;
  }
};

enum class MixedMode { Sampled, All };

struct MixedOutput {
  Tensor output;
  std::vector<Tensor> candidate_outputs;  // filled in MixedMode::All
};

/// One stage-(ii) layer: every candidate op in parallel behind a one-hot gate.
class SearchableLayer {
 public:
  SearchableLayer(std::string name, const LayerGeometry& geometry,
                  const std::vector<CandidateOpSpec>& candidates)
      : name_(std::move(name)), geometry_(geometry), specs_(candidates) {
    choice_.alphas.assign(candidates.size(), 0.0);
    for (const auto& spec : candidates) {
      ops_.push_back(make_candidate(name_, spec, geometry));
      costs_.push_back(candidate_cost(spec, geometry));
    }
  }
  SearchableLayer(const SearchableLayer& o)
      : name_(o.name_), geometry_(o.geometry_), specs_(o.specs_), costs_(o.costs_),
        choice_(o.choice_) {
    for (const auto& op : o.ops_) ops_.push_back(op->clone());
  }
  SearchableLayer(SearchableLayer&&) = default;

  const std::string& name() const { return name_; }
  const LayerGeometry& geometry() const { return geometry_; }
  bool has_skip() const { return geometry_.has_skip(); }
  std::size_t size() const { return specs_.size(); }
  const std::vector<CandidateOpSpec>& candidates() const { return specs_; }
  const std::vector<OpCost>& costs() const { return costs_; }
  std::vector<double> candidate_ops() const {
    std::vector<double> v;
    for (const auto& c : costs_) v.push_back(static_cast<double>(c.ops));
    return v;
  }
  Layer& candidate(std::size_t i) { return *ops_.at(i); }
  LayerChoice& choice() { return choice_; }
  const LayerChoice& choice() const { return choice_; }

  std::size_t active() const {
    if (!choice_.gate) throw std::logic_error(name_ + ": gate not set");
    return *choice_.gate;
  }

  /// o_j(x) alone, without the skip path.
  Tensor candidate_forward(std::size_t j, const Tensor& x, const ForwardContext& ctx) {
    return ops_.at(j)->forward(x, ctx);
  }

  MixedOutput mixed_forward(const Tensor& x, const ForwardContext& ctx, MixedMode mode) {
    const std::size_t g = active();
    MixedOutput out;
    if (mode == MixedMode::All) {
      ForwardContext side = ctx;
      side.cache = false;
      side.update_stats = false;
      for (std::size_t j = 0; j < ops_.size(); ++j) {
        out.candidate_outputs.push_back(j == g ? Tensor{} : ops_[j]->forward(x, side));
      }
    }
    Tensor y = ops_[g]->forward(x, ctx);
    if (mode == MixedMode::All) {
      out.candidate_outputs[g] = y;
      for (const auto& o : out.candidate_outputs) {
        if (o.shape() != y.shape()) {
          throw ShapeError(name_ + ": candidate output shapes disagree " + shape_str(o.shape()) +
                           " vs " + shape_str(y.shape()));
        }
      }
    }
    if (has_skip()) {
      for (std::size_t i = 0; i < y.numel(); ++i) y[i] += x[i];
    }
    if (ctx.cache) input_ = x;
    out.output = std::move(y);
    return out;
  }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) {
    return mixed_forward(x, ctx, MixedMode::Sampled).output;
  }

  Tensor backward(const Tensor& grad_out, const ForwardContext& ctx) {
    grad_output_ = grad_out;
    Tensor g = ops_[active()]->backward(grad_out, ctx);
    if (has_skip()) {
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += grad_out[i];
    }
    return g;
  }

  /// dL/dg_j = <dL/dm, o_j(x)> for every candidate j, using the input and
  /// output gradient recorded by the last forward/backward pair.
  std::vector<double> gate_gradients(const ForwardContext& ctx) {
    ForwardContext side = ctx;
    side.cache = false;
    side.update_stats = false;
    std::vector<double> g(ops_.size(), 0.0);
    for (std::size_t j = 0; j < ops_.size(); ++j) {
      if (specs_[j].is_zero()) continue;  // <dL/dm, 0> = 0
      const Tensor o = ops_[j]->forward(input_, side);
      double acc = 0.0;
      for (std::size_t i = 0; i < o.numel(); ++i) acc += grad_output_[i] * o[i];
      g[j] = acc;
    }
    return g;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& op : ops_) {
      auto p = op->parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }
  std::vector<Buffer> buffers() {
    std::vector<Buffer> out;
    for (auto& op : ops_) {
      auto b = op->buffers();
      out.insert(out.end(), b.begin(), b.end());
    }
    return out;
  }
  void reset_parameters(std::uint64_t seed) {
    for (auto& op : ops_) op->reset_parameters(seed);
  }

  /// argmax p; ties go to the cheapest candidate, then the lowest index.
  std::size_t argmax() const {
    const auto p = choice_.probs();
    std::size_t best = 0;
    for (std::size_t i = 1; i < p.size(); ++i) {
      if (p[i] > p[best] || (p[i] == p[best] && costs_[i].ops < costs_[best].ops)) best = i;
    }
    return best;
  }

 private:
  std::string name_;
  LayerGeometry geometry_;
  std::vector<CandidateOpSpec> specs_;
  std::vector<LayerPtr> ops_;
  std::vector<OpCost> costs_;
  LayerChoice choice_;
  Tensor input_;
  Tensor grad_output_;
};

/// Overparameterized three-stage network.
class Supernet {
 public:
  explicit Supernet(NetworkConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    geometry_ = plan_geometry(cfg_);
    stage1_ = make_stage1(cfg_.channels(), cfg_.stage1_kh, cfg_.stage1_kw, cfg_.stage1_stride);
    for (std::size_t i = 0; i < cfg_.num_layers; ++i) {
      layers_.emplace_back("layer" + std::to_string(i), geometry_.layers[i], cfg_.candidates);
    }
    stage3_ = make_stage3(cfg_.channels(), cfg_.stage3_channels(), cfg_.num_classes);
    fixed_cost_ = fixed_stage_cost(cfg_);
    reset_parameters(seed);
  }

  const NetworkConfig& config() const { return cfg_; }
  const StageGeometry& geometry() const { return geometry_; }
  std::size_t num_layers() const { return layers_.size(); }
  SearchableLayer& layer(std::size_t i) { return layers_.at(i); }
  const SearchableLayer& layer(std::size_t i) const { return layers_.at(i); }
  Sequential& stage1() { return stage1_; }
  Sequential& stage3() { return stage3_; }
  const OpCost& fixed_cost() const { return fixed_cost_; }

  Shape input_shape(std::size_t batch) const { return {batch, 1, cfg_.num_mfcc, cfg_.num_frames}; }

  void reset_parameters(std::uint64_t seed) {
    stage1_.reset_parameters(seed);
    for (auto& l : layers_) l.reset_parameters(seed);
    stage3_.reset_parameters(seed);
  }

  /// Forward along the gated path; every layer must have its gate set.
  Tensor forward(const Tensor& x, const ForwardContext& ctx) {
    Tensor h = stage1_.forward(x, ctx);
    for (auto& l : layers_) h = l.forward(h, ctx);
    return stage3_.forward(h, ctx);
  }

  Tensor backward(const Tensor& grad_logits, const ForwardContext& ctx) {
    Tensor g = stage3_.backward(grad_logits, ctx);
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->backward(g, ctx);
    return stage1_.backward(g, ctx);
  }

  template <typename Rng>
  void sample_gates(Rng& rng) {
    for (auto& l : layers_) l.choice().sample_gate(rng);
  }

  /// Gates drawn uniformly, ignoring the architecture parameters.
  template <typename Rng>
  void sample_uniform_gates(Rng& rng) {
    for (auto& l : layers_) {
      std::uniform_int_distribution<std::size_t> d(0, l.size() - 1);
      l.choice().gate = d(rng);
    }
  }

  void set_gates(std::span<const std::size_t> gates) {
    require_dim(gates.size(), layers_.size(), "gate count");
    for (std::size_t i = 0; i < gates.size(); ++i) {
      if (gates[i] >= layers_[i].size()) throw std::out_of_range("gate index out of range");
      layers_[i].choice().gate = gates[i];
    }
  }

  std::vector<std::size_t> argmax_gates() const {
    std::vector<std::size_t> g;
    for (const auto& l : layers_) g.push_back(l.argmax());
    return g;
  }

  /// Weight parameters of every stage and every candidate.
  std::vector<Parameter*> parameters() {
    auto out = stage1_.parameters();
    for (auto& l : layers_) {
      auto p = l.parameters();
      out.insert(out.end(), p.begin(), p.end());
    }
    auto p3 = stage3_.parameters();
    out.insert(out.end(), p3.begin(), p3.end());
    return out;
  }

  std::vector<Buffer> buffers() {
    auto out = stage1_.buffers();
    for (auto& l : layers_) {
      auto b = l.buffers();
      out.insert(out.end(), b.begin(), b.end());
    }
    auto b3 = stage3_.buffers();
    out.insert(out.end(), b3.begin(), b3.end());
    return out;
  }

  std::vector<std::vector<double>> probabilities() const {
    std::vector<std::vector<double>> p;
    for (const auto& l : layers_) p.push_back(l.choice().probs());
    return p;
  }

  std::vector<std::vector<double>> candidate_ops() const {
    std::vector<std::vector<double>> o;
    for (const auto& l : layers_) o.push_back(l.candidate_ops());
    return o;
  }

 private:
  NetworkConfig cfg_;
  StageGeometry geometry_;
  Sequential stage1_;
  std::vector<SearchableLayer> layers_;
  Sequential stage3_;
  OpCost fixed_cost_;
};

/// Fixed stages plus the probability-weighted ops of every searchable layer.
inline double expected_ops(const Supernet& net) {
  const auto p = net.probabilities();
  const auto o = net.candidate_ops();
  return expected_ops(static_cast<double>(net.fixed_cost().ops), p, o);
}

inline ArchitectureDescription describe(const NetworkConfig& cfg,
                                        std::span<const std::size_t> choices) {
  require_dim(choices.size(), cfg.num_layers, "choice count");
  const StageGeometry g = plan_geometry(cfg);
  ArchitectureDescription a;
  a.num_mfcc = cfg.num_mfcc;
  a.num_frames = cfg.num_frames;
  a.omega = cfg.omega;
  a.num_classes = cfg.num_classes;
  a.stage1_kh = cfg.stage1_kh;
  a.stage1_kw = cfg.stage1_kw;
  a.stage1_stride = cfg.stage1_stride;
  a.stage1_channels = cfg.channels();
  a.stage3_channels = cfg.stage3_channels();
  for (std::size_t i = 0; i < choices.size(); ++i) {
    a.layers.push_back({cfg.candidates.at(choices[i]), g.layers[i].stride, g.layers[i].out_channels});
  }
  return a;
}

/// Per layer the argmax-probability candidate (ties to the cheapest).
inline ArchitectureDescription derive_architecture(const Supernet& net) {
  return describe(net.config(), net.argmax_gates());
}

/// Plain feed-forward network built from a resolved architecture.
class Network {
 public:
  Network() = default;

  /// Fresh network; parameter names match the supernet's so equal seeds give
  /// equal initial weights.
  explicit Network(ArchitectureDescription arch, std::uint64_t seed = 0) : arch_(std::move(arch)) {
    body_ = make_stage1(arch_.stage1_channels, arch_.stage1_kh, arch_.stage1_kw,
                        arch_.stage1_stride);
    std::size_t c = arch_.stage1_channels;
    std::size_t h = (arch_.num_mfcc + arch_.stage1_stride.h - 1) / arch_.stage1_stride.h;
    std::size_t w = (arch_.num_frames + arch_.stage1_stride.w - 1) / arch_.stage1_stride.w;
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
      const auto& l = arch_.layers[i];
      const LayerGeometry g{c, l.channels, h, w, l.stride};
      auto op = make_candidate("layer" + std::to_string(i), l.op, g);
      append_layer(std::move(op), l.op, g);
      c = l.channels;
      h = g.out_h();
      w = g.out_w();
    }
    auto s3 = make_stage3(c, arch_.stage3_channels, arch_.num_classes);
    body_.add(std::make_unique<Sequential>(std::move(s3)));
    body_.reset_parameters(seed);
  }

  /// Extracts the network selected by `gates`, copying the supernet's weights.
  static Network from_supernet(Supernet& net, std::span<const std::size_t> gates) {
    Network n;
    n.arch_ = describe(net.config(), gates);
    n.body_.add(net.stage1().clone());
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
      auto& l = net.layer(i);
      n.append_layer(l.candidate(gates[i]).clone(), l.candidates()[gates[i]], l.geometry());
    }
    n.body_.add(net.stage3().clone());
    return n;
  }

  const ArchitectureDescription& architecture() const { return arch_; }

  Tensor forward(const Tensor& x, const ForwardContext& ctx) { return body_.forward(x, ctx); }
  Tensor backward(const Tensor& g, const ForwardContext& ctx) { return body_.backward(g, ctx); }
  std::vector<Parameter*> parameters() { return body_.parameters(); }
  std::vector<Buffer> buffers() { return body_.buffers(); }
  void reset_parameters(std::uint64_t seed) { body_.reset_parameters(seed); }
  std::size_t depth() const { return body_.size(); }

 private:
  void append_layer(LayerPtr op, const CandidateOpSpec& spec, const LayerGeometry& g) {
    if (g.has_skip()) {
      if (spec.is_zero()) return;  // zero + skip is the identity
      body_.add(std::make_unique<ResidualLayer>(std::move(op)));
    } else {
      body_.add(std::move(op));
    }
  }

  ArchitectureDescription arch_;
  Sequential body_;
};

}  // namespace kwsnas
