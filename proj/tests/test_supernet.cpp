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

#include <gtest/gtest.h>

#include "support/gradcheck.hpp"

using namespace kwsnas;

namespace {

NetworkConfig small_config() {
  NetworkConfig cfg;
  cfg.num_mfcc = 6;
  cfg.num_frames = 10;
  cfg.base_channels = 8;
  cfg.num_layers = 3;
  cfg.num_classes = 3;
  cfg.candidates = make_candidates({1, 2}, {3, 5});
  return cfg;
}

}  // namespace

TEST(Softmax, BackwardMatchesFiniteDifference) {
  std::vector<double> a{0.3, -1.2, 2.0, 0.1}, w{1.0, -2.0, 0.5, 3.0};
  auto f = [&] {
    const auto p = softmax(a);
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += w[i] * p[i];
    return s;
  };
  const auto num = oracle::numeric_gradient(f, a);
  const auto ana = softmax_backward(softmax(a), w);
  EXPECT_LT(oracle::rel_error(ana, num), 1e-8);
}

TEST(Gates, SampleFrequenciesFollowProbabilities) {
  LayerChoice c;
  c.alphas = {0.0, std::log(3.0)};
  std::mt19937_64 rng(1);
  int hits = 0;
  for (int i = 0; i < 20000; ++i) hits += c.sample_gate(rng) == 1;
  EXPECT_NEAR(hits / 20000.0, 0.75, 0.015);
  EXPECT_EQ(c.gate_vector(), (std::vector<double>{0.0, 1.0}));
}

TEST(Gates, ZeroWithSkipIsIdentity) {
  const LayerGeometry g{8, 8, 3, 5, {1, 1}};
  SearchableLayer layer("layer1", g, default_candidates());
  layer.reset_parameters(1);
  layer.choice().gate = 0;
  std::mt19937_64 rng(2);
  const Tensor x = oracle::random_tensor({2, 8, 3, 5}, rng);
  EXPECT_EQ(layer.forward(x, ForwardContext{}), x);
}

TEST(Gates, ZeroWithoutSkipIsZero) {
  const LayerGeometry g{8, 8, 4, 6, {2, 2}};
  SearchableLayer layer("layer0", g, default_candidates());
  ASSERT_FALSE(layer.has_skip());
  layer.choice().gate = 0;
  std::mt19937_64 rng(2);
  const Tensor y = layer.forward(oracle::random_tensor({2, 8, 4, 6}, rng), ForwardContext{});
  EXPECT_EQ(y.shape(), (Shape{2, 8, 2, 3}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Gates, AllModeAgreesWithSampled) {
  const LayerGeometry g{8, 8, 3, 5, {1, 1}};
  SearchableLayer layer("layer1", g, make_candidates({1, 3}, {3, 7}));
  layer.reset_parameters(4);
  layer.choice().gate = 2;
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor({2, 8, 3, 5}, rng);
  ForwardContext ctx;
  ctx.update_stats = false;
  const MixedOutput all = layer.mixed_forward(x, ctx, MixedMode::All);
  const Tensor sampled = layer.forward(x, ctx);
  EXPECT_EQ(all.output, sampled);
  ASSERT_EQ(all.candidate_outputs.size(), layer.size());
  // m = sum_j g_j o_j + x with a one-hot g
  Tensor m = all.candidate_outputs[2];
  for (std::size_t i = 0; i < m.numel(); ++i) m[i] += x[i];
  EXPECT_EQ(m, sampled);
}

// dL/dg_j = <dL/dm, o_j(x)>: compare with a finite difference of the loss
// along the direction m + t * o_j(x) through the rest of the network.
TEST(Gates, GateGradientMatchesDirectionalDerivative) {
  NetworkConfig cfg = small_config();
  Supernet net(cfg, 5);
  std::mt19937_64 rng(6);
  net.sample_uniform_gates(rng);
  const Tensor x = oracle::random_tensor(net.input_shape(4), rng);
  const std::vector<int> labels{0, 1, 2, 1};
  ForwardContext ctx;
  ctx.update_stats = false;
  ctx.param_grads = false;
  const LossResult lr = softmax_cross_entropy(net.forward(x, ctx), labels);
  net.backward(lr.grad_logits, ctx);

  ForwardContext probe = ctx;
  probe.cache = false;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto g = net.layer(l).gate_gradients(ctx);
    Tensor h = net.stage1().forward(x, probe);
    for (std::size_t k = 0; k < l; ++k) h = net.layer(k).forward(h, probe);
    const Tensor m = net.layer(l).forward(h, probe);
    for (std::size_t j = 0; j < net.layer(l).size(); ++j) {
      const Tensor o = net.layer(l).candidate_forward(j, h, probe);
      auto loss_at = [&](double t) {
        Tensor z = m;
        for (std::size_t i = 0; i < z.numel(); ++i) z[i] += t * o[i];
        for (std::size_t k = l + 1; k < net.num_layers(); ++k) z = net.layer(k).forward(z, probe);
        return softmax_cross_entropy(net.stage3().forward(z, probe), labels).loss;
      };
      const double fd = (loss_at(1e-6) - loss_at(-1e-6)) / 2e-6;
      EXPECT_NEAR(g[j], fd, 1e-5 * std::max(1.0, std::abs(fd))) << "layer " << l << " cand " << j;
    }
  }
}

TEST(Supernet, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    bool zero_ok = false;
    EXPECT_LT(oracle::supernet_gradient_error(seed, &zero_ok), 1e-4);
    EXPECT_TRUE(zero_ok) << "inactive candidates received gradient";
  }
}

TEST(Supernet, GeometryAndSkips) {
  NetworkConfig cfg;
  cfg.base_channels = 8;
  Supernet net(cfg, 1);
  EXPECT_EQ(net.num_layers(), 12u);
  EXPECT_FALSE(net.layer(0).has_skip());
  for (std::size_t l = 1; l < 12; ++l) EXPECT_TRUE(net.layer(l).has_skip());
  EXPECT_EQ(net.geometry().stage1_out_h, 10u);
  EXPECT_EQ(net.geometry().stage1_out_w, 26u);
  EXPECT_EQ(net.geometry().final_h, 5u);
  EXPECT_EQ(net.geometry().final_w, 13u);
  EXPECT_EQ(net.layer(3).size(), 19u);
  std::mt19937_64 rng(1);
  net.sample_gates(rng);
  const Tensor y = net.forward(Tensor(net.input_shape(2)), ForwardContext::inference());
  EXPECT_EQ(y.shape(), (Shape{2, 12}));
}

TEST(Supernet, ArgmaxTieBreaksOnCost) {
  NetworkConfig cfg = small_config();
  Supernet net(cfg, 1);
  EXPECT_EQ(net.layer(1).argmax(), 0u);  // all equal: zero is cheapest
  net.layer(1).choice().alphas[3] = 0.5;
  EXPECT_EQ(net.layer(1).argmax(), 3u);
  net.layer(1).choice().alphas = {0, 1, 1, 0, 0};
  EXPECT_EQ(net.layer(1).argmax(), 1u);  // e1k3 cheaper than e1k5
}

TEST(Network, FromSupernetMatchesGatedForward) {
  NetworkConfig cfg = small_config();
  Supernet net(cfg, 3);
  std::mt19937_64 rng(8);
  const Tensor x = oracle::random_tensor(net.input_shape(4), rng);
  // A few training passes so running moments are not at their defaults.
  for (int i = 0; i < 3; ++i) {
    net.sample_uniform_gates(rng);
    net.forward(x, ForwardContext{});
  }
  const std::vector<std::size_t> gates{2, 0, 4};
  net.set_gates(gates);
  Network sub = Network::from_supernet(net, gates);
  const auto ctx = ForwardContext::inference(QuantizerSpec(4));
  EXPECT_EQ(sub.forward(x, ctx), net.forward(x, ctx));
  EXPECT_EQ(sub.architecture().layers[1].op, CandidateOpSpec::zero());
}

TEST(Network, FreshNetworkSharesSupernetInitialization) {
  NetworkConfig cfg = small_config();
  const std::vector<std::size_t> gates{1, 3, 0};
  Supernet net(cfg, 11);
  net.set_gates(gates);
  Network fresh(describe(cfg, gates), 11);
  std::mt19937_64 rng(2);
  const Tensor x = oracle::random_tensor(net.input_shape(3), rng);
  EXPECT_EQ(fresh.forward(x, ForwardContext::inference()), net.forward(x, ForwardContext::inference()));
  Network other(describe(cfg, gates), 12);
  EXPECT_NE(other.forward(x, ForwardContext::inference()), net.forward(x, ForwardContext::inference()));
}

TEST(ArchitectureFile, RoundTrip) {
  NetworkConfig cfg;
  cfg.num_classes = 12;
  const std::vector<std::size_t> choice{3, 0, 5, 18, 0, 1, 7, 0, 0, 12, 2, 9};
  const auto a = describe(cfg, choice);
  const std::string text = architecture_to_string(a);
  EXPECT_EQ(architecture_from_string(text), a);
  EXPECT_EQ(architecture_to_string(architecture_from_string(text)), text);
  EXPECT_NE(text.find("layer 1 zero stride=1,1 ch=72"), std::string::npos);
  EXPECT_NE(text.find("layer 0 mbc e=1 k=7 stride=2,2 ch=72"), std::string::npos);
  EXPECT_EQ(model_cost(a), model_cost(architecture_from_string(text)));
}

TEST(ArchitectureFile, ParseErrorsCarryLineNumbers) {
  NetworkConfig cfg;
  std::string text = architecture_to_string(describe(cfg, std::vector<std::size_t>(12, 1)));
  const auto pos = text.find("layer 4 mbc e=1");
  ASSERT_NE(pos, std::string::npos);
  std::string bad = text;
  bad.replace(pos, 15, "layer 4 mbx e=1");
  try {
    architecture_from_string(bad);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 11u);
  }
  EXPECT_THROW(architecture_from_string("kwsnas-architecture 99\n"), ParseError);
  EXPECT_THROW(architecture_from_string(""), ParseError);
}
