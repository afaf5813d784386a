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

#include <set>
#include <sstream>

#include "support/oracles.hpp"

using namespace kwsnas;

TEST(Quantizer, HandAnchors) {
  EXPECT_EQ(quantize(0.3, QuantizerSpec(1)), 1.0);
  EXPECT_EQ(quantize(-0.3, QuantizerSpec(1)), -1.0);
  EXPECT_DOUBLE_EQ(quantize(0.0, QuantizerSpec(2)), 1.0 / 3.0);
  EXPECT_EQ(quantize(0.0, QuantizerSpec(1)), 1.0);
  for (int k = 1; k <= 8; ++k) {
    EXPECT_EQ(quantize(1.0, QuantizerSpec(k)), 1.0);
    EXPECT_EQ(quantize(-1.0, QuantizerSpec(k)), -1.0);
    EXPECT_EQ(quantize(5.0, QuantizerSpec(k)), 1.0);
    EXPECT_EQ(quantize(-5.0, QuantizerSpec(k)), -1.0);
  }
}

TEST(Quantizer, LevelSetProperties) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int k = 1; k <= 8; ++k) {
    const QuantizerSpec spec(k);
    const auto levels = level_set(spec);
    ASSERT_EQ(levels.size(), std::size_t{1} << k);
    const std::set<double> L(levels.begin(), levels.end());
    EXPECT_EQ(L.size(), levels.size());
    EXPECT_EQ(L.count(0.0), 0u);
    std::vector<double> ws(20000);
    for (auto& w : ws) w = u(rng);
    std::sort(ws.begin(), ws.end());
    std::set<double> seen;
    double prev = -INFINITY;
    for (double w : ws) {
      const double q = quantize(w, spec);
      ASSERT_TRUE(L.count(q)) << "k=" << k << " w=" << w;
      ASSERT_NE(q, 0.0);
      ASSERT_EQ(quantize(q, spec), q);
      ASSERT_GE(q, prev);
      prev = q;
      seen.insert(q);
    }
    if (k <= 4) {
      EXPECT_EQ(seen.size(), std::size_t{1} << k);
    }
  }
}

TEST(Quantizer, RejectsBadBits) {
  EXPECT_THROW(QuantizerSpec(0), std::invalid_argument);
  EXPECT_THROW(QuantizerSpec(9), std::invalid_argument);
  EXPECT_THROW(kwsnas::clamp(0, 1, -1), std::invalid_argument);
}

TEST(Ste, BackwardIsIdentityAndLatentUnclipped) {
  Parameter w("w", Tensor({3}, std::vector<double>{2.5, -0.2, 0.7}), true, true);
  const Tensor q = ste_quantize(w, QuantizerSpec(1));
  EXPECT_EQ(q[0], 1.0);
  EXPECT_EQ(q[1], -1.0);
  std::vector<double> g{0.1, -0.2, 0.3};
  ste_backward(w, g);
  EXPECT_EQ(std::vector<double>(w.value.grad().begin(), w.value.grad().end()), g);
  std::vector<Parameter*> ps{&w};
  sgd_step(ps, 1.0);
  EXPECT_DOUBLE_EQ(w.value[0], 2.4);  // latent value keeps moving outside [-1, 1]
}

TEST(Ste, ExemptParametersNeverQuantized) {
  LinearLayer fc("fc", 3, 2);
  fc.reset_parameters(1);
  fc.bias().value[0] = 0.123;
  ForwardContext ctx;
  ctx.quant = QuantizerSpec(1);
  Tensor x({1, 3}, std::vector<double>{0, 0, 0});
  const Tensor y = fc.forward(x, ctx);
  EXPECT_EQ(y[0], 0.123);
  BatchNormLayer bn("bn", 2);
  for (Parameter* p : bn.parameters()) EXPECT_FALSE(p->quantize);
  EXPECT_TRUE(fc.weight().quantize);
  EXPECT_FALSE(fc.bias().quantize);
}

TEST(Ste, QuantizedForwardUsesLevels) {
  ConvLayer c("c", LayerSpec::conv(1, 1, 1, 1));
  c.weight().value[0] = 0.4;
  ForwardContext ctx;
  ctx.quant = QuantizerSpec(1);
  Tensor x({1, 1, 1, 1}, 2.0);
  EXPECT_EQ(c.forward(x, ctx)[0], 2.0);
  ctx.quant.reset();
  EXPECT_DOUBLE_EQ(c.forward(x, ctx)[0], 0.8);
}

TEST(PostQuantize, RoundsOnlyFlagged) {
  LinearLayer fc("fc", 4, 2);
  fc.reset_parameters(5);
  fc.bias().value[1] = 0.37;
  post_quantize(fc.parameters(), QuantizerSpec(2));
  const auto L = level_set(QuantizerSpec(2));
  for (double v : fc.weight().value.values()) EXPECT_NE(std::find(L.begin(), L.end(), v), L.end());
  EXPECT_EQ(fc.bias().value[1], 0.37);
}

TEST(Memory, RatioAndExemptAccounting) {
  const auto r8 = memory_from_counts(1000, 20, QuantizerSpec(8));
  const auto r1 = memory_from_counts(1000, 20, QuantizerSpec(1));
  EXPECT_EQ(r8.total(false), 1000.0);
  EXPECT_EQ(r1.total(false), 125.0);
  EXPECT_EQ(r1.total(false), r8.total(false) / 8);
  EXPECT_EQ(r1.total(true), 125.0 + 80.0);
  for (int k = 1; k <= 8; ++k) {
    EXPECT_EQ(memory_from_counts(999, 0, QuantizerSpec(k)).total(false), 999.0 * k / 8);
  }
}

TEST(Packing, RoundTripAllWidths) {
  std::mt19937_64 rng(3);
  for (int k = 1; k <= 8; ++k) {
    std::uniform_int_distribution<std::int64_t> d(0, (1 << k) - 1);
    std::vector<std::int64_t> idx(37);
    for (auto& m : idx) m = d(rng);
    const auto packed = pack_indices(idx, k);
    EXPECT_EQ(packed.size(), (37u * k + 7) / 8);
    EXPECT_EQ(unpack_indices(packed, idx.size(), k), idx);
  }
  // Little-endian bit order: first index occupies the lowest bits.
  std::vector<std::int64_t> two{1, 2};
  EXPECT_EQ(pack_indices(two, 2)[0], 0b1001);
}

TEST(Packing, BlobRoundTrip) {
  LinearLayer fc("stage3.fc", 5, 3);
  fc.reset_parameters(2);
  const QuantizerSpec spec(3);
  std::stringstream ss;
  write_quantized_blob(ss, fc.parameters(), spec);
  const auto tensors = read_quantized_blob(ss);
  ASSERT_EQ(tensors.size(), 1u);  // bias is exempt
  EXPECT_EQ(tensors[0].name, "stage3.fc.weight");
  EXPECT_EQ(tensors[0].shape, (Shape{3, 5}));
  EXPECT_EQ(tensors[0].dequantize(), quantize(fc.weight().value, spec));
  std::stringstream bad("XXXX");
  EXPECT_THROW(read_quantized_blob(bad), std::runtime_error);
}
