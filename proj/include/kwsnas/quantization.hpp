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

// Uniform mid-rise weight quantizer on [-1, 1] with 2^k levels, the
// straight-through estimator used for quantization-aware training, and
// post-training rounding.

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>

#include "kwsnas/tensor.hpp"

namespace kwsnas {

struct QuantizerSpec {
  int bits = 8;

  explicit QuantizerSpec(int k = 8) : bits(k) {
    if (k < 1 || k > 8) throw std::invalid_argument("quantizer bits must be in [1, 8]");
  }

  /// 2^k - 1, the largest level index.
  std::int64_t max_index() const { return (std::int64_t{1} << bits) - 1; }
  std::size_t num_levels() const { return std::size_t{1} << bits; }

  friend bool operator==(const QuantizerSpec&, const QuantizerSpec&) = default;
};

/// Active weight quantization; std::nullopt means full precision.
using QuantMode = std::optional<QuantizerSpec>;

inline double clamp(double x, double a, double b) {
  if (a > b) throw std::invalid_argument("clamp requires lower bound <= upper bound");
  return std::max(a, std::min(x, b));
}

/// Level value for index m in [0, 2^k - 1]: 2*m/(2^k-1) - 1, evaluated as
/// (2m - L) / L so that level(m) == -level(L - m) exactly.
inline double level_value(std::int64_t m, const QuantizerSpec& spec) {
  const std::int64_t L = spec.max_index();
  return static_cast<double>(2 * m - L) / static_cast<double>(L);
}

/// Index m of the level quantize(w) lands on. std::round breaks ties away from zero.
inline std::int64_t level_index(double w, const QuantizerSpec& spec) {
  const double L = static_cast<double>(spec.max_index());
  const double r = std::round(L * (w + 1.0) / 2.0);
  return static_cast<std::int64_t>(clamp(r, 0.0, L));
}

inline double quantize(double w, const QuantizerSpec& spec) {
  return level_value(level_index(w, spec), spec);
}

inline Tensor quantize(const Tensor& w, const QuantizerSpec& spec) {
  Tensor out(w.shape());
  for (std::size_t i = 0; i < w.numel(); ++i) out[i] = quantize(w[i], spec);
  return out;
}

inline std::vector<double> level_set(const QuantizerSpec& spec) {
  std::vector<double> levels;
  levels.reserve(spec.num_levels());
  for (std::int64_t m = 0; m <= spec.max_index(); ++m) levels.push_back(level_value(m, spec));
  return levels;
}

/// Forward view of a quantize-flagged parameter.
inline Tensor ste_quantize(const Parameter& w, const QuantizerSpec& spec) {
  return quantize(w.value, spec);
}

/// Straight-through backward: the gradient w.r.t. the quantized view is added
/// to the latent weight's gradient unchanged.
inline void ste_backward(Parameter& w, std::span<const double> grad_view) {
  w.value.ensure_grad();
  auto g = w.value.grad();
  require_dim(grad_view.size(), g.size(), "ste gradient length");
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += grad_view[i];
}

/// The tensor a layer should consume for parameter `w` under `mode`.
inline Tensor effective_weights(const Parameter& w, const QuantMode& mode) {
  if (w.quantize && mode) return ste_quantize(w, *mode);
  return w.value;
}

/// Replaces every quantize-flagged parameter by its rounded value.
template <typename ParamRange>
void post_quantize(ParamRange&& params, const QuantizerSpec& spec) {
  for (Parameter* p : params) {
    if (!p->quantize) continue;
    for (auto& v : p->value.values()) v = quantize(v, spec);
  }
}

struct MemoryReport {
  double quantized_bytes = 0.0;  // quantize-flagged parameters at k bits
  double exempt_bytes = 0.0;     // full-precision (32-bit) exempt parameters
  std::size_t quantized_count = 0;
  std::size_t exempt_count = 0;

  double total(bool include_exempt) const {
    return quantized_bytes + (include_exempt ? exempt_bytes : 0.0);
  }
};

inline MemoryReport memory_from_counts(std::size_t quantized, std::size_t exempt,
                                       const QuantizerSpec& spec) {
  MemoryReport r;
  r.quantized_count = quantized;
  r.exempt_count = exempt;
  r.quantized_bytes = static_cast<double>(quantized) * spec.bits / 8.0;
  r.exempt_bytes = static_cast<double>(exempt) * 4.0;
  return r;
}

template <typename ParamRange>
MemoryReport weight_memory(ParamRange&& params, const QuantizerSpec& spec) {
  std::size_t q = 0, e = 0;
  for (const Parameter* p : params) (p->quantize ? q : e) += p->value.numel();
  return memory_from_counts(q, e, spec);
}

template <typename ParamRange>
double weight_memory_bytes(ParamRange&& params, const QuantizerSpec& spec,
                           bool include_exempt = false) {
  return weight_memory(std::forward<ParamRange>(params), spec).total(include_exempt);
}

// Packed k-bit export -------------------------------------------------------

/// Packs level indices LSB-first: index i occupies bits [i*k, (i+1)*k) of the stream.
inline std::vector<std::uint8_t> pack_indices(std::span<const std::int64_t> indices, int bits) {
  std::vector<std::uint8_t> out((indices.size() * static_cast<std::size_t>(bits) + 7) / 8, 0);
  std::size_t bit = 0;
  for (std::int64_t m : indices) {
    for (int b = 0; b < bits; ++b, ++bit) {
      if ((m >> b) & 1) out[bit / 8] |= static_cast<std::uint8_t>(1u << (bit % 8));
    }
  }
  return out;
}

inline std::vector<std::int64_t> unpack_indices(std::span<const std::uint8_t> bytes,
                                                std::size_t count, int bits) {
  if (bytes.size() * 8 < count * static_cast<std::size_t>(bits)) {
    throw std::runtime_error("packed buffer too short");
  }
  std::vector<std::int64_t> out(count, 0);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < count; ++i) {
    for (int b = 0; b < bits; ++b, ++bit) {
      if ((bytes[bit / 8] >> (bit % 8)) & 1) out[i] |= std::int64_t{1} << b;
    }
  }
  return out;
}

struct QuantizedTensor {
  std::string name;
  Shape shape;
  int bits = 8;
  std::vector<std::int64_t> indices;

  Tensor dequantize() const {
    QuantizerSpec spec(bits);
    Tensor t(shape);
    for (std::size_t i = 0; i < indices.size(); ++i) t[i] = level_value(indices[i], spec);
    return t;
  }
};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_le(std::istream& is, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw std::runtime_error("unexpected end of stream");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}
}  // namespace detail

inline constexpr char kQuantBlobMagic[4] = {'K', 'W', 'S', 'Q'};
inline constexpr std::uint32_t kQuantBlobVersion = 1;

/// Writes every quantize-flagged parameter as packed k-bit level indices.
/// Layout (all integers little-endian): "KWSQ", u32 version, u32 count, then per
/// tensor: u32 name length, name, u32 rank, u64 dims[rank], u8 k, packed bytes.
template <typename ParamRange>
void write_quantized_blob(std::ostream& os, ParamRange&& params, const QuantizerSpec& spec) {
  std::vector<const Parameter*> chosen;
  for (const Parameter* p : params)
    if (p->quantize) chosen.push_back(p);
  os.write(kQuantBlobMagic, 4);
  detail::put_u32(os, kQuantBlobVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(chosen.size()));
  for (const Parameter* p : chosen) {
    detail::put_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) detail::put_u64(os, d);
    os.put(static_cast<char>(spec.bits));
    std::vector<std::int64_t> idx(p->value.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = level_index(p->value[i], spec);
    const auto packed = pack_indices(idx, spec.bits);
    os.write(reinterpret_cast<const char*>(packed.data()),
             static_cast<std::streamsize>(packed.size()));
  }
}

inline std::vector<QuantizedTensor> read_quantized_blob(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kQuantBlobMagic)) {
    throw std::runtime_error("not a quantized weights blob");
  }
  const auto version = detail::get_le(is, 4);
  if (version != kQuantBlobVersion) {
    throw std::runtime_error("unsupported quantized blob version " + std::to_string(version));
  }
  const auto count = detail::get_le(is, 4);
  std::vector<QuantizedTensor> out;
  for (std::uint64_t t = 0; t < count; ++t) {
    QuantizedTensor q;
    q.name.resize(detail::get_le(is, 4));
    is.read(q.name.data(), static_cast<std::streamsize>(q.name.size()));
    const auto rank = detail::get_le(is, 4);
    for (std::uint64_t r = 0; r < rank; ++r) q.shape.push_back(detail::get_le(is, 8));
    q.bits = static_cast<int>(detail::get_le(is, 1));
    QuantizerSpec spec(q.bits);
    const std::size_t n = shape_numel(q.shape);
    std::vector<std::uint8_t> packed((n * static_cast<std::size_t>(q.bits) + 7) / 8);
    if (!is.read(reinterpret_cast<char*>(packed.data()),
                 static_cast<std::streamsize>(packed.size()))) {
      throw std::runtime_error("truncated quantized tensor '" + q.name + "'");
    }
    q.indices = unpack_indices(packed, n, q.bits);
    out.push_back(std::move(q));
  }
  return out;
}

}  // namespace kwsnas
