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

// Versioned binary container of named tensors plus string metadata.
//
// Layout, integers little-endian:
//   "KWSCKPT\0" | u32 version | u32 n_meta | n_meta x (u32 len, key, u32 len, value)
//   | u32 n_tensors | n_tensors x (u32 len, name, u32 rank, u64 dims[rank], f64 data[])

#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "kwsnas/quantization.hpp"
#include "kwsnas/supernet.hpp"

namespace kwsnas {

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::map<std::string, std::string> metadata;
  std::vector<NamedTensor> tensors;

  void add(std::string name, Shape shape, std::vector<double> data) {
    tensors.push_back({std::move(name), std::move(shape), std::move(data)});
  }

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const NamedTensor& get(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw std::runtime_error("checkpoint has no tensor '" + name + "'");
  }

  const std::string& meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw std::runtime_error("checkpoint has no metadata '" + key + "'");
    return it->second;
  }
};

namespace detail {
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
  std::string s(get_le(is, 4), '\0');
  if (!is.read(s.data(), static_cast<std::streamsize>(s.size()))) {
    throw std::runtime_error("truncated string in checkpoint");
  }
  return s;
}
}  // namespace detail

inline constexpr char kCheckpointMagic[8] = {'K', 'W', 'S', 'C', 'K', 'P', 'T', '\0'};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os.write(kCheckpointMagic, 8);
  detail::put_u32(os, Checkpoint::kVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(ck.metadata.size()));
  for (const auto& [k, v] : ck.metadata) {
    detail::put_str(os, k);
    detail::put_str(os, v);
  }
  detail::put_u32(os, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    detail::put_str(os, t.name);
    detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) detail::put_u64(os, d);
    for (double v : t.data) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("not a checkpoint file");
  }
  const auto version = detail::get_le(is, 4);
  if (version != Checkpoint::kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto n_meta = detail::get_le(is, 4);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    std::string k = detail::get_str(is);
    ck.metadata[k] = detail::get_str(is);
  }
  const auto n_tensors = detail::get_le(is, 4);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    NamedTensor t;
    t.name = detail::get_str(is);
    const auto rank = detail::get_le(is, 4);
    for (std::uint64_t r = 0; r < rank; ++r) t.shape.push_back(detail::get_le(is, 8));
    t.data.resize(shape_numel(t.shape));
    for (auto& v : t.data) v = std::bit_cast<double>(detail::get_le(is, 8));
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

/// Writes to a sibling temporary file, then renames over `path`.
template <typename Writer>
void write_file_atomically(const std::filesystem::path& path, Writer&& writer,
                           std::ios::openmode mode = std::ios::binary) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, mode | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    writer(os);
    os.flush();
    if (!os) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_atomically(path, [&](std::ostream& os) { write_checkpoint(os, ck); });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

// Model <-> checkpoint ---------------------------------------------------------

template <typename Model>
void store_state(Checkpoint& ck, Model& model) {
  for (Parameter* p : model.parameters()) ck.add(p->name, p->value.shape(), p->value.values());
  for (const Buffer& b : model.buffers()) ck.add(b.name, {b.data->size()}, *b.data);
}

template <typename Model>
void restore_state(const Checkpoint& ck, Model& model) {
  for (Parameter* p : model.parameters()) {
    const auto& t = ck.get(p->name);
    if (t.shape != p->value.shape()) {
      throw std::runtime_error("shape mismatch for '" + p->name + "': " + shape_str(t.shape) +
                               " vs " + shape_str(p->value.shape()));
    }
    p->value.values() = t.data;
  }
  for (const Buffer& b : model.buffers()) {
    const auto& t = ck.get(b.name);
    require_dim(t.data.size(), b.data->size(), b.name);
    *b.data = t.data;
  }
}

inline Checkpoint network_checkpoint(Network& net, const QuantMode& quant) {
  Checkpoint ck;
  ck.metadata["kind"] = "network";
  ck.metadata["architecture"] = architecture_to_string(net.architecture());
  ck.metadata["quant_bits"] = quant ? std::to_string(quant->bits) : "off";
  store_state(ck, net);
  return ck;
}

struct LoadedNetwork {
  Network network;
  QuantMode quant;
};

inline LoadedNetwork network_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta("kind") != "network") throw std::runtime_error("checkpoint does not hold a network");
  LoadedNetwork out{Network(architecture_from_string(ck.meta("architecture"))), std::nullopt};
  const std::string& bits = ck.meta("quant_bits");
  if (bits != "off") out.quant = QuantizerSpec(std::stoi(bits));
  restore_state(ck, out.network);
  return out;
}

/// All supernet weights, running moments and architecture parameters.
inline Checkpoint supernet_checkpoint(Supernet& net) {
  Checkpoint ck;
  ck.metadata["kind"] = "supernet";
  store_state(ck, net);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const auto& a = net.layer(i).choice().alphas;
    ck.add(net.layer(i).name() + ".alpha", {a.size()}, a);
  }
  return ck;
}

inline void restore_supernet(const Checkpoint& ck, Supernet& net) {
  restore_state(ck, net);
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const auto& t = ck.get(net.layer(i).name() + ".alpha");
    require_dim(t.data.size(), net.layer(i).size(), "alpha length");
    net.layer(i).choice().alphas = t.data;
  }
}

}  // namespace kwsnas
