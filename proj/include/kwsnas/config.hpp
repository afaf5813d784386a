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

// Run configuration: flat key=value files layered under command-line values.
//
// Resolution order, later wins: built-in defaults, the toy desk profile
// (only when dataset=toy), the config file, command-line flags.

#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "kwsnas/search.hpp"

namespace kwsnas {

using ConfigMap = std::map<std::string, std::string>;

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& msg)
      : std::invalid_argument(field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

/// `key = value` lines; `#` starts a comment; blank lines ignored.
inline ConfigMap parse_config(std::istream& is) {
  ConfigMap out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno), "expected key=value");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
    out[key] = trim(std::string_view(t).substr(eq + 1));
  }
  return out;
}

inline ConfigMap load_config_file(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw ConfigError("config", "cannot open " + p.string());
  return parse_config(is);
}

struct RunConfig {
  std::string dataset = "toy";
  std::size_t num_mfcc = 10;
  double omega = 1.0;
  std::size_t base_channels = 72;
  double beta = 1.0;
  double ops_target = 20e6;
  QuantMode quant = QuantizerSpec(8);
  SearchSchedule schedule;
  std::uint64_t seed = 0;
  std::filesystem::path out = ".";
  std::size_t toy_classes = 4;
  std::size_t toy_per_class = 200;

  TradeoffConfig tradeoff() const { return {beta, ops_target}; }
  MfccConfig mfcc() const {
    MfccConfig c;
    c.num_mfcc = num_mfcc;
    return c;
  }
};

/// Values applied for dataset=toy before the file and flags.
inline ConfigMap toy_profile() {
  return {{"base_channels", "8"},    {"pretrain_epochs", "5"}, {"search_epochs", "10"},
          {"retrain_epochs", "20"},  {"batch_size", "32"},     {"pretrain_lr", "0.05"},
          {"search_lr", "0.05"},     {"retrain_lr", "0.05"}};
}

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key, "invalid number '" + v + "'");
  return out;
}

inline bool in_set(double v, std::initializer_list<double> allowed) {
  for (double a : allowed)
    if (v == a) return true;
  return false;
}

}  // namespace detail

inline QuantMode parse_quant_bits(const std::string& key, const std::string& v) {
  if (v == "off" || v == "32") return std::nullopt;
  const int k = detail::parse_number<int>(key, v);
  if (k < 1 || k > 8) throw ConfigError(key, "must be 1-8 or off");
  return QuantizerSpec(k);
}

/// Keys understood by resolve_config.
inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      "dataset",      "num_mfcc",       "omega",          "base_channels", "beta",
      "ops_target",   "quant_bits",     "pretrain_epochs", "search_epochs", "retrain_epochs",
      "batch_size",   "pretrain_lr",    "search_lr",      "retrain_lr",    "arch_lr",
      "seed",         "out",            "toy_classes",    "toy_per_class"};
  return keys;
}

/// Layers `file` then `flags` over the defaults and validates every field.
inline RunConfig resolve_config(const ConfigMap& file, const ConfigMap& flags) {
  ConfigMap merged;
  auto dataset_of = [&]() -> std::string {
    if (auto it = flags.find("dataset"); it != flags.end()) return it->second;
    if (auto it = file.find("dataset"); it != file.end()) return it->second;
    return "toy";
  };
  if (dataset_of() == "toy") merged = toy_profile();
  for (const auto& [k, v] : file) merged[k] = v;
  for (const auto& [k, v] : flags) merged[k] = v;

  RunConfig c;
  using detail::parse_number;
  for (const auto& [k, v] : merged) {
    if (!config_keys().count(k)) throw ConfigError(k, "unknown config key");
    if (k == "dataset") {
      if (v.empty()) throw ConfigError(k, "empty");
      c.dataset = v;
    } else if (k == "num_mfcc") {
      c.num_mfcc = parse_number<std::size_t>(k, v);
      if (!detail::in_set(static_cast<double>(c.num_mfcc), {10, 20, 30, 40})) {
        throw ConfigError(k, "must be one of 10, 20, 30, 40");
      }
    } else if (k == "omega") {
      c.omega = parse_number<double>(k, v);
      if (!detail::in_set(c.omega, {0.75, 1.0, 1.25})) throw ConfigError(k, "must be one of 0.75, 1, 1.25");
    } else if (k == "base_channels") {
      c.base_channels = parse_number<std::size_t>(k, v);
      if (c.base_channels == 0) throw ConfigError(k, "must be positive");
    } else if (k == "beta") {
      c.beta = parse_number<double>(k, v);
      if (!detail::in_set(c.beta, {0, 1, 2, 4, 8, 16})) throw ConfigError(k, "must be one of 0, 1, 2, 4, 8, 16");
    } else if (k == "ops_target") {
      c.ops_target = parse_number<double>(k, v);
      if (!(c.ops_target > 1.0)) throw ConfigError(k, "must be > 1");
    } else if (k == "quant_bits") {
      c.quant = parse_quant_bits(k, v);
    } else if (k == "pretrain_epochs") {
      c.schedule.pretrain_epochs = parse_number<std::size_t>(k, v);
    } else if (k == "search_epochs") {
      c.schedule.search_epochs = parse_number<std::size_t>(k, v);
    } else if (k == "retrain_epochs") {
      c.schedule.retrain_epochs = parse_number<std::size_t>(k, v);
    } else if (k == "batch_size") {
      c.schedule.batch_size = parse_number<std::size_t>(k, v);
      if (c.schedule.batch_size < 2) throw ConfigError(k, "must be >= 2");
    } else if (k == "pretrain_lr" || k == "search_lr" || k == "retrain_lr" || k == "arch_lr") {
      const double lr = parse_number<double>(k, v);
      if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError(k, "must be positive");
      if (k == "pretrain_lr") c.schedule.pretrain_lr = lr;
      if (k == "search_lr") c.schedule.search_lr = lr;
      if (k == "retrain_lr") c.schedule.retrain_lr = lr;
      if (k == "arch_lr") c.schedule.arch_lr = lr;
    } else if (k == "seed") {
      c.seed = parse_number<std::uint64_t>(k, v);
    } else if (k == "out") {
      c.out = v;
    } else if (k == "toy_classes") {
      c.toy_classes = parse_number<std::size_t>(k, v);
      if (c.toy_classes < 2 || c.toy_classes > 12) throw ConfigError(k, "must be in [2, 12]");
    } else if (k == "toy_per_class") {
      c.toy_per_class = parse_number<std::size_t>(k, v);
      if (c.toy_per_class < 10) throw ConfigError(k, "must be >= 10");
    }
  }
  return c;
}

/// Network configuration implied by a run config and dataset class count.
inline NetworkConfig network_config(const RunConfig& c, std::size_t num_classes) {
  NetworkConfig n;
  n.num_mfcc = c.num_mfcc;
  n.num_frames = c.mfcc().num_frames(16000);
  n.base_channels = c.base_channels;
  n.omega = c.omega;
  n.num_classes = num_classes;
  return n;
}

struct LoadedDataset {
  DatasetManifest manifest;
  std::shared_ptr<const ClipStore> store;
};

inline LoadedDataset load_dataset(const RunConfig& c) {
  if (c.dataset == "toy") {
    ToyDataset t = synthesize_toy(c.toy_classes, c.toy_per_class, c.seed);
    return {std::move(t.manifest), std::move(t.store)};
  }
  return {load_speech_commands(c.dataset, c.seed), std::make_shared<FileClipStore>(c.dataset)};
}

}  // namespace kwsnas
