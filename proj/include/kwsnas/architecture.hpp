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

// Search-space vocabulary and the resolved-architecture text format.
//
// Architecture file (line oriented, '#' starts a comment):
//
//   kwsnas-architecture 1
//   num_mfcc 10
//   num_frames 51
//   omega 1
//   classes 12
//   stage1 kernel=5,11 stride=1,2 ch=72
//   layer 0 mbc e=6 k=3 stride=2,2 ch=72
//   layer 1 zero stride=1,1 ch=72
//   ...
//   stage3 ch=144

#pragma once

#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "kwsnas/tensor.hpp"

namespace kwsnas {

struct CandidateOpSpec {
  enum class Variant { Zero, Mbc };
  Variant variant = Variant::Zero;
  int expansion = 0;  // Mbc only
  int kernel = 0;     // Mbc only

  static CandidateOpSpec zero() { return {}; }
  static CandidateOpSpec mbc(int e, int k) {
    if (e < 1 || e > 6) throw std::invalid_argument("expansion rate must be in [1, 6]");
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("kernel size must be odd and positive");
    return {Variant::Mbc, e, k};
  }

  bool is_zero() const { return variant == Variant::Zero; }

  std::string label() const {
    if (is_zero()) return "zero";
    return "mbc_e" + std::to_string(expansion) + "_k" + std::to_string(kernel);
  }

  friend bool operator==(const CandidateOpSpec&, const CandidateOpSpec&) = default;
};

/// Zero plus every (e, k) pair in e-major order.
inline std::vector<CandidateOpSpec> make_candidates(const std::vector<int>& expansions,
                                                    const std::vector<int>& kernels) {
  std::vector<CandidateOpSpec> out{CandidateOpSpec::zero()};
  for (int e : expansions)
    for (int k : kernels) out.push_back(CandidateOpSpec::mbc(e, k));
  return out;
}

/// The 19-entry menu: e in {1..6}, k in {3,5,7}, plus Zero.
inline std::vector<CandidateOpSpec> default_candidates() {
  return make_candidates({1, 2, 3, 4, 5, 6}, {3, 5, 7});
}

/// Nearest multiple of 8 to base*omega; ties round up; never below 8.
inline std::size_t apply_channel_multiplier(std::size_t base_channels, double omega) {
  if (base_channels == 0 || !(omega > 0.0)) {
    throw std::invalid_argument("channel multiplier needs base_channels > 0 and omega > 0");
  }
  const double scaled = static_cast<double>(base_channels) * omega;
  const auto m = static_cast<std::size_t>(std::floor(scaled / 8.0 + 0.5)) * 8;
  return std::max<std::size_t>(m, 8);
}

struct Stride2 {
  std::size_t h = 1, w = 1;
  friend bool operator==(const Stride2&, const Stride2&) = default;
};

/// Shape of the three-stage network and its search space.
struct NetworkConfig {
  std::size_t num_mfcc = 10;
  std::size_t num_frames = 51;
  std::size_t base_channels = 72;
  double omega = 1.0;
  std::size_t num_classes = 12;
  std::size_t num_layers = 12;
  std::size_t stage1_kh = 5, stage1_kw = 11;
  Stride2 stage1_stride{1, 2};
  Stride2 first_layer_stride{2, 2};
  std::vector<CandidateOpSpec> candidates = default_candidates();

  std::size_t channels() const { return apply_channel_multiplier(base_channels, omega); }
  std::size_t stage3_channels() const { return 2 * channels(); }

  void validate() const {
    if (num_mfcc == 0 || num_frames == 0) throw std::invalid_argument("empty feature matrix");
    if (num_classes < 2) throw std::invalid_argument("need at least two classes");
    if (candidates.empty()) throw std::invalid_argument("candidate list is empty");
  }
};

/// Static geometry of one searchable layer.
struct LayerGeometry {
  std::size_t in_channels = 0, out_channels = 0;
  std::size_t in_h = 0, in_w = 0;
  Stride2 stride;
  std::size_t out_h() const { return (in_h + stride.h - 1) / stride.h; }
  std::size_t out_w() const { return (in_w + stride.w - 1) / stride.w; }
  /// Skip connection iff output shape equals input shape.
  bool has_skip() const {
    return in_channels == out_channels && out_h() == in_h && out_w() == in_w;
  }
};

struct StageGeometry {
  std::size_t stage1_out_h = 0, stage1_out_w = 0;
  std::vector<LayerGeometry> layers;
  std::size_t final_h = 0, final_w = 0;
};

inline StageGeometry plan_geometry(const NetworkConfig& cfg) {
  StageGeometry g;
  g.stage1_out_h = (cfg.num_mfcc + cfg.stage1_stride.h - 1) / cfg.stage1_stride.h;
  g.stage1_out_w = (cfg.num_frames + cfg.stage1_stride.w - 1) / cfg.stage1_stride.w;
  std::size_t h = g.stage1_out_h, w = g.stage1_out_w;
  const std::size_t ch = cfg.channels();
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    LayerGeometry lg{ch, ch, h, w, i == 0 ? cfg.first_layer_stride : Stride2{1, 1}};
    h = lg.out_h();
    w = lg.out_w();
    g.layers.push_back(lg);
  }
  g.final_h = h;
  g.final_w = w;
  return g;
}

struct ArchitectureLayer {
  CandidateOpSpec op;
  Stride2 stride;
  std::size_t channels = 0;
  friend bool operator==(const ArchitectureLayer&, const ArchitectureLayer&) = default;
};

/// A fully resolved network: one chosen op per searchable layer.
struct ArchitectureDescription {
  static constexpr int kFormatVersion = 1;

  std::size_t num_mfcc = 10;
  std::size_t num_frames = 51;
  double omega = 1.0;
  std::size_t num_classes = 12;
  std::size_t stage1_kh = 5, stage1_kw = 11;
  Stride2 stage1_stride{1, 2};
  std::size_t stage1_channels = 72;
  std::vector<ArchitectureLayer> layers;
  std::size_t stage3_channels = 144;

  friend bool operator==(const ArchitectureDescription&, const ArchitectureDescription&) = default;

  /// Network config that reproduces this architecture's geometry.
  NetworkConfig network_config() const {
    NetworkConfig cfg;
    cfg.num_mfcc = num_mfcc;
    cfg.num_frames = num_frames;
    cfg.omega = 1.0;
    cfg.base_channels = stage1_channels;
    cfg.num_classes = num_classes;
    cfg.num_layers = layers.size();
    cfg.stage1_kh = stage1_kh;
    cfg.stage1_kw = stage1_kw;
    cfg.stage1_stride = stage1_stride;
    if (!layers.empty()) cfg.first_layer_stride = layers.front().stride;
    return cfg;
  }

  std::size_t active_layer_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.op.is_zero() ? 0 : 1;
    return n;
  }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
T parse_number(const std::string& s, std::size_t line, const std::string& what) {
  T value{};
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if constexpr (std::is_floating_point_v<T>) {
    std::istringstream is(s);
    is.imbue(std::locale::classic());
    if (!(is >> value) || !is.eof()) throw ParseError(line, "bad " + what + " '" + s + "'");
  } else {
    auto [p, ec] = std::from_chars(b, e, value);
    if (ec != std::errc() || p != e) throw ParseError(line, "bad " + what + " '" + s + "'");
  }
  return value;
}

inline std::string expect_key(const std::string& tok, const std::string& key, std::size_t line) {
  if (tok.rfind(key + "=", 0) != 0) throw ParseError(line, "expected '" + key + "=', got '" + tok + "'");
  return tok.substr(key.size() + 1);
}

inline std::pair<std::size_t, std::size_t> parse_pair(const std::string& s, std::size_t line,
                                                      const std::string& what) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ParseError(line, "expected '<a>,<b>' for " + what);
  return {parse_number<std::size_t>(s.substr(0, comma), line, what),
          parse_number<std::size_t>(s.substr(comma + 1), line, what)};
}

}  // namespace detail

inline void write_architecture(std::ostream& os, const ArchitectureDescription& a) {
  os << "kwsnas-architecture " << ArchitectureDescription::kFormatVersion << '\n';
  os << "num_mfcc " << a.num_mfcc << '\n';
  os << "num_frames " << a.num_frames << '\n';
  os << "omega " << detail::format_double(a.omega) << '\n';
  os << "classes " << a.num_classes << '\n';
  os << "stage1 kernel=" << a.stage1_kh << ',' << a.stage1_kw << " stride=" << a.stage1_stride.h
     << ',' << a.stage1_stride.w << " ch=" << a.stage1_channels << '\n';
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& l = a.layers[i];
    os << "layer " << i << ' ' << (l.op.is_zero() ? "zero" : "mbc");
    if (!l.op.is_zero()) os << " e=" << l.op.expansion << " k=" << l.op.kernel;
    os << " stride=" << l.stride.h << ',' << l.stride.w << " ch=" << l.channels << '\n';
  }
  os << "stage3 ch=" << a.stage3_channels << '\n';
}

inline std::string architecture_to_string(const ArchitectureDescription& a) {
  std::ostringstream os;
  write_architecture(os, a);
  return os.str();
}

inline ArchitectureDescription read_architecture(std::istream& is) {
  using detail::parse_number;
  ArchitectureDescription a;
  a.layers.clear();
  std::string raw;
  std::size_t lineno = 0;
  bool saw_header = false, saw_stage1 = false, saw_stage3 = false;
  while (std::getline(is, raw)) {
    ++lineno;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string& key = tok[0];
    if (!saw_header) {
      if (key != "kwsnas-architecture" || tok.size() != 2) {
        throw ParseError(lineno, "missing 'kwsnas-architecture <version>' header");
      }
      const int v = parse_number<int>(tok[1], lineno, "format version");
      if (v != ArchitectureDescription::kFormatVersion) {
        throw ParseError(lineno, "unsupported format version " + tok[1]);
      }
      saw_header = true;
      continue;
    }
    auto need = [&](std::size_t n) {
      if (tok.size() != n) {
        throw ParseError(lineno, "'" + key + "' expects " + std::to_string(n - 1) + " fields");
      }
    };
    if (key == "num_mfcc") {
      need(2);
      a.num_mfcc = parse_number<std::size_t>(tok[1], lineno, "num_mfcc");
    } else if (key == "num_frames") {
      need(2);
      a.num_frames = parse_number<std::size_t>(tok[1], lineno, "num_frames");
    } else if (key == "omega") {
      need(2);
      a.omega = parse_number<double>(tok[1], lineno, "omega");
    } else if (key == "classes") {
      need(2);
      a.num_classes = parse_number<std::size_t>(tok[1], lineno, "classes");
    } else if (key == "stage1") {
      need(4);
      std::tie(a.stage1_kh, a.stage1_kw) =
          detail::parse_pair(detail::expect_key(tok[1], "kernel", lineno), lineno, "kernel");
      auto [sh, sw] =
          detail::parse_pair(detail::expect_key(tok[2], "stride", lineno), lineno, "stride");
      a.stage1_stride = {sh, sw};
      a.stage1_channels =
          parse_number<std::size_t>(detail::expect_key(tok[3], "ch", lineno), lineno, "ch");
      saw_stage1 = true;
    } else if (key == "layer") {
      if (tok.size() < 3) throw ParseError(lineno, "truncated layer line");
      const auto index = parse_number<std::size_t>(tok[1], lineno, "layer index");
      if (index != a.layers.size()) {
        throw ParseError(lineno, "layer index " + tok[1] + " out of sequence");
      }
      ArchitectureLayer layer;
      std::size_t next = 3;
      if (tok[2] == "zero") {
        need(5);
      } else if (tok[2] == "mbc") {
        need(7);
        const int e = parse_number<int>(detail::expect_key(tok[3], "e", lineno), lineno, "e");
        const int k = parse_number<int>(detail::expect_key(tok[4], "k", lineno), lineno, "k");
        try {
          layer.op = CandidateOpSpec::mbc(e, k);
        } catch (const std::invalid_argument& err) {
          throw ParseError(lineno, err.what());
        }
        next = 5;
      } else {
        throw ParseError(lineno, "unknown layer op '" + tok[2] + "'");
      }
      auto [sh, sw] =
          detail::parse_pair(detail::expect_key(tok[next], "stride", lineno), lineno, "stride");
      if (sh == 0 || sw == 0) throw ParseError(lineno, "stride must be >= 1");
      layer.stride = {sh, sw};
      layer.channels =
          parse_number<std::size_t>(detail::expect_key(tok[next + 1], "ch", lineno), lineno, "ch");
      a.layers.push_back(layer);
    } else if (key == "stage3") {
      need(2);
      a.stage3_channels =
          parse_number<std::size_t>(detail::expect_key(tok[1], "ch", lineno), lineno, "ch");
      saw_stage3 = true;
    } else {
      throw ParseError(lineno, "unknown key '" + key + "'");
    }
  }
  if (!saw_header) throw ParseError(lineno, "empty architecture file");
  if (!saw_stage1) throw ParseError(lineno, "missing stage1 line");
  if (!saw_stage3) throw ParseError(lineno, "missing stage3 line");
  for (const auto& l : a.layers) {
    if (l.channels != a.stage1_channels) {
      throw ParseError(lineno, "searchable layer channels must equal stage1 channels");
    }
  }
  return a;
}

inline ArchitectureDescription architecture_from_string(const std::string& s) {
  std::istringstream is(s);
  return read_architecture(is);
}

}  // namespace kwsnas
