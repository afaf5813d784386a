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

// Audio front end: 16-bit PCM WAV I/O, MFCC extraction and the training-time
// augmentations (random time shift, background-noise mixing).

#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "kwsnas/tensor.hpp"

namespace kwsnas {

struct AudioClip {
  std::vector<double> samples;  // in [-1, 1]
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double energy() const {
    double e = 0.0;
    for (double s : samples) e += s * s;
    return e;
  }
  friend bool operator==(const AudioClip&, const AudioClip&) = default;
};

// WAV ------------------------------------------------------------------------

class AudioFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads a mono 16-bit PCM WAV at `expected_rate` Hz; anything else is rejected.
inline AudioClip read_wav(const std::filesystem::path& path, int expected_rate = 16000) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioFormatError("cannot open audio file " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto fail = [&](const std::string& why) {
    throw AudioFormatError(path.string() + ": " + why);
  };
  auto u16 = [&](std::size_t o) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(buf[o]) |
                                      (static_cast<unsigned char>(buf[o + 1]) << 8));
  };
  auto u32 = [&](std::size_t o) {
    return static_cast<std::uint32_t>(u16(o)) | (static_cast<std::uint32_t>(u16(o + 2)) << 16);
  };
  if (buf.size() < 12 || std::string(buf.data(), 4) != "RIFF" ||
      std::string(buf.data() + 8, 4) != "WAVE") {
    fail("not a RIFF/WAVE file");
  }
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const std::uint32_t len = u32(pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > buf.size()) fail("truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (len < 16) fail("short fmt chunk");
      format = u16(body);
      channels = u16(body + 2);
      rate = u32(body + 4);
      bits = u16(body + 14);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail("data chunk before fmt chunk");
      if (format != 1) fail("only PCM encoding is supported");
      if (channels != 1) fail("only mono audio is supported");
      if (bits != 16) fail("only 16-bit samples are supported");
      if (static_cast<int>(rate) != expected_rate) {
        fail("sample rate " + std::to_string(rate) + " != " + std::to_string(expected_rate));
      }
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      clip.samples.resize(len / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        clip.samples[i] = static_cast<std::int16_t>(u16(body + 2 * i)) / 32768.0;
      }
      return clip;
    }
    pos = body + len + (len & 1);
  }
  fail("no data chunk");
  return {};
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto put16 = [&](std::uint16_t v) {
    out.put(static_cast<char>(v & 0xff));
    out.put(static_cast<char>(v >> 8));
  };
  auto put32 = [&](std::uint32_t v) {
    put16(static_cast<std::uint16_t>(v & 0xffff));
    put16(static_cast<std::uint16_t>(v >> 16));
  };
  const auto data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_len);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(clip.sample_rate));
  put32(static_cast<std::uint32_t>(clip.sample_rate * 2));
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_len);
  for (double s : clip.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
}

// MFCC -----------------------------------------------------------------------

struct MfccConfig {
  std::size_t num_mfcc = 10;
  double frame_length_ms = 40.0;
  double frame_stride_ms = 20.0;
  std::size_t num_mel_filters = 40;
  std::size_t fft_size = 1024;
  double mel_low_hz = 20.0;
  double mel_high_hz = 8000.0;
  double log_floor = 1e-10;
  int sample_rate = 16000;

  std::size_t frame_samples() const {
    return static_cast<std::size_t>(std::lround(frame_length_ms * sample_rate / 1000.0));
  }
  std::size_t hop_samples() const {
    return static_cast<std::size_t>(std::lround(frame_stride_ms * sample_rate / 1000.0));
  }
  std::size_t num_frames(std::size_t clip_samples) const {
    return 1 + clip_samples / hop_samples();
  }

  void validate() const {
    if (frame_length_ms < frame_stride_ms) throw std::invalid_argument("frame_length < frame_stride");
    if (hop_samples() == 0) throw std::invalid_argument("frame stride is zero samples");
    if (num_mfcc == 0 || num_mfcc > num_mel_filters) {
      throw std::invalid_argument("num_mfcc must be in [1, num_mel_filters]");
    }
    if (fft_size < frame_samples() || (fft_size & (fft_size - 1)) != 0) {
      throw std::invalid_argument("fft_size must be a power of two >= frame length");
    }
    if (!(log_floor > 0.0)) throw std::invalid_argument("log_floor must be positive");
    if (!(mel_low_hz >= 0.0 && mel_high_hz > mel_low_hz && mel_high_hz <= sample_rate / 2.0)) {
      throw std::invalid_argument("mel range must satisfy 0 <= low < high <= nyquist");
    }
  }
};

/// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const auto u = a[i + j];
        const auto v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular filters evenly spaced on the mel scale, (num_filters x fft_size/2+1).
inline std::vector<std::vector<double>> mel_filterbank(const MfccConfig& cfg) {
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.mel_low_hz), hi = hz_to_mel(cfg.mel_high_hz);
  std::vector<double> edges(cfg.num_mel_filters + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / (edges.size() - 1));
  }
  std::vector<std::vector<double>> fb(cfg.num_mel_filters, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < cfg.num_mel_filters; ++m) {
    for (std::size_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate / static_cast<double>(cfg.fft_size);
      const double up = (f - edges[m]) / (edges[m + 1] - edges[m]);
      const double down = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
      fb[m][b] = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

/// Reflect padding without repeating the edge sample.
inline std::vector<double> reflect_pad(std::span<const double> x, std::size_t pad) {
  if (x.size() <= pad) throw std::invalid_argument("clip too short for reflect padding");
  std::vector<double> out(x.size() + 2 * pad);
  for (std::size_t i = 0; i < pad; ++i) out[i] = x[pad - i];
  std::copy(x.begin(), x.end(), out.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) out[pad + x.size() + i] = x[x.size() - 2 - i];
  return out;
}

/// MFCC matrix shaped (1, 1, num_mfcc, num_frames).
///
/// Centered framing (half-frame reflect padding) -> periodic Hann window ->
/// |FFT| -> mel filterbank -> log(max(., floor)) -> orthonormal DCT-II.
class MfccExtractor {
 public:
  explicit MfccExtractor(MfccConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    filters_ = mel_filterbank(cfg_);
    const std::size_t L = cfg_.frame_samples();
    window_.resize(L);
    for (std::size_t n = 0; n < L; ++n) {
      window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / L);
    }
    const std::size_t M = cfg_.num_mel_filters;
    dct_.assign(cfg_.num_mfcc, std::vector<double>(M));
    for (std::size_t k = 0; k < cfg_.num_mfcc; ++k) {
      const double s = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(M));
      for (std::size_t n = 0; n < M; ++n) {
        dct_[k][n] = s * std::cos(std::numbers::pi * k * (2.0 * n + 1.0) / (2.0 * M));
      }
    }
  }

  const MfccConfig& config() const { return cfg_; }

  Tensor operator()(const AudioClip& clip) const {
    if (clip.sample_rate != cfg_.sample_rate) {
      throw std::invalid_argument("clip sample rate " + std::to_string(clip.sample_rate) +
                                  " != " + std::to_string(cfg_.sample_rate));
    }
    const std::size_t L = cfg_.frame_samples(), hop = cfg_.hop_samples(), pad = L / 2;
    if (clip.samples.size() <= pad || clip.samples.size() + 2 * pad < L) {
      throw std::invalid_argument("clip of " + std::to_string(clip.samples.size()) +
                                  " samples is shorter than one frame");
    }
    const auto padded = reflect_pad(clip.samples, pad);
    const std::size_t frames = 1 + (padded.size() - L) / hop;
    const std::size_t bins = cfg_.fft_size / 2 + 1;
    Tensor out({1, 1, cfg_.num_mfcc, frames});
    std::vector<std::complex<double>> buf(cfg_.fft_size);
    std::vector<double> mag(bins), logmel(cfg_.num_mel_filters);
    for (std::size_t f = 0; f < frames; ++f) {
      std::fill(buf.begin(), buf.end(), std::complex<double>{});
      for (std::size_t n = 0; n < L; ++n) buf[n] = padded[f * hop + n] * window_[n];
      fft_inplace(buf);
      for (std::size_t b = 0; b < bins; ++b) mag[b] = std::abs(buf[b]);
      for (std::size_t m = 0; m < cfg_.num_mel_filters; ++m) {
        double e = 0.0;
        for (std::size_t b = 0; b < bins; ++b) e += filters_[m][b] * mag[b];
        logmel[m] = std::log(std::max(e, cfg_.log_floor));
      }
      for (std::size_t k = 0; k < cfg_.num_mfcc; ++k) {
        double c = 0.0;
        for (std::size_t m = 0; m < cfg_.num_mel_filters; ++m) c += dct_[k][m] * logmel[m];
        out.at(0, 0, k, f) = c;
      }
    }
    return out;
  }

 private:
  MfccConfig cfg_;
  std::vector<std::vector<double>> filters_;
  std::vector<double> window_;
  std::vector<std::vector<double>> dct_;
};

inline Tensor mfcc(const AudioClip& clip, const MfccConfig& cfg = {}) {
  return MfccExtractor(cfg)(clip);
}

// Augmentation -----------------------------------------------------------------

inline constexpr double kMaxShiftMs = 100.0;
inline constexpr double kMaxNoiseEpsilon = 0.1;
inline constexpr double kNoiseProbability = 0.8;

/// Displaces samples by shift_ms (positive = later); vacated samples are zero.
inline AudioClip time_shift(const AudioClip& clip, double shift_ms) {
  if (std::abs(shift_ms) > kMaxShiftMs + 1e-9) {
    throw std::invalid_argument("time shift exceeds 100 ms");
  }
  const auto shift = std::lround(shift_ms * clip.sample_rate / 1000.0);
  AudioClip out{std::vector<double>(clip.size(), 0.0), clip.sample_rate};
  const auto n = static_cast<long>(clip.size());
  for (long i = 0; i < n; ++i) {
    const long src = i - shift;
    if (src >= 0 && src < n) out.samples[static_cast<std::size_t>(i)] = clip.samples[static_cast<std::size_t>(src)];
  }
  return out;
}

/// (1 - eps) * clip + eps * noise[0, len), clamped to [-1, 1].
inline AudioClip mix_noise(const AudioClip& clip, const AudioClip& noise, double epsilon) {
  if (epsilon < 0.0 || epsilon > kMaxNoiseEpsilon) {
    throw std::invalid_argument("noise epsilon must be in [0, 0.1]");
  }
  if (noise.size() < clip.size()) throw std::invalid_argument("noise slice shorter than clip");
  AudioClip out{std::vector<double>(clip.size()), clip.sample_rate};
  for (std::size_t i = 0; i < clip.size(); ++i) {
    out.samples[i] = std::clamp((1.0 - epsilon) * clip.samples[i] + epsilon * noise.samples[i],
                                -1.0, 1.0);
  }
  return out;
}

/// Samples [offset, offset + length) of `noise`.
inline AudioClip noise_slice(const AudioClip& noise, std::size_t offset, std::size_t length) {
  if (offset + length > noise.size()) throw std::invalid_argument("noise slice out of range");
  return {std::vector<double>(noise.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                              noise.samples.begin() + static_cast<std::ptrdiff_t>(offset + length)),
          noise.sample_rate};
}

template <typename Rng>
AudioClip random_noise_slice(const AudioClip& noise, std::size_t length, Rng& rng) {
  if (noise.size() < length) throw std::invalid_argument("noise file shorter than one clip");
  std::uniform_int_distribution<std::size_t> d(0, noise.size() - length);
  return noise_slice(noise, d(rng), length);
}

/// Random time shift, then with probability `noise_probability` a background
/// noise mix with fresh epsilon ~ U(0, 0.1). All randomness comes from `rng`.
template <typename Rng>
AudioClip augment(const AudioClip& clip, std::span<const AudioClip> noise_bank, Rng& rng,
                  double noise_probability = kNoiseProbability, bool* noise_applied = nullptr) {
  std::uniform_real_distribution<double> shift(-kMaxShiftMs, kMaxShiftMs);
  AudioClip out = time_shift(clip, shift(rng));
  std::bernoulli_distribution coin(noise_probability);
  const bool noisy = coin(rng);
  if (noise_applied) *noise_applied = noisy;
  if (!noisy) return out;
  if (noise_bank.empty()) throw std::invalid_argument("noise bank is empty");
  std::uniform_int_distribution<std::size_t> pick(0, noise_bank.size() - 1);
  const AudioClip& noise = noise_bank[pick(rng)];
  AudioClip slice = random_noise_slice(noise, out.size(), rng);
  std::uniform_real_distribution<double> eps(0.0, kMaxNoiseEpsilon);
  return mix_noise(out, slice, eps(rng));
}

/// Pads with zeros or crops to exactly `length` samples.
inline AudioClip fit_length(AudioClip clip, std::size_t length) {
  clip.samples.resize(length, 0.0);
  return clip;
}

}  // namespace kwsnas
