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

#include <filesystem>
#include <fstream>

#include "support/oracles.hpp"

using namespace kwsnas;

namespace {

AudioClip tone(double hz, std::size_t n = 16000, double amp = 0.5) {
  AudioClip c{std::vector<double>(n), 16000};
  for (std::size_t i = 0; i < n; ++i) c.samples[i] = amp * std::sin(2 * std::numbers::pi * hz * i / 16000.0);
  return c;
}

}  // namespace

TEST(Mfcc, ShapeAnchor) {
  const Tensor f = mfcc(tone(440));
  EXPECT_EQ(f.shape(), (Shape{1, 1, 10, 51}));
  for (std::size_t n : {10u, 20u, 30u, 40u}) {
    MfccConfig cfg;
    cfg.num_mfcc = n;
    EXPECT_EQ(mfcc(tone(440), cfg).shape(), (Shape{1, 1, n, 51}));
  }
}

TEST(Mfcc, MatchesDirectDft) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> d(0, 0.2);
  AudioClip c = tone(700, 4000);
  for (auto& s : c.samples) s += d(rng);
  MfccConfig cfg;
  const Tensor f = mfcc(c, cfg);
  const auto ref = oracle::naive_mfcc(c.samples, cfg);
  ASSERT_EQ(f.dim(3), ref[0].size());
  for (std::size_t k = 0; k < cfg.num_mfcc; ++k)
    for (std::size_t t = 0; t < ref[0].size(); ++t) EXPECT_NEAR(f.at(0, 0, k, t), ref[k][t], 1e-8);
}

TEST(Mfcc, SilenceGivesConstantFrames) {
  AudioClip z{std::vector<double>(16000, 0.0), 16000};
  const Tensor f = mfcc(z);
  const double c0 = std::log(1e-10) * std::sqrt(40.0);
  for (std::size_t t = 0; t < 51; ++t) {
    EXPECT_NEAR(f.at(0, 0, 0, t), c0, 1e-9);
    for (std::size_t k = 1; k < 10; ++k) EXPECT_NEAR(f.at(0, 0, k, t), 0.0, 1e-9);
  }
}

TEST(Mfcc, RejectsTooShortAndWrongRate) {
  AudioClip tiny{std::vector<double>(100, 0.1), 16000};
  EXPECT_THROW(mfcc(tiny), std::invalid_argument);
  AudioClip wrong = tone(200);
  wrong.sample_rate = 8000;
  EXPECT_THROW(mfcc(wrong), std::invalid_argument);
  MfccConfig bad;
  bad.fft_size = 512;  // shorter than a 640-sample frame
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Mfcc, FftMatchesDft) {
  std::vector<std::complex<double>> a(64);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  for (auto& v : a) v = {d(rng), d(rng)};
  auto ref = a;
  fft_inplace(a);
  for (std::size_t k = 0; k < 64; ++k) {
    std::complex<double> acc;
    for (std::size_t n = 0; n < 64; ++n) acc += ref[n] * std::polar(1.0, -2 * std::numbers::pi * k * n / 64);
    EXPECT_NEAR(std::abs(a[k] - acc), 0.0, 1e-10);
  }
}

TEST(Augment, TimeShift) {
  AudioClip c = tone(300, 1600);
  EXPECT_EQ(time_shift(c, 0).samples, c.samples);
  const AudioClip s = time_shift(c, 10);  // 160 samples later
  for (std::size_t i = 0; i < 160; ++i) EXPECT_EQ(s.samples[i], 0.0);
  for (std::size_t i = 160; i < c.size(); ++i) EXPECT_EQ(s.samples[i], c.samples[i - 160]);
  const AudioClip e = time_shift(c, -100);
  for (std::size_t i = c.size() - 1600; i < c.size(); ++i) EXPECT_EQ(e.samples[i], 0.0);
  EXPECT_THROW(time_shift(c, 150), std::invalid_argument);
}

TEST(Augment, MixNoise) {
  AudioClip c = tone(300, 100), noise = tone(1000, 100, 0.9);
  EXPECT_EQ(mix_noise(c, noise, 0).samples, c.samples);
  AudioClip z{std::vector<double>(100, 0.0), 16000};
  const AudioClip m = mix_noise(z, noise, 0.1);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_DOUBLE_EQ(m.samples[i], 0.1 * noise.samples[i]);
  AudioClip loud{std::vector<double>(100, 1.0), 16000}, loud_noise{std::vector<double>(100, 1.0), 16000};
  for (double v : mix_noise(loud, loud_noise, 0.1).samples) EXPECT_LE(v, 1.0);
  EXPECT_THROW(mix_noise(c, noise, 0.2), std::invalid_argument);
}

TEST(Augment, NoiseProbabilityAndDeterminism) {
  AudioClip c = tone(300, 1600);
  std::vector<AudioClip> bank{tone(50, 3200, 0.3)};
  std::mt19937_64 rng(5);
  int noisy = 0;
  const int trials = 4000;
  for (int i = 0; i < trials; ++i) {
    bool applied = false;
    augment(c, bank, rng, kNoiseProbability, &applied);
    noisy += applied;
  }
  EXPECT_NEAR(noisy / double(trials), 0.8, 0.03);
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(augment(c, bank, a).samples, augment(c, bank, b).samples);
}

TEST(Wav, RoundTripAndRejection) {
  const auto dir = std::filesystem::temp_directory_path() / "kwsnas_wav_test";
  std::filesystem::create_directories(dir);
  AudioClip c = tone(440, 800);
  write_wav(dir / "a.wav", c);
  const AudioClip r = read_wav(dir / "a.wav");
  ASSERT_EQ(r.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(r.samples[i], c.samples[i], 1.0 / 32768);
  AudioClip other = c;
  other.sample_rate = 8000;
  write_wav(dir / "b.wav", other);
  EXPECT_THROW(read_wav(dir / "b.wav"), AudioFormatError);
  std::ofstream(dir / "c.wav") << "not a wav";
  EXPECT_THROW(read_wav(dir / "c.wav"), AudioFormatError);
  std::filesystem::remove_all(dir);
}
