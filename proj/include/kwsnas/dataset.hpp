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

// Speech Commands v1 ingestion (12-class task with unknown and silence),
// a synthetic tone dataset for desk-scale runs, and batch assembly.

#pragma once

#include <array>
#include <bit>
#include <map>
#include <memory>
#include <set>
#include <unordered_map>

#include "kwsnas/dsp.hpp"

namespace kwsnas {

enum class SplitRole { Train, Validation, Test };

inline const char* split_name(SplitRole r) {
  switch (r) {
    case SplitRole::Train: return "train";
    case SplitRole::Validation: return "validation";
    case SplitRole::Test: return "test";
  }
  return "?";
}

inline SplitRole parse_split(const std::string& s) {
  if (s == "train") return SplitRole::Train;
  if (s == "validation" || s == "val") return SplitRole::Validation;
  if (s == "test") return SplitRole::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

inline constexpr std::array<const char*, 10> kKeywords = {"yes",  "no",  "up",   "down", "left",
                                                          "right", "on", "off", "stop", "go"};
inline constexpr std::size_t kUnknownLabel = 10;
inline constexpr std::size_t kSilenceLabel = 11;
inline constexpr const char* kNoiseFolder = "_background_noise_";

inline std::vector<std::string> speech_commands_class_names() {
  std::vector<std::string> names(kKeywords.begin(), kKeywords.end());
  names.emplace_back("unknown");
  names.emplace_back("silence");
  return names;
}

struct ManifestEntry {
  std::string id;                        // relative path, synthetic id, or noise id for silence
  int label = 0;
  SplitRole split = SplitRole::Train;
  std::optional<std::size_t> noise_offset;  // silence entries: sample offset into the noise clip

  bool is_silence() const { return noise_offset.has_value(); }
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::vector<std::string> noise_bank;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;

  std::size_t num_classes() const { return class_names.size(); }

  std::vector<std::size_t> indices(SplitRole role) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].split == role) out.push_back(i);
    return out;
  }

  /// Throws if a non-silence id appears in more than one split.
  void check_partition() const {
    std::unordered_map<std::string, SplitRole> seen;
    for (const auto& e : entries) {
      if (e.is_silence()) continue;
      auto [it, fresh] = seen.emplace(e.id, e.split);
      if (!fresh && it->second != e.split) {
        throw std::logic_error("entry '" + e.id + "' appears in two splits");
      }
    }
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Tab-separated: id, label name, split, noise offset (silence only).
inline void write_manifest(std::ostream& os, const DatasetManifest& m) {
  for (const auto& e : m.entries) {
    os << e.id << '\t' << m.class_names.at(static_cast<std::size_t>(e.label)) << '\t'
       << split_name(e.split);
    if (e.noise_offset) os << '\t' << *e.noise_offset;
    os << '\n';
  }
}

// Directory layout -----------------------------------------------------------

struct RawIndex {
  std::map<std::string, std::vector<std::string>> words;  // word -> relative paths, sorted
  std::vector<std::string> noise_files;                    // relative paths, sorted

  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [w, f] : words) n += f.size();
    return n;
  }
};

/// Indexes a one-folder-per-word tree; the background-noise folder is kept apart.
inline RawIndex scan_layout(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw std::runtime_error("dataset root '" + root.string() + "' not found");
  RawIndex idx;
  for (const auto& dir : fs::directory_iterator(root)) {
    if (!dir.is_directory()) continue;
    const std::string name = dir.path().filename().string();
    std::vector<std::string> files;
    for (const auto& f : fs::directory_iterator(dir.path())) {
      if (f.is_regular_file() && f.path().extension() == ".wav") {
        files.push_back(name + "/" + f.path().filename().string());
      }
    }
    std::sort(files.begin(), files.end());
    if (name == kNoiseFolder) {
      idx.noise_files = std::move(files);
      continue;
    }
    if (files.empty()) throw std::runtime_error("word folder '" + dir.path().string() + "' is empty");
    idx.words[name] = std::move(files);
  }
  if (idx.words.empty()) throw std::runtime_error("dataset root '" + root.string() + "' has no word folders");
  return idx;
}

struct SplitLists {
  std::set<std::string> validation;
  std::set<std::string> testing;

  SplitRole role_of(const std::string& rel) const {
    if (testing.count(rel)) return SplitRole::Test;
    if (validation.count(rel)) return SplitRole::Validation;
    return SplitRole::Train;
  }
};

inline std::set<std::string> read_list_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read split list " + p.string());
  std::set<std::string> out;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

inline SplitLists read_split_lists(const std::filesystem::path& root) {
  return {read_list_file(root / "validation_list.txt"), read_list_file(root / "testing_list.txt")};
}

/// Builds the 12-class manifest: keywords as-is, then per split an unknown
/// class drawn from the non-keyword words and a silence class of noise
/// slices, both sized to the rounded mean word-class size of that split.
/// `noise_lengths` gives the sample count of every noise file.
inline DatasetManifest build_manifest(const RawIndex& raw, const SplitLists& lists,
                                      const std::vector<std::size_t>& noise_lengths,
                                      std::uint64_t seed, std::size_t clip_samples = 16000) {
  require_dim(noise_lengths.size(), raw.noise_files.size(), "noise length count");
  DatasetManifest m;
  m.class_names = speech_commands_class_names();
  m.noise_bank = raw.noise_files;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  const std::set<std::string> keywords(kKeywords.begin(), kKeywords.end());

  for (SplitRole role : {SplitRole::Train, SplitRole::Validation, SplitRole::Test}) {
    std::size_t total = 0;
    std::vector<std::string> others;
    for (const auto& [word, files] : raw.words) {
      const auto kw = std::find(kKeywords.begin(), kKeywords.end(), word);
      for (const auto& f : files) {
        if (lists.role_of(f) != role) continue;
        ++total;
        if (kw != kKeywords.end()) {
          m.entries.push_back({f, static_cast<int>(kw - kKeywords.begin()), role, std::nullopt});
        } else {
          others.push_back(f);
        }
      }
    }
    const auto quota = static_cast<std::size_t>(
        std::llround(static_cast<double>(total) / static_cast<double>(raw.words.size())));
    if (quota > others.size()) {
      throw std::runtime_error(std::string("unknown-class quota ") + std::to_string(quota) +
                               " exceeds " + std::to_string(others.size()) +
                               " non-keyword samples in split " + split_name(role));
    }
    std::shuffle(others.begin(), others.end(), rng);
    std::sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(quota));
    for (std::size_t i = 0; i < quota; ++i) {
      m.entries.push_back({others[i], static_cast<int>(kUnknownLabel), role, std::nullopt});
    }
    if (quota > 0) {
      std::vector<std::size_t> usable;
      for (std::size_t i = 0; i < noise_lengths.size(); ++i)
        if (noise_lengths[i] >= clip_samples) usable.push_back(i);
      if (usable.empty()) throw std::runtime_error("no noise file is at least one clip long");
      std::uniform_int_distribution<std::size_t> pick(0, usable.size() - 1);
      for (std::size_t i = 0; i < quota; ++i) {
        const std::size_t f = usable[pick(rng)];
        std::uniform_int_distribution<std::size_t> off(0, noise_lengths[f] - clip_samples);
        m.entries.push_back({raw.noise_files[f], static_cast<int>(kSilenceLabel), role, off(rng)});
      }
    }
  }
  m.check_partition();
  return m;
}

// Clip storage -----------------------------------------------------------------

class ClipStore {
 public:
  virtual ~ClipStore() = default;
  virtual AudioClip load(const std::string& id) const = 0;
};

class InMemoryClipStore final : public ClipStore {
 public:
  void put(std::string id, AudioClip clip) { clips_[std::move(id)] = std::move(clip); }
  AudioClip load(const std::string& id) const override {
    auto it = clips_.find(id);
    if (it == clips_.end()) throw std::runtime_error("unknown clip id '" + id + "'");
    return it->second;
  }
  std::size_t size() const { return clips_.size(); }

 private:
  std::map<std::string, AudioClip> clips_;
};

class FileClipStore final : public ClipStore {
 public:
  explicit FileClipStore(std::filesystem::path root) : root_(std::move(root)) {}
  AudioClip load(const std::string& id) const override { return read_wav(root_ / id); }

 private:
  std::filesystem::path root_;
};

/// Speech Commands directory: scan, read split lists and noise lengths, build.
inline DatasetManifest load_speech_commands(const std::filesystem::path& root, std::uint64_t seed) {
  const RawIndex raw = scan_layout(root);
  const SplitLists lists = read_split_lists(root);
  std::vector<std::size_t> lengths;
  for (const auto& f : raw.noise_files) lengths.push_back(read_wav(root / f).size());
  return build_manifest(raw, lists, lengths, seed);
}

// Toy dataset ------------------------------------------------------------------

struct ToyDataset {
  DatasetManifest manifest;
  std::shared_ptr<InMemoryClipStore> store;
};

inline constexpr double kToyAmplitude = 0.5;
inline constexpr double kToySnrDb = 10.0;

/// Class c is a sine at 300*(c+1) Hz plus white Gaussian noise at 10 dB SNR;
/// 70/15/15 split per class. Every clip depends only on (seed, class, index).
inline ToyDataset synthesize_toy(std::size_t num_classes, std::size_t samples_per_class,
                                 std::uint64_t seed, int sample_rate = 16000) {
  if (num_classes < 2 || num_classes > 12) throw std::invalid_argument("toy classes must be in [2, 12]");
  ToyDataset ds;
  ds.store = std::make_shared<InMemoryClipStore>();
  ds.manifest.seed = seed;
  for (std::size_t c = 0; c < num_classes; ++c) ds.manifest.class_names.push_back("tone" + std::to_string(c));

  const double signal_power = kToyAmplitude * kToyAmplitude / 2.0;
  const double noise_sigma = std::sqrt(signal_power / std::pow(10.0, kToySnrDb / 10.0));
  const auto n_train = static_cast<std::size_t>(std::llround(0.70 * samples_per_class));
  const auto n_val = static_cast<std::size_t>(std::llround(0.15 * samples_per_class));

  for (std::size_t c = 0; c < num_classes; ++c) {
    const double freq = 300.0 * static_cast<double>(c + 1);
    for (std::size_t i = 0; i < samples_per_class; ++i) {
      std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * (c * 100003 + i + 1)));
      std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
      std::normal_distribution<double> noise(0.0, noise_sigma);
      const double ph = phase(rng);
      AudioClip clip{std::vector<double>(static_cast<std::size_t>(sample_rate)), sample_rate};
      for (std::size_t t = 0; t < clip.size(); ++t) {
        const double s = kToyAmplitude * std::sin(2.0 * std::numbers::pi * freq * t / sample_rate + ph);
        clip.samples[t] = std::clamp(s + noise(rng), -1.0, 1.0);
      }
      std::string id = "toy/" + ds.manifest.class_names[c] + "/" + std::to_string(i);
      const SplitRole role = i < n_train ? SplitRole::Train
                             : i < n_train + n_val ? SplitRole::Validation
                                                   : SplitRole::Test;
      ds.manifest.entries.push_back({id, static_cast<int>(c), role, std::nullopt});
      ds.store->put(std::move(id), std::move(clip));
    }
  }
  // Two seconds of white noise for background mixing.
  std::mt19937_64 nrng(seed ^ 0x6e6f697365ull);
  std::normal_distribution<double> white(0.0, 0.3);
  AudioClip noise{std::vector<double>(2 * static_cast<std::size_t>(sample_rate)), sample_rate};
  for (auto& s : noise.samples) s = std::clamp(white(nrng), -1.0, 1.0);
  ds.manifest.noise_bank.push_back("toy_noise/white");
  ds.store->put("toy_noise/white", std::move(noise));
  ds.manifest.check_partition();
  return ds;
}

// Sample loading ---------------------------------------------------------------

struct LabeledFeatures {
  Tensor features;  // (1, 1, num_mfcc, num_frames)
  int label = 0;
};

/// Loads clips for one manifest and turns them into MFCC features.
/// Training-split samples are augmented; other splits are deterministic.
class SampleLoader {
 public:
  SampleLoader(const DatasetManifest& manifest, std::shared_ptr<const ClipStore> store,
               MfccConfig mfcc_cfg = {}, std::size_t clip_samples = 16000)
      : manifest_(manifest), store_(std::move(store)), extractor_(mfcc_cfg),
        clip_samples_(clip_samples) {
    for (const auto& id : manifest.noise_bank) noise_.push_back(store_->load(id));
  }

  const DatasetManifest& manifest() const { return manifest_; }
  const MfccExtractor& extractor() const { return extractor_; }
  std::span<const AudioClip> noise_bank() const { return noise_; }

  /// Raw (un-augmented) audio for an entry; silence entries slice the noise bank.
  AudioClip raw_clip(const ManifestEntry& e) const {
    if (e.is_silence()) {
      auto it = std::find(manifest_.noise_bank.begin(), manifest_.noise_bank.end(), e.id);
      if (it == manifest_.noise_bank.end()) throw std::runtime_error("silence source '" + e.id + "' not in noise bank");
      return noise_slice(noise_[static_cast<std::size_t>(it - manifest_.noise_bank.begin())],
                         *e.noise_offset, clip_samples_);
    }
    return fit_length(store_->load(e.id), clip_samples_);
  }

  template <typename Rng>
  LabeledFeatures load(const ManifestEntry& e, Rng& rng, bool training) const {
    AudioClip clip = raw_clip(e);
    if (training) clip = augment(clip, std::span<const AudioClip>(noise_), rng);
    return {extractor_(clip), e.label};
  }

 private:
  DatasetManifest manifest_;
  std::shared_ptr<const ClipStore> store_;
  MfccExtractor extractor_;
  std::size_t clip_samples_;
  std::vector<AudioClip> noise_;
};

struct Batch {
  Tensor inputs;  // (batch, 1, num_mfcc, num_frames)
  std::vector<int> labels;
  SplitRole role = SplitRole::Train;
};

/// One split of a manifest. Non-training splits cache their features.
class SplitData {
 public:
  SplitData(std::shared_ptr<const SampleLoader> loader, SplitRole role, bool augment_training = true)
      : loader_(std::move(loader)), role_(role),
        indices_(loader_->manifest().indices(role)), augment_(augment_training && role == SplitRole::Train) {}

  SplitRole role() const { return role_; }
  std::size_t size() const { return indices_.size(); }
  bool augmented() const { return augment_; }
  const ManifestEntry& entry(std::size_t i) const { return loader_->manifest().entries[indices_.at(i)]; }
  std::size_t num_classes() const { return loader_->manifest().num_classes(); }

  template <typename Rng>
  LabeledFeatures sample(std::size_t i, Rng& rng) {
    if (augment_) return loader_->load(entry(i), rng, true);
    if (cache_.empty()) cache_.resize(indices_.size());
    if (!cache_[i]) cache_[i] = loader_->load(entry(i), rng, false);
    return *cache_[i];
  }

  /// Position lists of at most batch_size; a trailing single sample is merged
  /// into the previous batch so batch-norm always sees >= 2 samples.
  template <typename Rng>
  std::vector<std::vector<std::size_t>> batches(std::size_t batch_size, Rng& rng, bool shuffle) const {
    std::vector<std::size_t> order(indices_.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
      out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    }
    if (out.size() >= 2 && out.back().size() == 1) {
      out[out.size() - 2].push_back(out.back().front());
      out.pop_back();
    }
    return out;
  }

  template <typename Rng>
  Batch load_batch(std::span<const std::size_t> positions, Rng& rng) {
    Batch b;
    b.role = role_;
    std::vector<double> data;
    Shape fshape;
    for (std::size_t pos : positions) {
      LabeledFeatures f = sample(pos, rng);
      fshape = f.features.shape();
      data.insert(data.end(), f.features.values().begin(), f.features.values().end());
      b.labels.push_back(f.label);
    }
    if (positions.empty()) throw std::invalid_argument("empty batch");
    b.inputs = Tensor({positions.size(), 1, fshape[2], fshape[3]}, std::move(data));
    return b;
  }

 private:
  std::shared_ptr<const SampleLoader> loader_;
  SplitRole role_;
  std::vector<std::size_t> indices_;
  bool augment_;
  std::vector<std::optional<LabeledFeatures>> cache_;
};

/// The three splits of a dataset, sharing one loader.
struct DataSplits {
  std::shared_ptr<const SampleLoader> loader;
  std::unique_ptr<SplitData> train, validation, test;

  std::size_t num_classes() const { return loader->manifest().num_classes(); }
};

inline DataSplits make_splits(const DatasetManifest& manifest, std::shared_ptr<const ClipStore> store,
                              MfccConfig cfg = {}, bool augment_training = true) {
  DataSplits s;
  s.loader = std::make_shared<SampleLoader>(manifest, std::move(store), cfg);
  s.train = std::make_unique<SplitData>(s.loader, SplitRole::Train, augment_training);
  s.validation = std::make_unique<SplitData>(s.loader, SplitRole::Validation);
  s.test = std::make_unique<SplitData>(s.loader, SplitRole::Test);
  return s;
}

// Feature cache -----------------------------------------------------------------

/// Un-augmented features of every manifest entry as little-endian f32,
/// row-major (clip, coeff, frame). The sidecar lists the config and one
/// `index<TAB>id<TAB>label<TAB>split` line per clip.
inline void write_feature_cache(std::ostream& data, std::ostream& sidecar, const SampleLoader& loader) {
  const auto& m = loader.manifest();
  const auto& cfg = loader.extractor().config();
  sidecar.imbue(std::locale::classic());
  sidecar << "format f32le clip,coeff,frame\n"
          << "num_mfcc " << cfg.num_mfcc << "\nframe_length_ms " << cfg.frame_length_ms
          << "\nframe_stride_ms " << cfg.frame_stride_ms << "\nnum_mel_filters " << cfg.num_mel_filters
          << "\nfft_size " << cfg.fft_size << "\nmel_low_hz " << cfg.mel_low_hz << "\nmel_high_hz "
          << cfg.mel_high_hz << "\nlog_floor " << cfg.log_floor << "\nsample_rate " << cfg.sample_rate
          << "\nclips " << m.entries.size() << '\n';
  std::size_t frames = 0;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const Tensor f = loader.extractor()(loader.raw_clip(e));
    if (i == 0) {
      frames = f.dim(3);
      sidecar << "frames " << frames << '\n';
    }
    for (double v : f.values()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) data.put(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
    sidecar << i << '\t' << e.id;
    if (e.noise_offset) sidecar << '@' << *e.noise_offset;
    sidecar << '\t' << m.class_names.at(static_cast<std::size_t>(e.label)) << '\t' << split_name(e.split) << '\n';
  }
}

}  // namespace kwsnas
