// Copyright 2026 The QVF Authors
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

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvf/feature_cache.hpp"
#include "qvf/tensor.hpp"

namespace qvf::data {

enum class Split { Train, Val, Test };

const char *to_string(Split split);
Split split_from_string(std::string_view name);

/// Grayscale images (1, h, w) with pixels in [0, 1] and labels in {0, 1}.
struct LabeledDataset {
    std::vector<Tensor> images;
    std::vector<int> labels;
    Split split = Split::Train;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    [[nodiscard]] std::size_t positives() const;
    void validate() const;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
inline constexpr std::size_t kImageSide = 28;

/// MNIST-style IDX pair: u8 rank-3 images (count, 28, 28) and u8 labels,
/// big-endian header words. Pixels are scaled by 1/255.
LabeledDataset decode_idx(const std::string &image_bytes, const std::string &label_bytes,
                          Split split, const std::string &source = "idx");
LabeledDataset load_idx(const std::string &images_path, const std::string &labels_path,
                        Split split = Split::Train);

/// Inverse of load_idx; pixels are rounded to the nearest u8 level. Any
/// square side is written, but load_idx only accepts 28 x 28.
std::string encode_idx_images(const LabeledDataset &dataset);
std::string encode_idx_labels(const LabeledDataset &dataset);
void save_idx(const LabeledDataset &dataset, const std::string &images_path,
              const std::string &labels_path);

struct SplitCounts {
    std::size_t total = 0;
    std::size_t positive = 0;
    std::size_t negative = 0;

    bool operator==(const SplitCounts &) const = default;
};

/// Expected per-split counts, keyed "train" / "val" / "test".
struct SplitManifest {
    std::map<std::string, SplitCounts> splits;

    /// BreastMNIST, INbreast or BUS-UCLM published split sizes.
    static SplitManifest named(std::string_view dataset);
    static SplitManifest from_json(const nlohmann::json &j);
    [[nodiscard]] nlohmann::json to_json() const;
};

struct SplitCheck {
    bool ok = true;
    std::vector<std::string> mismatches; // one line per offending split
};

/// Compares each dataset against the manifest entry for its split. Throws on
/// an empty split or a split missing from the manifest.
SplitCheck validate_splits(const std::vector<const LabeledDataset *> &datasets,
                           const SplitManifest &manifest);

enum class SynthKind { SeparableBlobs, TexturedRings, NoiseVsSignal };

const char *to_string(SynthKind kind);
SynthKind synth_kind_from_string(std::string_view name);

struct SynthOptions {
    std::size_t negatives = 0;
    std::size_t positives = 0;
    std::size_t side = kImageSide;
    /// Fraction of labels flipped after generation (images are untouched).
    double label_noise = 0.0;
};

/// Deterministic synthetic images, a pure function of (kind, counts, seed).
///  - SeparableBlobs: a Gaussian blob on the left (label 0) or right (1).
///  - TexturedRings: a ring whose angular texture frequency depends on the label.
///  - NoiseVsSignal: uniform noise in [0.02, 0.98] everywhere except a central
///    square of saturated pixels, 0.0 for label 0 and 1.0 for label 1. Under a
///    2*pi angle scale saturated pixels encode to the same qubit state, so the
///    quantum branch sees only the label-independent noise.
LabeledDataset synth_dataset(SynthKind kind, const SynthOptions &counts, std::uint64_t seed,
                             Split split = Split::Train);

/// Balanced counts helper: n/2 negatives, the rest positive.
SynthOptions balanced(std::size_t n, std::size_t side = kImageSide);

/// CSV: label,q_0..q_{d-1},c_0..c_{d-1}; 17 significant digits.
std::string embeddings_csv(const FeatureCache &cache);
void export_embeddings(const FeatureCache &cache, const std::string &path);

} // namespace qvf::data
