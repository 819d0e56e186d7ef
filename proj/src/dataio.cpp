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

#include "qvf/text.hpp"
#include "qvf/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "qvf/binary_io.hpp"
#include "qvf/rng.hpp"

namespace qvf::data {

const char *to_string(Split split) {
    switch (split) {
    case Split::Train:
        return "train";
    case Split::Val:
        return "val";
    case Split::Test:
        return "test";
    }
    return "?";
}

Split split_from_string(std::string_view name) {
    if (name == "train") {
        return Split::Train;
    }
    if (name == "val") {
        return Split::Val;
    }
    if (name == "test") {
        return Split::Test;
    }
    throw std::invalid_argument("unknown split '" + std::string(name) + "'");
}

std::size_t LabeledDataset::positives() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

void LabeledDataset::validate() const {
    if (images.size() != labels.size()) {
        throw std::invalid_argument(std::string(to_string(split)) + " split has " +
                                    std::to_string(images.size()) + " images but " +
                                    std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw std::invalid_argument("label outside {0,1} at index " + std::to_string(i));
        }
        for (const double v : images[i].data()) {
            if (!(v >= 0.0 && v <= 1.0)) {
                throw std::invalid_argument("pixel outside [0,1] in image " + std::to_string(i));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// IDX

LabeledDataset decode_idx(const std::string &image_bytes, const std::string &label_bytes,
                          Split split, const std::string &source) {
    io::ByteReader img(image_bytes, source + " images");
    const auto magic = img.u32_be("image magic");
    if (magic != kIdxImageMagic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "bad image magic 0x%08X (expected 0x%08X)", magic,
                      kIdxImageMagic);
        throw io::FormatError(source + ": " + buf);
    }
    const auto count = img.u32_be("image count");
    const auto rows = img.u32_be("row count");
    const auto cols = img.u32_be("column count");
    if (rows != kImageSide || cols != kImageSide) {
        throw io::FormatError(source + ": images are " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", expected 28x28");
    }
    const std::size_t plane = std::size_t{rows} * cols;
    img.need(std::size_t{count} * plane, "pixel data");

    io::ByteReader lab(label_bytes, source + " labels");
    const auto lmagic = lab.u32_be("label magic");
    if (lmagic != kIdxLabelMagic) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "bad label magic 0x%08X (expected 0x%08X)", lmagic,
                      kIdxLabelMagic);
        throw io::FormatError(source + ": " + buf);
    }
    const auto lcount = lab.u32_be("label count");
    if (lcount != count) {
        throw io::FormatError(source + ": " + std::to_string(count) + " images but " +
                              std::to_string(lcount) + " labels");
    }
    lab.need(count, "label data");

    LabeledDataset ds;
    ds.split = split;
    ds.images.reserve(count);
    ds.labels.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Tensor t({1, rows, cols});
        for (std::size_t p = 0; p < plane; ++p) {
            t[p] = static_cast<double>(img.u8("pixel")) / 255.0;
        }
        ds.images.push_back(std::move(t));
        const int label = lab.u8("label");
        if (label != 0 && label != 1) {
            throw io::FormatError(source + ": label " + std::to_string(label) + " at index " +
                                  std::to_string(i) + " is outside {0,1}");
        }
        ds.labels.push_back(label);
    }
    if (!img.at_end() || !lab.at_end()) {
        throw io::FormatError(source + ": trailing bytes after declared records");
    }
    return ds;
}

LabeledDataset load_idx(const std::string &images_path, const std::string &labels_path,
                        Split split) {
    return decode_idx(io::read_file(images_path), io::read_file(labels_path), split,
                      images_path);
}

std::string encode_idx_images(const LabeledDataset &dataset) {
    dataset.validate();
    io::ByteWriter w;
    w.u32_be(kIdxImageMagic);
    w.u32_be(static_cast<std::uint32_t>(dataset.size()));
    const std::size_t h = dataset.images.empty() ? kImageSide : dataset.images[0].dim(1);
    const std::size_t wd = dataset.images.empty() ? kImageSide : dataset.images[0].dim(2);
    w.u32_be(static_cast<std::uint32_t>(h));
    w.u32_be(static_cast<std::uint32_t>(wd));
    for (const auto &img : dataset.images) {
        if (img.shape() != std::vector<std::size_t>{1, h, wd}) {
            throw std::invalid_argument("IDX images must share one (1, h, w) shape");
        }
        for (const double v : img.data()) {
            w.u8(static_cast<std::uint8_t>(std::lround(v * 255.0)));
        }
    }
    return w.bytes();
}

std::string encode_idx_labels(const LabeledDataset &dataset) {
    io::ByteWriter w;
    w.u32_be(kIdxLabelMagic);
    w.u32_be(static_cast<std::uint32_t>(dataset.size()));
    for (const int l : dataset.labels) {
        w.u8(static_cast<std::uint8_t>(l));
    }
    return w.bytes();
}

void save_idx(const LabeledDataset &dataset, const std::string &images_path,
              const std::string &labels_path) {
    io::write_file(images_path, encode_idx_images(dataset));
    io::write_file(labels_path, encode_idx_labels(dataset));
}

// ---------------------------------------------------------------------------
// Split manifests

SplitManifest SplitManifest::named(std::string_view dataset) {
    SplitManifest m;
    if (dataset == "BreastMNIST") {
        m.splits = {{"train", {546, 399, 147}}, {"val", {78, 57, 21}}, {"test", {156, 114, 42}}};
    } else if (dataset == "INbreast") {
        m.splits = {{"train", {179, 117, 62}}, {"val", {38, 28, 10}}, {"test", {36, 25, 11}}};
    } else if (dataset == "BUS-UCLM") {
        m.splits = {{"train", {210, 45, 165}}, {"val", {28, 26, 2}}, {"test", {26, 19, 7}}};
    } else {
        throw std::invalid_argument("no built-in manifest for dataset '" +
                                    std::string(dataset) + "'");
    }
    return m;
}

SplitManifest SplitManifest::from_json(const nlohmann::json &j) {
    SplitManifest m;
    for (const auto &[name, v] : j.items()) {
        SplitCounts c{v.at("total").get<std::size_t>(), v.at("positive").get<std::size_t>(),
                      v.at("negative").get<std::size_t>()};
        if (c.positive + c.negative != c.total) {
            throw std::invalid_argument("manifest split '" + name +
                                        "': positive + negative != total");
        }
        m.splits[name] = c;
    }
    return m;
}

nlohmann::json SplitManifest::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto &[name, c] : splits) {
        j[name] = {{"total", c.total}, {"positive", c.positive}, {"negative", c.negative}};
    }
    return j;
}

SplitCheck validate_splits(const std::vector<const LabeledDataset *> &datasets,
                           const SplitManifest &manifest) {
    SplitCheck check;
    for (const auto *ds : datasets) {
        const std::string name = to_string(ds->split);
        if (ds->size() == 0) {
            throw std::invalid_argument("split '" + name + "' is empty");
        }
        const auto it = manifest.splits.find(name);
        if (it == manifest.splits.end()) {
            throw std::invalid_argument("manifest has no entry for split '" + name + "'");
        }
        const SplitCounts got{ds->size(), ds->positives(), ds->size() - ds->positives()};
        if (got != it->second) {
            check.ok = false;
            check.mismatches.push_back(
                name + ": expected total/positive/negative " + std::to_string(it->second.total) +
                "/" + std::to_string(it->second.positive) + "/" +
                std::to_string(it->second.negative) + ", found " + std::to_string(got.total) +
                "/" + std::to_string(got.positive) + "/" + std::to_string(got.negative));
        }
    }
    return check;
}

// ---------------------------------------------------------------------------
// Synthetic data

const char *to_string(SynthKind kind) {
    switch (kind) {
    case SynthKind::SeparableBlobs:
        return "SeparableBlobs";
    case SynthKind::TexturedRings:
        return "TexturedRings";
    case SynthKind::NoiseVsSignal:
        return "NoiseVsSignal";
    }
    return "?";
}

SynthKind synth_kind_from_string(std::string_view name) {
    for (auto k : {SynthKind::SeparableBlobs, SynthKind::TexturedRings,
                   SynthKind::NoiseVsSignal}) {
        if (iequals(name, to_string(k))) {
            return k;
        }
    }
    throw std::invalid_argument("unknown synthetic dataset kind '" + std::string(name) + "'");
}

SynthOptions balanced(std::size_t n, std::size_t side) { return {n / 2, n - n / 2, side}; }

namespace {

Tensor blob_image(int label, std::size_t side, SplitMix64 &rng) {
    const double s = static_cast<double>(side);
    const double cy = s / 2.0 + rng.uniform(-2.0, 2.0) * s / 28.0;
    const double cx = (label == 0 ? 0.3 : 0.7) * s + rng.uniform(-2.0, 2.0) * s / 28.0;
    const double sigma = 3.0 * s / 28.0;
    Tensor img({1, side, side});
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - cy;
            const double dx = static_cast<double>(x) + 0.5 - cx;
            const double v = 0.8 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)) +
                             rng.uniform(0.0, 0.1);
            img.at(0, y, x) = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

Tensor ring_image(int label, std::size_t side, SplitMix64 &rng) {
    const double s = static_cast<double>(side);
    const double radius = 0.3 * s;
    const double width = 0.08 * s;
    const double freq = label == 0 ? 3.0 : 7.0;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    Tensor img({1, side, side});
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const double dy = static_cast<double>(y) + 0.5 - s / 2.0;
            const double dx = static_cast<double>(x) + 0.5 - s / 2.0;
            const double r = std::sqrt(dx * dx + dy * dy);
            const double envelope = std::exp(-(r - radius) * (r - radius) / (2.0 * width * width));
            const double texture = 0.5 + 0.5 * std::cos(freq * std::atan2(dy, dx) + phase);
            const double v = 0.9 * envelope * texture + rng.uniform(0.0, 0.1);
            img.at(0, y, x) = std::clamp(v, 0.0, 1.0);
        }
    }
    return img;
}

Tensor noise_signal_image(int label, std::size_t side, SplitMix64 &rng) {
    Tensor img({1, side, side});
    const std::size_t lo = side * 5 / 14; // 10..17 on a 28 grid
    const std::size_t hi = side - lo;
    for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
            const bool in_block = y >= lo && y < hi && x >= lo && x < hi;
            const double noise = rng.uniform(0.02, 0.98);
            img.at(0, y, x) = in_block ? static_cast<double>(label) : noise;
        }
    }
    return img;
}

} // namespace

LabeledDataset synth_dataset(SynthKind kind, const SynthOptions &counts, std::uint64_t seed,
                             Split split) {
    if (counts.side < 4) {
        throw std::invalid_argument("synthetic images need a side of at least 4");
    }
    if (!(counts.label_noise >= 0.0 && counts.label_noise <= 1.0)) {
        throw std::invalid_argument("label_noise must lie in [0, 1]");
    }
    SplitMix64 rng(seed);
    LabeledDataset ds;
    ds.split = split;
    std::vector<int> labels(counts.negatives, 0);
    labels.insert(labels.end(), counts.positives, 1);
    const auto order = permutation(labels.size(), rng);
    for (const std::size_t idx : order) {
        const int label = labels[idx];
        ds.labels.push_back(label);
        switch (kind) {
        case SynthKind::SeparableBlobs:
            ds.images.push_back(blob_image(label, counts.side, rng));
            break;
        case SynthKind::TexturedRings:
            ds.images.push_back(ring_image(label, counts.side, rng));
            break;
        case SynthKind::NoiseVsSignal:
            ds.images.push_back(noise_signal_image(label, counts.side, rng));
            break;
        }
    }
    if (counts.label_noise > 0.0) {
        SplitMix64 flip(derive_seed(seed, "label_noise"));
        for (auto &label : ds.labels) {
            if (flip.uniform() < counts.label_noise) {
                label = 1 - label;
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Embedding export

std::string embeddings_csv(const FeatureCache &cache) {
    cache.validate();
    std::string out = "label";
    for (std::size_t f = 0; f < cache.dim; ++f) {
        out += ",q_" + std::to_string(f);
    }
    for (std::size_t f = 0; f < cache.dim; ++f) {
        out += ",c_" + std::to_string(f);
    }
    out += "\n";
    char buf[40];
    for (std::size_t i = 0; i < cache.size(); ++i) {
        out += std::to_string(cache.labels[i]);
        for (const auto *row : {&cache.h_q[i], &cache.h_c[i]}) {
            for (const double v : *row) {
                std::snprintf(buf, sizeof buf, ",%.17g", v);
                out += buf;
            }
        }
        out += "\n";
    }
    return out;
}

void export_embeddings(const FeatureCache &cache, const std::string &path) {
    io::write_file(path, embeddings_csv(cache));
}

} // namespace qvf::data
