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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qvf/binary_io.hpp"
#include "qvf/dataio.hpp"
#include "qvf/rng.hpp"

using namespace qvf;
using namespace qvf::data;

namespace {

std::string be32(std::uint32_t v) {
    return {static_cast<char>(v >> 24), static_cast<char>((v >> 16) & 0xFF),
            static_cast<char>((v >> 8) & 0xFF), static_cast<char>(v & 0xFF)};
}

// Two 28x28 images authored byte by byte: image 0 ramps pixel p to p % 256,
// image 1 is all 255 except its first pixel.
struct Fixture {
    std::string images;
    std::string labels;
};

Fixture hand_fixture() {
    Fixture f;
    f.images = std::string("\x00\x00\x08\x03", 4) + be32(2) + be32(28) + be32(28);
    for (int p = 0; p < 784; ++p) {
        f.images.push_back(static_cast<char>(p % 256));
    }
    f.images.push_back('\0');
    f.images.append(783, static_cast<char>(255));
    f.labels = std::string("\x00\x00\x08\x01", 4) + be32(2) + std::string("\x01\x00", 2);
    return f;
}

LabeledDataset with_counts(std::size_t pos, std::size_t neg, Split split) {
    LabeledDataset ds;
    ds.split = split;
    for (std::size_t i = 0; i < pos + neg; ++i) {
        ds.images.emplace_back(std::vector<std::size_t>{1, 28, 28});
        ds.labels.push_back(i < pos ? 1 : 0);
    }
    return ds;
}

std::filesystem::path temp_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / ("qvf_test_dataio_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("hand-built IDX fixture decodes to exact pixels") {
    const auto f = hand_fixture();
    const auto ds = decode_idx(f.images, f.labels, Split::Test);
    REQUIRE(ds.size() == 2);
    CHECK(ds.labels == std::vector<int>{1, 0});
    CHECK(ds.split == Split::Test);
    CHECK(ds.images[0].shape() == std::vector<std::size_t>{1, 28, 28});
    for (int p = 0; p < 784; ++p) {
        REQUIRE(ds.images[0][p] == static_cast<double>(p % 256) / 255.0);
    }
    CHECK(ds.images[0][0] == 0.0);
    CHECK(ds.images[0][255] == 1.0);
    CHECK(ds.images[1][0] == 0.0);
    CHECK(ds.images[1][783] == 1.0);
}

TEST_CASE("IDX round trip is bit-identical") {
    const auto f = hand_fixture();
    const auto ds = decode_idx(f.images, f.labels, Split::Train);
    CHECK(encode_idx_images(ds) == f.images);
    CHECK(encode_idx_labels(ds) == f.labels);

    const auto dir = temp_dir("roundtrip");
    const auto synth = synth_dataset(SynthKind::TexturedRings, balanced(6), 2);
    save_idx(synth, (dir / "a.idx3").string(), (dir / "a.idx1").string());
    const auto loaded = load_idx((dir / "a.idx3").string(), (dir / "a.idx1").string());
    save_idx(loaded, (dir / "b.idx3").string(), (dir / "b.idx1").string());
    CHECK(io::read_file((dir / "a.idx3").string()) == io::read_file((dir / "b.idx3").string()));
    CHECK(io::read_file((dir / "a.idx1").string()) == io::read_file((dir / "b.idx1").string()));
    CHECK(loaded.labels == synth.labels);
    std::filesystem::remove_all(dir);
}

TEST_CASE("IDX errors") {
    const auto f = hand_fixture();
    SUBCASE("truncated pixel data names the missing byte count") {
        const auto cut = f.images.substr(0, f.images.size() - 10);
        CHECK_THROWS_WITH_AS(decode_idx(cut, f.labels, Split::Train),
                             doctest::Contains("missing 10 bytes"), io::FormatError);
    }
    SUBCASE("truncated header") {
        CHECK_THROWS_WITH_AS(decode_idx(f.images.substr(0, 6), f.labels, Split::Train),
                             doctest::Contains("missing 2 bytes"), io::FormatError);
    }
    SUBCASE("bad magic") {
        auto bad = f.images;
        bad[3] = 0x02;
        CHECK_THROWS_WITH_AS(decode_idx(bad, f.labels, Split::Train),
                             doctest::Contains("magic"), io::FormatError);
        CHECK_THROWS_AS(decode_idx(f.labels, f.images, Split::Train), io::FormatError);
    }
    SUBCASE("dimension mismatch") {
        auto bad = f.images;
        bad[11] = 27;
        CHECK_THROWS_WITH_AS(decode_idx(bad, f.labels, Split::Train),
                             doctest::Contains("28x28"), io::FormatError);
    }
    SUBCASE("count mismatch") {
        const auto labels = std::string("\x00\x00\x08\x01", 4) + be32(1) + std::string("\x01", 1);
        CHECK_THROWS_WITH_AS(decode_idx(f.images, labels, Split::Train),
                             doctest::Contains("2 images but 1 labels"), io::FormatError);
    }
    SUBCASE("label outside {0,1}") {
        auto labels = f.labels;
        labels.back() = 2;
        CHECK_THROWS_AS(decode_idx(f.images, labels, Split::Train), io::FormatError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS(load_idx("/nonexistent/a", "/nonexistent/b"));
    }
}

TEST_CASE("property: loaded pixels and labels are in range") {
    SplitMix64 rng(9);
    std::string images = std::string("\x00\x00\x08\x03", 4) + be32(20) + be32(28) + be32(28);
    std::string labels = std::string("\x00\x00\x08\x01", 4) + be32(20);
    for (int i = 0; i < 20 * 784; ++i) {
        images.push_back(static_cast<char>(rng.below(256)));
    }
    for (int i = 0; i < 20; ++i) {
        labels.push_back(static_cast<char>(rng.below(2)));
    }
    const auto ds = decode_idx(images, labels, Split::Train);
    for (const auto &img : ds.images) {
        for (double v : img.data()) {
            REQUIRE(v >= 0.0);
            REQUIRE(v <= 1.0);
        }
    }
    for (int y : ds.labels) {
        REQUIRE((y == 0 || y == 1));
    }
}

TEST_CASE("named manifests carry the published split sizes") {
    const auto m = SplitManifest::named("BreastMNIST");
    CHECK(m.splits.at("train") == SplitCounts{546, 399, 147});
    CHECK(m.splits.at("val") == SplitCounts{78, 57, 21});
    CHECK(m.splits.at("test") == SplitCounts{156, 114, 42});
    std::size_t total = 0;
    std::size_t positive = 0;
    for (const auto &[name, c] : m.splits) {
        CHECK(c.positive + c.negative == c.total);
        total += c.total;
        positive += c.positive;
    }
    CHECK(total == 780);
    CHECK(positive == 570);
    CHECK_NOTHROW(SplitManifest::named("INbreast"));
    CHECK_NOTHROW(SplitManifest::named("BUS-UCLM"));
    CHECK_THROWS(SplitManifest::named("CIFAR"));
    CHECK(SplitManifest::from_json(m.to_json()).to_json() == m.to_json());
    CHECK_THROWS(SplitManifest::from_json(nlohmann::json::parse(
        R"({"train": {"total": 3, "positive": 1, "negative": 1}})")));
}

TEST_CASE("validate_splits") {
    const auto m = SplitManifest::named("BreastMNIST");
    const auto train = with_counts(399, 147, Split::Train);
    const auto val = with_counts(57, 21, Split::Val);
    const auto test = with_counts(114, 42, Split::Test);
    const auto ok = validate_splits({&train, &val, &test}, m);
    CHECK(ok.ok);
    CHECK(ok.mismatches.empty());

    // The val and test files swapped: the data keeps the split it was loaded as.
    auto val_swapped = with_counts(114, 42, Split::Val);
    auto test_swapped = with_counts(57, 21, Split::Test);
    const auto bad = validate_splits({&train, &val_swapped, &test_swapped}, m);
    CHECK_FALSE(bad.ok);
    REQUIRE(bad.mismatches.size() == 2);
    CHECK(bad.mismatches[0].starts_with("val:"));
    CHECK(bad.mismatches[1].starts_with("test:"));

    const auto empty = with_counts(0, 0, Split::Val);
    CHECK_THROWS_WITH(validate_splits({&empty}, m), doctest::Contains("empty"));
}

TEST_CASE("synthetic datasets are deterministic and balanced") {
    for (auto kind : {SynthKind::SeparableBlobs, SynthKind::TexturedRings, SynthKind::NoiseVsSignal}) {
        const auto a = synth_dataset(kind, balanced(100), 7);
        const auto b = synth_dataset(kind, balanced(100), 7);
        const auto c = synth_dataset(kind, balanced(100), 8);
        CHECK(a.labels == b.labels);
        CHECK(a.images == b.images);
        CHECK(a.images != c.images);
        CHECK(a.positives() == 50);
        CHECK(a.size() == 100);
        CHECK_NOTHROW(a.validate());
    }
    const auto odd = synth_dataset(SynthKind::SeparableBlobs, {3, 5}, 1);
    CHECK(odd.positives() == 5);
    CHECK(synth_kind_from_string("separableblobs") == SynthKind::SeparableBlobs);
    CHECK_THROWS(synth_kind_from_string("blobs"));
}

TEST_CASE("label noise flips a matching fraction of labels") {
    auto opts = balanced(2000);
    const auto clean = synth_dataset(SynthKind::NoiseVsSignal, opts, 3);
    opts.label_noise = 0.2;
    const auto noisy = synth_dataset(SynthKind::NoiseVsSignal, opts, 3);
    CHECK(noisy.images == clean.images);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        flipped += clean.labels[i] != noisy.labels[i];
    }
    CHECK(flipped > 340);
    CHECK(flipped < 460);
    opts.label_noise = 1.5;
    CHECK_THROWS(synth_dataset(SynthKind::NoiseVsSignal, opts, 3));
}

TEST_CASE("a linear probe on raw pixels separates SeparableBlobs") {
    const auto ds = synth_dataset(SynthKind::SeparableBlobs, balanced(100), 7);
    // Plain logistic regression by full-batch gradient descent.
    std::vector<double> w(784, 0.0);
    double b = 0.0;
    for (int it = 0; it < 300; ++it) {
        std::vector<double> gw(784, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            double z = b;
            for (std::size_t p = 0; p < 784; ++p) {
                z += w[p] * ds.images[i][p];
            }
            const double err = 1.0 / (1.0 + std::exp(-z)) - ds.labels[i];
            for (std::size_t p = 0; p < 784; ++p) {
                gw[p] += err * ds.images[i][p];
            }
            gb += err;
        }
        for (std::size_t p = 0; p < 784; ++p) {
            w[p] -= 0.05 * gw[p] / static_cast<double>(ds.size());
        }
        b -= 0.05 * gb / static_cast<double>(ds.size());
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        double z = b;
        for (std::size_t p = 0; p < 784; ++p) {
            z += w[p] * ds.images[i][p];
        }
        correct += (z >= 0.0 ? 1 : 0) == ds.labels[i];
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) > 0.95);
}

TEST_CASE("embedding export") {
    FeatureCache cache;
    cache.split = "train";
    cache.dim = 2;
    cache.labels = {1, 0, 1};
    cache.provenance = {{"seeds", {{"root", 1}}}, {"theta", {}}, {"checkpoint_hash", "x"},
                        {"config_hash", "y"}};
    SplitMix64 rng(10);
    for (int i = 0; i < 3; ++i) {
        cache.h_q.push_back({rng.uniform(-1, 1) / 3.0, rng.normal() * 1e-7});
        cache.h_c.push_back({rng.normal() * 1e5, rng.uniform()});
    }
    const auto csv = embeddings_csv(cache);
    std::istringstream in(csv);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    REQUIRE(lines.size() == 4);
    CHECK(lines[0] == "label,q_0,q_1,c_0,c_1");
    for (std::size_t r = 1; r < lines.size(); ++r) {
        std::vector<double> cols;
        std::istringstream row(lines[r]);
        std::string cell;
        while (std::getline(row, cell, ',')) {
            cols.push_back(std::stod(cell));
        }
        REQUIRE(cols.size() == 1 + 2 * cache.dim);
        CHECK(cols[0] == cache.labels[r - 1]);
        CHECK(std::abs(cols[1] - cache.h_q[r - 1][0]) <= 1e-12);
        CHECK(cols[2] == cache.h_q[r - 1][1]);
        CHECK(cols[3] == cache.h_c[r - 1][0]);
        CHECK(cols[4] == cache.h_c[r - 1][1]);
    }
    const auto dir = temp_dir("export");
    export_embeddings(cache, (dir / "e.csv").string());
    CHECK(io::read_file((dir / "e.csv").string()) == csv);
    std::filesystem::remove_all(dir);
}
