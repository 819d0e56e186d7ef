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
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"
#include "qvf/dataio.hpp"
#include "qvf/fusion.hpp"

/// Declarative experiment configuration shared by the command-line tools.
namespace qvf::exp {

/// Invalid or inconsistent configuration (the CLI maps it to exit code 2).
class ConfigError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

struct DataSource {
    enum class Kind { Synthetic, Idx };
    Kind kind = Kind::Synthetic;
    data::SynthKind synth = data::SynthKind::SeparableBlobs;
    std::size_t train = 400;
    std::size_t val = 100;
    std::size_t test = 100;
    double label_noise = 0.0; // train split only
    std::string dir;          // Idx: directory holding {split}-images/-labels files
    std::string manifest;     // Idx: optional manifest, a built-in name or a JSON file
};

/// Named sub-seeds of the root seed.
struct Seeds {
    std::uint64_t theta_fix = 0;
    std::uint64_t init = 0;
    std::uint64_t shuffle = 0;
    std::uint64_t data = 0;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    Seeds seeds;
    DataSource data;
    ModelConfig model;
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::size_t patience = 10;
    bool early_stopping = true;

    /// Fully resolved document; resolve(to_json()) reproduces this config.
    [[nodiscard]] nlohmann::json to_json() const;
    [[nodiscard]] TrainOptions train_options() const;
    /// Missing keys take defaults; missing seeds derive from the root seed.
    static ExperimentConfig resolve(const nlohmann::json &doc);
};

/// Sets the leaf named by a dotted path, e.g. "model.strategy=dhf". The value
/// is parsed as JSON when possible and taken as a string otherwise.
void apply_override(nlohmann::json &doc, std::string_view assignment);

/// IDX file names inside a data directory.
std::string idx_images_name(data::Split split);
std::string idx_labels_name(data::Split split);

/// Synthetic splits as a pure function of (source, data seed).
data::LabeledDataset synthetic_split(const DataSource &source, std::uint64_t data_seed,
                                     data::Split split);

struct Splits {
    data::LabeledDataset train;
    data::LabeledDataset val;
    data::LabeledDataset test;

    [[nodiscard]] const data::LabeledDataset &get(data::Split split) const;
};

/// Resolves a built-in manifest name or a path to a manifest JSON file.
data::SplitManifest load_manifest(const std::string &name_or_path);

Splits load_splits(const ExperimentConfig &config);

} // namespace qvf::exp
