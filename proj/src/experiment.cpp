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

#include "qvf/experiment.hpp"

#include <filesystem>
#include <fstream>

#include "qvf/rng.hpp"

namespace qvf::exp {

data::SplitManifest load_manifest(const std::string &name_or_path) {
    if (std::filesystem::is_regular_file(name_or_path)) {
        std::ifstream in(name_or_path);
        try {
            return data::SplitManifest::from_json(nlohmann::json::parse(in));
        } catch (const std::exception &e) {
            throw ConfigError("manifest " + name_or_path + ": " + e.what());
        }
    }
    return data::SplitManifest::named(name_or_path);
}

namespace {

template <typename T> T get_or(const nlohmann::json &j, const char *key, T fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception &e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

const char *kind_name(DataSource::Kind k) { return k == DataSource::Kind::Idx ? "idx" : "synthetic"; }

DataSource parse_data(const nlohmann::json &j) {
    DataSource d;
    const auto source = get_or<std::string>(j, "source", "synthetic");
    if (source == "idx") {
        d.kind = DataSource::Kind::Idx;
        d.dir = get_or<std::string>(j, "dir", "");
        d.manifest = get_or<std::string>(j, "manifest", "");
        if (d.dir.empty()) {
            throw ConfigError("data.dir is required for idx data");
        }
        for (auto split : {data::Split::Train, data::Split::Val, data::Split::Test}) {
            for (const auto &name : {idx_images_name(split), idx_labels_name(split)}) {
                const auto path = std::filesystem::path(d.dir) / name;
                if (!std::filesystem::exists(path)) {
                    throw ConfigError("data file not found: " + path.string());
                }
            }
        }
        if (!d.manifest.empty()) {
            (void)load_manifest(d.manifest);
        }
    } else if (source == "synthetic") {
        d.synth = data::synth_kind_from_string(get_or<std::string>(j, "kind", "SeparableBlobs"));
        d.train = get_or<std::size_t>(j, "train", d.train);
        d.val = get_or<std::size_t>(j, "val", d.val);
        d.test = get_or<std::size_t>(j, "test", d.test);
        d.label_noise = get_or<double>(j, "label_noise", d.label_noise);
        if (d.train == 0 || d.val == 0 || d.test == 0) {
            throw ConfigError("synthetic split sizes must be positive");
        }
        if (!(d.label_noise >= 0.0 && d.label_noise <= 1.0)) {
            throw ConfigError("data.label_noise must lie in [0, 1]");
        }
    } else {
        throw ConfigError("data.source must be 'synthetic' or 'idx', got '" + source + "'");
    }
    return d;
}

nlohmann::json data_to_json(const DataSource &d) {
    if (d.kind == DataSource::Kind::Idx) {
        nlohmann::json j = {{"source", kind_name(d.kind)}, {"dir", d.dir}};
        if (!d.manifest.empty()) {
            j["manifest"] = d.manifest;
        }
        return j;
    }
    return {{"source", kind_name(d.kind)}, {"kind", data::to_string(d.synth)},
            {"train", d.train},          {"val", d.val},
            {"test", d.test},            {"label_noise", d.label_noise}};
}

} // namespace

nlohmann::json ExperimentConfig::to_json() const {
    auto model_json = model.to_json();
    model_json.erase("seed");
    model_json["quanv"].erase("seed");
    return {{"seed", seed},
            {"seeds",
             {{"theta_fix", seeds.theta_fix},
              {"init", seeds.init},
              {"shuffle", seeds.shuffle},
              {"data", seeds.data}}},
            {"data", data_to_json(data)},
            {"model", model_json},
            {"train",
             {{"epochs", epochs},
              {"batch_size", batch_size},
              {"patience", patience},
              {"early_stopping", early_stopping}}}};
}

TrainOptions ExperimentConfig::train_options() const {
    TrainOptions o;
    o.epochs = epochs;
    o.batch_size = batch_size;
    o.patience = patience;
    o.early_stopping = early_stopping;
    o.shuffle_seed = seeds.shuffle;
    return o;
}

ExperimentConfig ExperimentConfig::resolve(const nlohmann::json &doc) {
    if (!doc.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    for (const auto &[key, value] : doc.items()) {
        if (key != "seed" && key != "seeds" && key != "data" && key != "model" &&
            key != "train") {
            throw ConfigError("unknown config key '" + key + "'");
        }
        (void)value;
    }
    ExperimentConfig c;
    try {
        c.seed = get_or<std::uint64_t>(doc, "seed", 0);
        const auto seeds = doc.value("seeds", nlohmann::json::object());
        c.seeds.theta_fix = get_or(seeds, "theta_fix", derive_seed(c.seed, "theta_fix"));
        c.seeds.init = get_or(seeds, "init", derive_seed(c.seed, "init"));
        c.seeds.shuffle = get_or(seeds, "shuffle", derive_seed(c.seed, "shuffle"));
        c.seeds.data = get_or(seeds, "data", derive_seed(c.seed, "data"));

        c.data = parse_data(doc.value("data", nlohmann::json::object()));

        auto model = doc.value("model", nlohmann::json::object());
        if (!model.is_object()) {
            throw ConfigError("model must be a JSON object");
        }
        model["seed"] = c.seeds.init;
        if (!model.contains("quanv")) {
            model["quanv"] = nlohmann::json::object();
        }
        model["quanv"]["seed"] = c.seeds.theta_fix;
        c.model = ModelConfig::from_json(model);

        const auto train = doc.value("train", nlohmann::json::object());
        c.epochs = get_or(train, "epochs", c.epochs);
        c.batch_size = get_or(train, "batch_size", c.batch_size);
        c.patience = get_or(train, "patience", c.patience);
        c.early_stopping = get_or(train, "early_stopping", c.early_stopping);
        if (c.batch_size == 0) {
            throw ConfigError("train.batch_size must be positive");
        }
    } catch (const ConfigError &) {
        throw;
    } catch (const std::exception &e) {
        throw ConfigError(e.what());
    }
    return c;
}

void apply_override(nlohmann::json &doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
    }
    const std::string path(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        value = raw;
    }
    nlohmann::json *node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) {
            throw ConfigError("override path '" + path + "' has an empty component");
        }
        if (!node->is_object()) {
            if (!node->is_null()) {
                throw ConfigError("override path '" + path + "' descends into a non-object");
            }
            *node = nlohmann::json::object();
        }
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

std::string idx_images_name(data::Split split) {
    return std::string(data::to_string(split)) + "-images.idx3-ubyte";
}

std::string idx_labels_name(data::Split split) {
    return std::string(data::to_string(split)) + "-labels.idx1-ubyte";
}

data::LabeledDataset synthetic_split(const DataSource &source, std::uint64_t data_seed,
                                     data::Split split) {
    const std::size_t n = split == data::Split::Train ? source.train
                          : split == data::Split::Val ? source.val
                                                      : source.test;
    auto counts = data::balanced(n);
    if (split == data::Split::Train) {
        counts.label_noise = source.label_noise;
    }
    return data::synth_dataset(source.synth, counts, derive_seed(data_seed, data::to_string(split)),
                               split);
}

const data::LabeledDataset &Splits::get(data::Split split) const {
    switch (split) {
    case data::Split::Train:
        return train;
    case data::Split::Val:
        return val;
    default:
        return test;
    }
}

Splits load_splits(const ExperimentConfig &config) {
    Splits s;
    const auto &d = config.data;
    auto one = [&](data::Split split) {
        if (d.kind == DataSource::Kind::Synthetic) {
            return synthetic_split(d, config.seeds.data, split);
        }
        const auto dir = std::filesystem::path(d.dir);
        return data::load_idx((dir / idx_images_name(split)).string(),
                              (dir / idx_labels_name(split)).string(), split);
    };
    s.train = one(data::Split::Train);
    s.val = one(data::Split::Val);
    s.test = one(data::Split::Test);
    if (d.kind == DataSource::Kind::Idx && !d.manifest.empty()) {
        const auto check =
            data::validate_splits({&s.train, &s.val, &s.test}, load_manifest(d.manifest));
        if (!check.ok) {
            std::string msg = "data does not match the " + d.manifest + " manifest:";
            for (const auto &m : check.mismatches) {
                msg += "\n  " + m;
            }
            throw std::runtime_error(msg);
        }
    }
    return s;
}

} // namespace qvf::exp
