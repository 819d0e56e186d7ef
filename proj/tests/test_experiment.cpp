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

#include "qvf/experiment.hpp"
#include "qvf/rng.hpp"

using namespace qvf;
using namespace qvf::exp;
using nlohmann::json;

TEST_CASE("overrides address leaves by dotted path") {
    json doc = json::object();
    apply_override(doc, "model.strategy=dhf");
    apply_override(doc, "train.epochs=7");
    apply_override(doc, "model.optim.handler.lr=0.5");
    apply_override(doc, "data.kind=NoiseVsSignal");
    CHECK(doc["model"]["strategy"] == "dhf");
    CHECK(doc["train"]["epochs"] == 7);
    CHECK(doc["model"]["optim"]["handler"]["lr"] == 0.5);
    CHECK(doc["data"]["kind"] == "NoiseVsSignal");
    apply_override(doc, "train.epochs=9");
    CHECK(doc["train"]["epochs"] == 9);
    CHECK_THROWS_AS(apply_override(doc, "noequals"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "a..b=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(doc, "train.epochs.x=1"), ConfigError);
}

TEST_CASE("seeds derive from the root seed unless given") {
    const auto a = ExperimentConfig::resolve(json{{"seed", 3}});
    CHECK(a.seeds.theta_fix == derive_seed(3, "theta_fix"));
    CHECK(a.seeds.init == derive_seed(3, "init"));
    CHECK(a.seeds.shuffle == derive_seed(3, "shuffle"));
    CHECK(a.seeds.data == derive_seed(3, "data"));
    CHECK(a.model.seed == a.seeds.init);
    CHECK(a.model.quanv.seed == a.seeds.theta_fix);
    CHECK(a.train_options().shuffle_seed == a.seeds.shuffle);

    const auto b = ExperimentConfig::resolve(json{{"seed", 3}, {"seeds", {{"init", 42}}}});
    CHECK(b.seeds.init == 42);
    CHECK(b.seeds.theta_fix == a.seeds.theta_fix);
}

TEST_CASE("resolved config round trips through its JSON echo") {
    json doc = {{"seed", 11},
                {"data", {{"kind", "TexturedRings"}, {"train", 10}, {"label_noise", 0.1}}},
                {"model", {{"strategy", "tshf"}, {"batch_norm", true}}},
                {"train", {{"epochs", 4}, {"early_stopping", false}}}};
    const auto a = ExperimentConfig::resolve(doc);
    const auto b = ExperimentConfig::resolve(a.to_json());
    CHECK(a.to_json() == b.to_json());
    CHECK(b.data.synth == data::SynthKind::TexturedRings);
    CHECK(b.data.train == 10);
    CHECK(b.epochs == 4);
    CHECK_FALSE(b.early_stopping);
    CHECK(b.model.batch_norm);
}

TEST_CASE("invalid configs are rejected") {
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"epochs", 3}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json::array()), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"data", {{"source", "npz"}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"data", {{"source", "idx"}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"data", {{"source", "idx"}, {"dir", "/nonexistent"}}}}),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"data", {{"train", 0}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"data", {{"label_noise", 2}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"train", {{"batch_size", 0}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"model", {{"strategy", "late"}}}}), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::resolve(json{{"train", {{"epochs", "many"}}}}), ConfigError);
}

TEST_CASE("synthetic splits are balanced and seeded per split") {
    const auto cfg = ExperimentConfig::resolve(
        json{{"seed", 1}, {"data", {{"train", 10}, {"val", 6}, {"test", 6}, {"label_noise", 0.5}}}});
    const auto s = load_splits(cfg);
    CHECK(s.train.size() == 10);
    CHECK(s.val.size() == 6);
    CHECK(s.val.positives() == 3);
    CHECK(s.test.positives() == 3);
    CHECK(s.val.images != s.test.images);
    CHECK(&s.get(data::Split::Val) == &s.val);
    const auto again = load_splits(cfg);
    CHECK(again.train.images == s.train.images);
    CHECK(again.train.labels == s.train.labels);
}

TEST_CASE("manifest lookup") {
    CHECK(load_manifest("BreastMNIST").splits.at("test").total == 156);
    CHECK_THROWS(load_manifest("nothing-here"));
    CHECK(idx_images_name(data::Split::Val) == "val-images.idx3-ubyte");
    CHECK(idx_labels_name(data::Split::Test) == "test-labels.idx1-ubyte");
}
