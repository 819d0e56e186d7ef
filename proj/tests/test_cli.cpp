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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvf/binary_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "qvf_test_cli";

int run(const std::string &args) {
    const std::string cmd = std::string(QVF_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path fresh(const std::string &name) {
    const auto dir = kRoot / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path &p) { return qvf::io::read_file(p.string()); }

std::vector<std::string> lines_of(const fs::path &p) {
    std::istringstream in(slurp(p));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        out.push_back(line);
    }
    return out;
}

// A small TSHF experiment: Fixed circuit, linear backbone, d = 8.
fs::path write_config(const fs::path &dir, const std::string &strategy = "tshf") {
    const json cfg = {
        {"seed", 5},
        {"data", {{"source", "synthetic"}, {"kind", "SeparableBlobs"}, {"train", 24}, {"val", 8}, {"test", 8}}},
        {"model",
         {{"strategy", strategy},
          {"embed_dim", 8},
          {"quanv", {{"mode", "fixed"}}},
          {"backbone",
           {{"kind", "Custom"},
            {"layers", json::array({{{"op", "flatten"}}, {{"op", "linear"}, {"in", 784}, {"out", 8}}})}}}}},
        {"train", {{"epochs", 3}, {"batch_size", 8}}}};
    const auto path = dir / "experiment.json";
    std::ofstream(path) << cfg.dump(2);
    return path;
}

bool same_tree(const fs::path &a, const fs::path &b) {
    std::vector<std::string> names;
    for (const auto &e : fs::directory_iterator(a)) {
        names.push_back(e.path().filename().string());
    }
    std::size_t count_b = 0;
    for ([[maybe_unused]] const auto &e : fs::directory_iterator(b)) {
        ++count_b;
    }
    if (names.size() != count_b) {
        return false;
    }
    for (const auto &n : names) {
        if (!fs::exists(b / n) || slurp(a / n) != slurp(b / n)) {
            MESSAGE("differs: " << n);
            return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("synth writes IDX files deterministically") {
    const auto a = fresh("synth_a");
    const auto b = fresh("synth_b");
    const std::string args = "synth --kind TexturedRings --train 10 --val 4 --test 4 --seed 3 --out ";
    CHECK(run(args + a.string()) == 0);
    CHECK(run(args + b.string()) == 0);
    CHECK(fs::exists(a / "train-images.idx3-ubyte"));
    CHECK(fs::exists(a / "test-labels.idx1-ubyte"));
    CHECK(fs::exists(a / "config.json"));
    CHECK(same_tree(a, b));
    CHECK(fs::file_size(a / "val-images.idx3-ubyte") == 16 + 4 * 784);
}

TEST_CASE("usage errors exit with code 2") {
    const auto dir = fresh("usage");
    CHECK(run("synth --kind Spirals --out " + dir.string()) == 2);
    CHECK(run("") == 2);
    CHECK(run("train") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("train --set bogus=1 --out " + dir.string()) == 2);
    CHECK(run("train --set model.strategy=late --out " + dir.string()) == 2);
    CHECK(run("train --config " + (dir / "absent.json").string() + " --out " + dir.string()) == 2);
}

TEST_CASE("train outputs, determinism and gamma logging") {
    const auto dir = fresh("train");
    const auto cfg = write_config(dir);
    REQUIRE(run("train --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
    REQUIRE(run("train --config " + cfg.string() + " --out " + (dir / "b").string()) == 0);
    for (const char *f : {"config.json", "history.csv", "checkpoint_epoch0.qvfm",
                          "checkpoint_final.qvfm", "checkpoint_best.qvfm", "metrics_test.json",
                          "metrics_test.csv"}) {
        CHECK_MESSAGE(fs::exists(dir / "a" / f), f);
    }
    CHECK(same_tree(dir / "a", dir / "b"));

    const auto history = lines_of(dir / "a" / "history.csv");
    REQUIRE(history.size() >= 2);
    CHECK(history[0] == "epoch,train_loss,val_acc,val_f1,gamma");
    CHECK(history[1].starts_with("0,"));
    CHECK(history[1].ends_with(",1.000000"));
    CHECK(history.size() == 5);

    const auto metrics = lines_of(dir / "a" / "metrics_test.csv");
    CHECK(metrics[0] == "Acc,Prec,Rec,F1,AUC");

    const auto echoed = json::parse(slurp(dir / "a" / "config.json"));
    CHECK(echoed.at("model").at("strategy") == "tshf");
    CHECK(echoed.at("seeds").contains("shuffle"));
}

TEST_CASE("output is independent of QVF_THREADS") {
    const auto dir = fresh("threads");
    const auto cfg = write_config(dir, "dhf");
    REQUIRE(run("train --config " + cfg.string() + " --set model.quanv.mode=trainable --out " +
                (dir / "a").string()) == 0);
    setenv("QVF_THREADS", "1", 1);
    REQUIRE(run("train --config " + cfg.string() + " --set model.quanv.mode=trainable --out " +
                (dir / "b").string()) == 0);
    unsetenv("QVF_THREADS");
    CHECK(same_tree(dir / "a", dir / "b"));
    CHECK(lines_of(dir / "a" / "history.csv")[0] == "epoch,train_loss,val_acc,val_f1");
}

TEST_CASE("zero learning rates leave the checkpoint unchanged") {
    const auto dir = fresh("lr0");
    const auto cfg = write_config(dir);
    REQUIRE(run("train --config " + cfg.string() +
                " --set model.optim.quantum.lr=0 --set model.optim.classical.lr=0"
                " --set model.optim.handler.lr=0 --out " + (dir / "run").string()) == 0);
    CHECK(slurp(dir / "run" / "checkpoint_epoch0.qvfm") ==
          slurp(dir / "run" / "checkpoint_final.qvfm"));
}

TEST_CASE("eval reproduces the training report and reports failures") {
    const auto dir = fresh("eval");
    const auto cfg = write_config(dir);
    REQUIRE(run("train --config " + cfg.string() + " --out " + (dir / "run").string()) == 0);
    const auto best = dir / "run" / "checkpoint_best.qvfm";
    REQUIRE(run("eval --checkpoint " + best.string() + " --split test --out " +
                (dir / "eval").string()) == 0);
    CHECK(slurp(dir / "eval" / "metrics_test.csv") == slurp(dir / "run" / "metrics_test.csv"));
    CHECK(fs::exists(dir / "eval" / "config.json"));
    REQUIRE(run("eval --checkpoint " + best.string() + " --split val --out " +
                (dir / "eval").string()) == 0);
    CHECK(json::parse(slurp(dir / "eval" / "metrics_val.json")).at("split") == "val");

    CHECK(run("eval --checkpoint " + (dir / "missing.qvfm").string()) == 1);
    CHECK(run("eval --checkpoint " + best.string() + " --split holdout") == 2);

    // A checkpoint from one strategy does not load under another.
    const auto dhf_cfg = write_config(dir / "eval", "dhf");
    CHECK(run("eval --checkpoint " + best.string() + " --config " + dhf_cfg.string()) == 1);
}

TEST_CASE("SHF training writes feature caches and extract reproduces them") {
    const auto dir = fresh("shf");
    const auto cfg = write_config(dir, "shf");
    REQUIRE(run("train --config " + cfg.string() + " --out " + (dir / "run").string()) == 0);
    for (const char *s : {"train", "val", "test"}) {
        CHECK(fs::exists(dir / "run" / (std::string("features_") + s + ".qvfc")));
        CHECK(fs::exists(dir / "run" / (std::string("features_") + s + ".qvfc.json")));
    }
    REQUIRE(run("extract --config " + cfg.string() + " --checkpoint " +
                (dir / "run" / "checkpoint_final.qvfm").string() + " --out " +
                (dir / "x").string()) == 0);
    CHECK(slurp(dir / "x" / "features_test.qvfc") == slurp(dir / "run" / "features_test.qvfc"));
    const auto csv = lines_of(dir / "x" / "embeddings_val.csv");
    CHECK(csv.size() == 9);
    CHECK(csv[0].starts_with("label,q_0,"));
}

TEST_CASE("report compares runs and flags the best") {
    const auto dir = fresh("report");
    const auto cfg = write_config(dir);
    const char *strategies[] = {"dhf", "tshf", "baseline_classical"};
    for (const char *s : strategies) {
        REQUIRE(run("train --config " + cfg.string() + " --set model.strategy=" + s + " --out " +
                    (dir / "runs" / s).string()) == 0);
    }
    REQUIRE(run("report --runs " + (dir / "runs").string()) == 0);
    const auto csv = lines_of(dir / "runs" / "report.csv");
    REQUIRE(csv.size() == 4);
    CHECK(csv[0] == "run,strategy,backbone,quantum,Acc,Prec,Rec,F1,AUC,best");
    int flagged = 0;
    for (std::size_t i = 1; i < csv.size(); ++i) {
        flagged += csv[i].ends_with(",1");
    }
    CHECK(flagged == 1);
    CHECK(slurp(dir / "runs" / "report.md").find("best") != std::string::npos);
    CHECK(run("report --runs " + fresh("empty").string()) == 1);
}

TEST_CASE("training from IDX files with a manifest") {
    const auto dir = fresh("idx");
    REQUIRE(run("synth --train 6 --val 4 --test 4 --seed 2 --out " + (dir / "data").string()) == 0);
    const json manifest = {{"train", {{"total", 6}, {"positive", 3}, {"negative", 3}}},
                           {"val", {{"total", 4}, {"positive", 2}, {"negative", 2}}},
                           {"test", {{"total", 4}, {"positive", 2}, {"negative", 2}}}};
    std::ofstream(dir / "manifest.json") << manifest.dump();
    const auto cfg = write_config(dir);
    const std::string base = "train --config " + cfg.string() + " --set data.source=idx --set data.dir=" +
                             (dir / "data").string();
    CHECK(run(base + " --set train.epochs=1 --out " + (dir / "run").string()) == 0);
    CHECK(run(base + " --set data.manifest=" + (dir / "manifest.json").string() +
              " --set train.epochs=1 --out " + (dir / "run2").string()) == 0);
    CHECK(run(base + " --set data.manifest=BreastMNIST --out " + (dir / "run3").string()) == 1);
}
