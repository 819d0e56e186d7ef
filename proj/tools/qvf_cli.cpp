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

// qvf: experiment runner (synth, train, extract, eval, report).
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "qvf/binary_io.hpp"
#include "qvf/checkpoint.hpp"
#include "qvf/dataio.hpp"
#include "qvf/experiment.hpp"
#include "qvf/feature_cache.hpp"
#include "qvf/fusion.hpp"
#include "qvf/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace qvf;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kUsageError = 2;

/// Failure before any work starts: bad flags, bad config, missing inputs.
struct UsageFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path &path, const std::string &text) {
    io::write_file(path.string(), text);
}

void write_json(const fs::path &path, const json &j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageFailure("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw UsageFailure(path.string() + ": " + e.what());
    }
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

fs::path prepare_out(const std::string &out) {
    const fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw UsageFailure("cannot create output directory " + out + ": " + ec.message());
    }
    return dir;
}

exp::ExperimentConfig load_config(const std::string &config_path,
                                  const std::vector<std::string> &overrides) {
    json doc = config_path.empty() ? json::object() : read_json(config_path);
    try {
        for (const auto &o : overrides) {
            exp::apply_override(doc, o);
        }
        return exp::ExperimentConfig::resolve(doc);
    } catch (const std::exception &e) {
        throw UsageFailure(std::string("config: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

struct SynthArgs {
    std::string kind = "SeparableBlobs";
    std::size_t train = 400;
    std::size_t val = 100;
    std::size_t test = 100;
    std::uint64_t seed = 0;
    double label_noise = 0.0;
    std::string out;
};

int cmd_synth(const SynthArgs &a) {
    json doc = {{"seed", a.seed},
                {"data",
                 {{"source", "synthetic"},
                  {"kind", a.kind},
                  {"train", a.train},
                  {"val", a.val},
                  {"test", a.test},
                  {"label_noise", a.label_noise}}}};
    exp::ExperimentConfig cfg;
    try {
        cfg = exp::ExperimentConfig::resolve(doc);
    } catch (const std::exception &e) {
        throw UsageFailure(e.what());
    }
    const auto dir = prepare_out(a.out);
    for (auto split : {data::Split::Train, data::Split::Val, data::Split::Test}) {
        const auto ds = exp::synthetic_split(cfg.data, cfg.seeds.data, split);
        data::save_idx(ds, (dir / exp::idx_images_name(split)).string(),
                       (dir / exp::idx_labels_name(split)).string());
    }
    json echo = cfg.to_json();
    echo["command"] = "synth";
    write_json(dir / "config.json", echo);
    std::cout << "wrote " << cfg.data.train << "/" << cfg.data.val << "/" << cfg.data.test
              << " images to " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

std::string history_csv(const std::vector<EpochLog> &history, bool with_gamma) {
    std::string out = with_gamma ? "epoch,train_loss,val_acc,val_f1,gamma\n"
                                 : "epoch,train_loss,val_acc,val_f1\n";
    for (const auto &h : history) {
        out += std::to_string(h.epoch) + "," + fmt(h.train_loss) + "," + fmt(h.val_acc) + "," +
               fmt(h.val_f1);
        if (with_gamma) {
            out += "," + fmt(h.gamma.value_or(1.0));
        }
        out += "\n";
    }
    return out;
}

void write_report(const fs::path &dir, const metrics::MetricsReport &r) {
    write_json(dir / ("metrics_" + r.split + ".json"), r.to_json());
    write_text(dir / ("metrics_" + r.split + ".csv"),
               metrics::MetricsReport::csv_header() + "\n" + r.csv_row() + "\n");
}

json seeds_json(const exp::ExperimentConfig &cfg) {
    return {{"root", cfg.seed},
            {"theta_fix", cfg.seeds.theta_fix},
            {"init", cfg.seeds.init},
            {"shuffle", cfg.seeds.shuffle},
            {"data", cfg.seeds.data}};
}

int cmd_train(const std::string &config_path, const std::vector<std::string> &overrides,
              const std::string &out) {
    const auto cfg = load_config(config_path, overrides);
    const auto dir = prepare_out(out);
    write_json(dir / "config.json", cfg.to_json());
    const auto splits = exp::load_splits(cfg);
    HybridModel model(cfg.model);
    auto options = cfg.train_options();
    const bool tshf = cfg.model.strategy == Strategy::TSHF;
    options.on_epoch = [&](const EpochLog &log, const HybridModel &m) {
        if (log.epoch == 0) {
            write_checkpoint((dir / "checkpoint_epoch0.qvfm").string(), m.named_tensors());
        }
        std::cout << "epoch " << log.epoch << " loss " << fmt(log.train_loss) << " val_acc "
                  << fmt(log.val_acc) << " val_f1 " << fmt(log.val_f1);
        if (log.gamma) {
            std::cout << " gamma " << fmt(*log.gamma);
        }
        std::cout << "\n";
    };

    std::vector<EpochLog> history;
    std::optional<HybridModel> best;
    if (cfg.model.strategy == Strategy::SHF) {
        auto pre_opts = options;
        pre_opts.on_epoch = nullptr;
        std::cout << "pretraining classical backbone\n";
        (void)pretrain_classical(model, splits.train, &splits.val, pre_opts);
        std::vector<FeatureCache> caches;
        for (auto split : {data::Split::Train, data::Split::Val, data::Split::Test}) {
            caches.push_back(extract_features(model, splits.get(split), seeds_json(cfg)));
            write_feature_cache((dir / ("features_" + caches.back().split + ".qvfc")).string(),
                                caches.back());
        }
        auto result = shf_run(model, caches[0], &caches[1], {&caches[2]}, options);
        history = result.history;
        best = model;
        best->handler = result.best_handler;
    } else {
        auto result = train_model(model, splits.train, &splits.val, options);
        history = result.history;
        best = std::move(result.best);
    }
    write_text(dir / "history.csv", history_csv(history, tshf));
    write_checkpoint((dir / "checkpoint_final.qvfm").string(), model.named_tensors());
    write_checkpoint((dir / "checkpoint_best.qvfm").string(), best->named_tensors());
    auto report = evaluate(*best, splits.test, cfg.seed);
    write_report(dir, report);
    const auto counts = count_params(model);
    std::cout << "parameters: classical " << counts.classical << ", quantum " << counts.quantum
              << "\n"
              << metrics::MetricsReport::csv_header() << "\n"
              << report.csv_row() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_extract(const std::string &config_path, const std::vector<std::string> &overrides,
                const std::string &checkpoint, const std::string &out) {
    const auto cfg = load_config(config_path, overrides);
    HybridModel model(cfg.model);
    if (!model.is_fusion()) {
        throw UsageFailure("extract needs a fusion strategy (shf, dhf or tshf)");
    }
    if (!checkpoint.empty() && !fs::exists(checkpoint)) {
        throw std::runtime_error("checkpoint not found: " + checkpoint);
    }
    const auto dir = prepare_out(out);
    json echo = cfg.to_json();
    if (!checkpoint.empty()) {
        echo["checkpoint"] = checkpoint;
    }
    write_json(dir / "config.json", echo);
    if (!checkpoint.empty()) {
        model.load_tensors(read_checkpoint(checkpoint));
    }
    const auto splits = exp::load_splits(cfg);
    for (auto split : {data::Split::Train, data::Split::Val, data::Split::Test}) {
        const auto cache = extract_features(model, splits.get(split), seeds_json(cfg));
        write_feature_cache((dir / ("features_" + cache.split + ".qvfc")).string(), cache);
        data::export_embeddings(cache, (dir / ("embeddings_" + cache.split + ".csv")).string());
        std::cout << cache.split << ": " << cache.size() << " records, d = " << cache.dim << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_eval(const std::string &checkpoint, std::string config_path, const std::string &split,
             std::string out) {
    if (!fs::exists(checkpoint)) {
        throw std::runtime_error("checkpoint not found: " + checkpoint);
    }
    const auto ckpt_dir = fs::path(checkpoint).parent_path();
    if (config_path.empty()) {
        config_path = (ckpt_dir / "config.json").string();
    }
    if (!fs::exists(config_path)) {
        throw std::runtime_error("config not found next to checkpoint: " + config_path);
    }
    data::Split which;
    try {
        which = data::split_from_string(split);
    } catch (const std::exception &e) {
        throw UsageFailure(e.what());
    }
    const auto cfg = load_config(config_path, {});
    HybridModel model(cfg.model);
    model.load_tensors(read_checkpoint(checkpoint));
    const auto splits = exp::load_splits(cfg);
    const auto report = evaluate(model, splits.get(which), cfg.seed);
    const auto dir = prepare_out(out.empty() ? ckpt_dir.string() : out);
    if (!out.empty()) {
        json echo = cfg.to_json();
        echo["checkpoint"] = checkpoint;
        write_json(dir / "config.json", echo);
    }
    write_report(dir, report);
    std::cout << metrics::MetricsReport::csv_header() << "\n" << report.csv_row() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const std::string &runs, std::string out) {
    if (!fs::is_directory(runs)) {
        throw std::runtime_error("not a directory: " + runs);
    }
    struct Row {
        std::string name;
        std::string strategy;
        std::string backbone;
        std::string mode;
        metrics::MetricsReport report;
    };
    std::vector<Row> rows;
    std::vector<fs::path> dirs;
    for (const auto &entry : fs::directory_iterator(runs)) {
        if (entry.is_directory() && fs::exists(entry.path() / "metrics_test.json")) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto &d : dirs) {
        Row row;
        row.name = d.filename().string();
        row.report = metrics::MetricsReport::from_json(read_json(d / "metrics_test.json"));
        if (fs::exists(d / "config.json")) {
            const auto cfg = read_json(d / "config.json");
            const auto model = cfg.value("model", json::object());
            row.strategy = model.value("strategy", "");
            if (row.strategy != "baseline_quantum" && model.contains("backbone") &&
                model["backbone"].is_object()) {
                row.backbone = model["backbone"].value("kind", "");
            }
            if (row.strategy != "baseline_classical" && model.contains("quanv")) {
                row.mode = model["quanv"].value("mode", "");
            }
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw std::runtime_error("no runs with metrics_test.json under " + runs);
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto &a = rows[i].report;
        const auto &b = rows[best].report;
        if (a.f1 > b.f1 || (a.f1 == b.f1 && a.auc > b.auc)) {
            best = i;
        }
    }
    std::string csv = "run,strategy,backbone,quantum," + metrics::MetricsReport::csv_header() +
                      ",best\n";
    std::string md = "# Strategy comparison\n\n"
                     "| Run | Strategy | Backbone | Quantum | Acc | Prec | Rec | F1 | AUC | |\n"
                     "|---|---|---|---|---|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto &r = rows[i];
        csv += r.name + "," + r.strategy + "," + r.backbone + "," + r.mode + "," +
               r.report.csv_row() + "," + (i == best ? "1" : "0") + "\n";
        md += "| " + r.name + " | " + r.strategy + " | " + r.backbone + " | " + r.mode + " | ";
        std::stringstream ss(r.report.csv_row());
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            md += (i == best ? "**" + cell + "**" : cell) + " | ";
        }
        md += (i == best ? "best" : "") + std::string(" |\n");
    }
    md += "\nBest row by test F1 (ties broken by AUC): " + rows[best].name + "\n";
    const auto dir = prepare_out(out.empty() ? runs : out);
    write_text(dir / "report.md", md);
    write_text(dir / "report.csv", csv);
    write_json(dir / "report_config.json", {{"runs", runs}, {"count", rows.size()}});
    std::cout << md;
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Hybrid quanvolutional fusion experiments"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto *s = app.add_subcommand("synth", "Write a synthetic dataset as IDX files");
    s->add_option("--kind", synth.kind, "SeparableBlobs, TexturedRings or NoiseVsSignal");
    s->add_option("--train", synth.train, "Training images");
    s->add_option("--val", synth.val, "Validation images");
    s->add_option("--test", synth.test, "Test images");
    s->add_option("--seed", synth.seed, "Root seed");
    s->add_option("--label-noise", synth.label_noise, "Fraction of training labels flipped");
    s->add_option("--out", synth.out, "Output directory")->required();

    std::string config_path;
    std::vector<std::string> overrides;
    std::string out;
    auto *t = app.add_subcommand("train", "Train a baseline or fusion model");
    t->add_option("--config", config_path, "Experiment config (JSON)");
    t->add_option("--set", overrides, "Override a config leaf, e.g. model.strategy=dhf");
    t->add_option("--out", out, "Run directory")->required();

    std::string checkpoint;
    auto *x = app.add_subcommand("extract", "Extract branch embeddings for every split");
    x->add_option("--config", config_path, "Experiment config (JSON)");
    x->add_option("--set", overrides, "Override a config leaf");
    x->add_option("--checkpoint", checkpoint, "Load branch parameters from a checkpoint");
    x->add_option("--out", out, "Output directory")->required();

    std::string split = "test";
    auto *e = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    e->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    e->add_option("--config", config_path, "Config (default: config.json beside the checkpoint)");
    e->add_option("--split", split, "train, val or test");
    e->add_option("--out", out, "Output directory (default: checkpoint directory)");

    std::string runs;
    auto *r = app.add_subcommand("report", "Compare runs that hold metrics_test.json");
    r->add_option("--runs", runs, "Directory of run directories")->required();
    r->add_option("--out", out, "Output directory (default: --runs)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kUsageError;
    }

    try {
        if (s->parsed()) {
            return cmd_synth(synth);
        }
        if (t->parsed()) {
            return cmd_train(config_path, overrides, out);
        }
        if (x->parsed()) {
            return cmd_extract(config_path, overrides, checkpoint, out);
        }
        if (e->parsed()) {
            return cmd_eval(checkpoint, config_path, split, out);
        }
        return cmd_report(runs, out);
    } catch (const UsageFailure &err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsageError;
    } catch (const std::exception &err) {
        std::cerr << "error: " << err.what() << "\n";
        return kRuntimeFailure;
    }
}
