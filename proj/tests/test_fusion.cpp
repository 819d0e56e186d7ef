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
#include <cstdlib>

#include "fusion_fixtures.hpp"
#include "qvf/checkpoint.hpp"
#include "qvf/feature_cache.hpp"

using namespace qvf;
using namespace qvf::testing;

TEST_CASE("concat_fuse examples") {
    CHECK(concat_fuse({{1, 2}, {3, 4}}) == std::vector<double>{1, 2, 3, 4});
    CHECK(concat_fuse({std::vector<double>(128, 0.5), std::vector<double>(128, 0.5)}).size() == 256);
    CHECK(concat_fuse({std::vector<double>(3, 0.0), std::vector<double>(3, 0.0)}) ==
          std::vector<double>(6, 0.0));
    CHECK_THROWS(concat_fuse({{1, 2}, {3}}));
}

TEST_CASE("temp_fuse examples") {
    SplitMix64 rng(1);
    const EmbeddingPair pair{random_vec(5, rng), random_vec(5, rng)};
    CHECK(temp_fuse(pair, 1.0) == concat_fuse(pair));
    const auto zeroed = temp_fuse(pair, 0.0);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(zeroed[i] == 0.0);
        CHECK(zeroed[5 + i] == pair.h_c[i]);
    }
    const auto scaled = temp_fuse({std::vector<double>(4, 1.0), std::vector<double>(4, 2.0)}, 0.1082);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(scaled[i] == 0.1082);
    }
    CHECK_THROWS(temp_fuse(pair, std::nan("")));
    CHECK_THROWS(temp_fuse({{1.0}, {1.0, 2.0}}, 1.0));
}

TEST_CASE("temp_fuse_backward examples") {
    const EmbeddingPair pair{{1.0, 0.0}, {5.0, 6.0}};
    const std::vector<double> up = {0.5, 7.0, -1.0, 2.0};
    const auto g1 = temp_fuse_backward(pair, 1.0, up);
    CHECK(g1.h_q == std::vector<double>{0.5, 7.0});
    CHECK(g1.h_c == std::vector<double>{-1.0, 2.0});
    CHECK(g1.gamma == 0.5);
    const auto g2 = temp_fuse_backward(pair, 2.0, up);
    CHECK(g2.h_q == std::vector<double>{1.0, 14.0});
    CHECK_THROWS(temp_fuse_backward(pair, 1.0, std::vector<double>(3, 0.0)));
}

TEST_CASE("property: fusion identities hold exactly") {
    SplitMix64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 1 + rng.below(130);
        const EmbeddingPair pair{random_vec(d, rng, -5, 5), random_vec(d, rng, -5, 5)};
        CHECK(temp_fuse(pair, 1.0) == concat_fuse(pair));
        const auto up = random_vec(2 * d, rng);
        const double gamma = rng.uniform(-3, 3);
        const auto at_one = temp_fuse_backward(pair, 1.0, up);
        const auto at_gamma = temp_fuse_backward(pair, gamma, up);
        for (std::size_t i = 0; i < d; ++i) {
            REQUIRE(at_gamma.h_q[i] == gamma * at_one.h_q[i]);
        }
        CHECK(at_gamma.h_c == at_one.h_c);
        // The gamma gradient is a plain inner product, independent of gamma.
        CHECK(at_gamma.gamma == at_one.gamma);
    }
}

TEST_CASE("parameter counts") {
    ModelConfig q;
    q.strategy = Strategy::BaselineQuantum;
    q.quanv.mode = QuanvMode::Fixed;
    auto counts = count_params(HybridModel(q));
    CHECK(counts.classical == 1570);
    CHECK(counts.quantum == 0);

    q.quanv.mode = QuanvMode::Trainable;
    counts = count_params(HybridModel(q));
    CHECK(counts.classical == 1570);
    CHECK(counts.quantum == 4);
    CHECK(counts.total() == 1574);

    ModelConfig c;
    c.strategy = Strategy::BaselineClassical;
    const HybridModel scnn(c);
    CHECK(scnn.handler.count() == 258);
    CHECK(count_params(scnn).classical == 99960 + 258);
    CHECK(count_params(scnn).quantum == 0);

    ModelConfig t; // TSHF, SCNN, trainable
    const HybridModel tshf(t);
    CHECK(tshf.handler_input_dim() == 256);
    CHECK(count_params(tshf).classical == 99960 + (784 * 128 + 128) + (256 * 2 + 2) + 1);
}

TEST_CASE("model structure per strategy") {
    for (auto s : {Strategy::SHF, Strategy::DHF, Strategy::TSHF}) {
        const HybridModel m(reduced_config(s));
        CHECK(m.handler_input_dim() == 16);
        CHECK(m.quantum_feature_dim() == 16);
        CHECK(m.gamma.weights.size() == (s == Strategy::TSHF ? 1U : 0U));
    }
    const HybridModel t(reduced_config(Strategy::TSHF));
    CHECK(t.gamma_value() == 1.0);
    CHECK(strategy_from_string("TSHF") == Strategy::TSHF);
    CHECK_THROWS(strategy_from_string("late"));
    auto bad = reduced_config(Strategy::DHF);
    bad.backbone.embed_dim = 4;
    CHECK_THROWS(HybridModel{bad});
}

TEST_CASE("full-pipeline gradient check, TSHF with reduced d = 8") {
    auto model = HybridModel(reduced_config(Strategy::TSHF));
    model.gamma.weights[0] = 0.7; // away from the identity point
    const auto ds = random_images(3, 4, 5);
    const auto check = full_gradient_check(model, whole_batch(ds));
    CHECK(check.worst < 1e-5);
    CHECK(check.per_group.count("theta") == 1);
    CHECK(check.per_group.count("gamma.weight") == 1);
    CHECK(check.per_group.count("quantum.proj.weight") == 1);
    CHECK(check.per_group.count("handler.weight") == 1);
    MESSAGE(check.checked << " parameters, worst relative error " << check.worst << " in "
                          << check.worst_group);
}

TEST_CASE("full-pipeline gradient check, other strategies and batch norm") {
    const auto ds = random_images(4, 4, 6);
    for (auto s : {Strategy::DHF, Strategy::BaselineQuantum, Strategy::BaselineClassical}) {
        const HybridModel model(reduced_config(s));
        CHECK(full_gradient_check(model, whole_batch(ds)).worst < 1e-5);
    }
    auto cfg = reduced_config(Strategy::TSHF);
    cfg.batch_norm = true;
    HybridModel bn(cfg);
    CHECK(bn.uses_batch_norm());
    const auto check = full_gradient_check(bn, whole_batch(ds));
    CHECK(check.worst < 1e-5);
    CHECK(check.per_group.count("bn_q.weight") == 1);
}

TEST_CASE("gamma gradient equals the temp_fuse_backward inner product") {
    const HybridModel model(reduced_config(Strategy::TSHF));
    const auto ds = random_images(3, 4, 7);
    const auto lg = compute_loss_and_grads(model, whole_batch(ds));
    const auto feats = extract_features(model, ds);
    double want = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const EmbeddingPair pair{feats.h_q[i], feats.h_c[i]};
        const auto input = temp_fuse(pair, 1.0);
        const auto logits = nn::linear_forward(input, model.handler);
        auto ce = nn::cross_entropy(logits.data(), ds.labels[i]);
        const auto back = nn::linear_backward(input, model.handler, ce.grad);
        want += temp_fuse_backward(pair, 1.0, back.input).gamma;
    }
    want /= static_cast<double>(ds.size());
    CHECK(lg.grads.gamma.weights[0] == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("TSHF at gamma = 1 reproduces the DHF forward pass") {
    const HybridModel dhf(reduced_config(Strategy::DHF));
    const HybridModel tshf(reduced_config(Strategy::TSHF));
    const auto ds = random_images(6, 4, 8);
    CHECK(predict_scores(dhf, ds) == predict_scores(tshf, ds));
    CHECK(batch_loss(dhf, whole_batch(ds)) == batch_loss(tshf, whole_batch(ds)));
}

TEST_CASE("zero learning rates leave the model unchanged") {
    auto cfg = reduced_config(Strategy::DHF);
    cfg.quantum_opt.lr = cfg.classical_opt.lr = cfg.handler_opt.lr = 0.0;
    HybridModel m(cfg);
    const auto before = m.named_tensors();
    const auto ds = random_images(4, 4, 9);
    const auto r = dhf_step(m, whole_batch(ds));
    CHECK(std::isfinite(r.loss));
    CHECK(m.named_tensors() == before);
}

TEST_CASE("fixed circuit parameters never move") {
    for (auto s : {Strategy::DHF, Strategy::TSHF, Strategy::BaselineQuantum}) {
        HybridModel m(reduced_config(s, QuanvMode::Fixed));
        const auto theta = m.quanv_state.theta;
        const auto ds = random_images(4, 4, 10);
        for (int step = 0; step < 25; ++step) {
            const auto r = train_step(m, whole_batch(ds));
            REQUIRE(r.grads.theta == std::vector<double>(theta.size(), 0.0));
        }
        CHECK(m.quanv_state.theta == theta);
    }
}

TEST_CASE("property: DHF gradient reaches both branches") {
    HybridModel m(reduced_config(Strategy::DHF));
    const auto before = m;
    const auto ds = random_images(4, 4, 11);
    (void)dhf_step(m, whole_batch(ds));
    double dq = 0.0;
    for (std::size_t i = 0; i < m.quanv_state.theta.size(); ++i) {
        dq = std::max(dq, std::abs(m.quanv_state.theta[i] - before.quanv_state.theta[i]));
    }
    for (std::size_t i = 0; i < m.q_proj.weights.size(); ++i) {
        dq = std::max(dq, std::abs(m.q_proj.weights[i] - before.q_proj.weights[i]));
    }
    double dc = 0.0;
    for (std::size_t k = 0; k < m.classical.params().size(); ++k) {
        const auto &a = m.classical.params()[k].weights;
        const auto &b = before.classical.params()[k].weights;
        for (std::size_t i = 0; i < a.size(); ++i) {
            dc = std::max(dc, std::abs(a[i] - b[i]));
        }
    }
    CHECK(dq > 0.0);
    CHECK(dc > 0.0);
    CHECK(m.quanv_state.theta != before.quanv_state.theta);
}

TEST_CASE("step functions check the strategy") {
    HybridModel dhf(reduced_config(Strategy::DHF));
    HybridModel shf(reduced_config(Strategy::SHF));
    const auto ds = random_images(2, 4, 12);
    CHECK_THROWS(tshf_step(dhf, whole_batch(ds)));
    CHECK_THROWS(train_step(shf, whole_batch(ds)));
}

TEST_CASE("non-finite loss names the batch") {
    HybridModel m(reduced_config(Strategy::TSHF));
    m.handler.weights[0] = std::nan("");
    const auto ds = random_images(2, 4, 13);
    try {
        (void)tshf_step(m, whole_batch(ds, 7));
        FAIL("expected NonFiniteLossError");
    } catch (const NonFiniteLossError &e) {
        CHECK(e.batch_index() == 7);
        CHECK(std::string(e.what()).find("batch 7") != std::string::npos);
    }
}

TEST_CASE("gradients do not depend on the thread count") {
    const HybridModel m(reduced_config(Strategy::TSHF));
    const auto ds = random_images(9, 4, 14);
    setenv("QVF_THREADS", "1", 1);
    const auto one = compute_loss_and_grads(m, whole_batch(ds));
    setenv("QVF_THREADS", "4", 1);
    const auto four = compute_loss_and_grads(m, whole_batch(ds));
    unsetenv("QVF_THREADS");
    CHECK(one.loss == four.loss);
    CHECK(one.grads.theta == four.grads.theta);
    CHECK(one.grads.handler.weights == four.grads.handler.weights);
    CHECK(one.grads.classical.params[0].weights == four.grads.classical.params[0].weights);
}

TEST_CASE("checkpoint round trip restores predictions") {
    auto cfg = reduced_config(Strategy::TSHF);
    cfg.batch_norm = true;
    HybridModel m(cfg);
    const auto ds = random_images(6, 4, 15);
    for (int i = 0; i < 3; ++i) {
        (void)train_step(m, whole_batch(ds));
    }
    const auto bytes = encode_checkpoint(m.named_tensors());
    HybridModel fresh(cfg);
    fresh.load_tensors(decode_checkpoint(bytes, "memory"));
    CHECK(fresh.named_tensors() == m.named_tensors());
    CHECK(predict_scores(fresh, ds) == predict_scores(m, ds));

    auto tensors = m.named_tensors();
    tensors.pop_back();
    CHECK_THROWS(fresh.load_tensors(tensors));
    tensors = m.named_tensors();
    tensors[0].tensor = Tensor({7});
    CHECK_THROWS(fresh.load_tensors(tensors));
    HybridModel dhf(reduced_config(Strategy::DHF));
    CHECK_THROWS(dhf.load_tensors(m.named_tensors()));
}

TEST_CASE("model config JSON round trip") {
    auto cfg = reduced_config(Strategy::TSHF, QuanvMode::Fixed, 9);
    cfg.batch_norm = true;
    cfg.handler_opt.lr = 0.05;
    const auto back = ModelConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
    CHECK(back.to_json() == cfg.to_json());
    const HybridModel a(cfg);
    const HybridModel b(back);
    CHECK(a.named_tensors() == b.named_tensors());
    CHECK(a.config_hash() == b.config_hash());
}

TEST_CASE("feature extraction is deterministic and carries provenance") {
    ModelConfig cfg; // full-size default: 28x28, d = 128
    cfg.strategy = Strategy::SHF;
    cfg.quanv.mode = QuanvMode::Fixed;
    const HybridModel m(cfg);
    const auto ds = data::synth_dataset(data::SynthKind::SeparableBlobs, data::balanced(4), 3);
    const auto a = extract_features(m, ds, {{"root", 3}});
    const auto b = extract_features(HybridModel(cfg), ds, {{"root", 3}});
    CHECK(encode_feature_cache(a) == encode_feature_cache(b));
    CHECK(a.dim == 128);
    CHECK(a.h_q[0].size() == 128);
    CHECK(a.h_c[0].size() == 128);
    CHECK(a.provenance.at("checkpoint_hash") == m.branch_hash());
    CHECK(a.provenance.at("theta").at("theta").size() == 4);
    CHECK(a.provenance.contains("config_hash"));
}

namespace {

FeatureCache separable_cache(const HybridModel &m, std::size_t n, std::uint64_t seed) {
    FeatureCache c;
    c.split = "train";
    c.dim = m.config().embed_dim;
    SplitMix64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        auto hq = random_vec(c.dim, rng);
        auto hc = random_vec(c.dim, rng);
        hc[0] = label == 1 ? rng.uniform(0.5, 1.5) : rng.uniform(-1.5, -0.5);
        c.labels.push_back(label);
        c.h_q.push_back(hq);
        c.h_c.push_back(hc);
    }
    c.provenance = cache_provenance(m, {{"root", seed}});
    return c;
}

} // namespace

TEST_CASE("SHF trains only the handler") {
    HybridModel m(reduced_config(Strategy::SHF));
    const auto hash = m.branch_hash();
    const auto cache = separable_cache(m, 64, 21);
    TrainOptions opts;
    opts.epochs = 250; // two steps per epoch
    opts.early_stopping = false;
    const auto handler_before = m.handler.weights;
    const auto r = shf_run(m, cache, nullptr, {&cache}, opts);
    CHECK(m.branch_hash() == hash);
    CHECK(m.handler.weights != handler_before);
    CHECK(r.reports.at("train").accuracy == 1.0);
    CHECK(r.history.size() == 251);
}

TEST_CASE("SHF rejects caches from other branch parameters") {
    HybridModel m(reduced_config(Strategy::SHF));
    const auto other = HybridModel(reduced_config(Strategy::SHF, QuanvMode::Trainable, 2));
    const auto cache = separable_cache(other, 8, 22);
    CHECK_THROWS_WITH_AS(shf_run(m, cache, nullptr, {}, TrainOptions{}),
                         doctest::Contains("provenance"), std::runtime_error);
    auto incomplete = separable_cache(m, 8, 23);
    incomplete.provenance.erase("seeds");
    CHECK_THROWS(shf_run(m, incomplete, nullptr, {}, TrainOptions{}));
}

TEST_CASE("pretrain_classical installs a trained backbone") {
    auto cfg = reduced_config(Strategy::SHF);
    HybridModel m(cfg);
    const auto before = m.classical.params()[0].weights;
    const auto quantum_before = m.q_proj.weights;
    const auto ds = random_images(8, 4, 24);
    TrainOptions opts;
    opts.epochs = 3;
    opts.batch_size = 4;
    (void)pretrain_classical(m, ds, nullptr, opts);
    CHECK(m.classical.params()[0].weights != before);
    CHECK(m.q_proj.weights == quantum_before);
}

TEST_CASE("training loop logs epoch 0 and tracks the best model") {
    auto cfg = reduced_config(Strategy::TSHF);
    HybridModel m(cfg);
    const auto train = random_images(16, 4, 25);
    const auto val = random_images(8, 4, 26);
    TrainOptions opts;
    opts.epochs = 6;
    opts.batch_size = 5;
    opts.patience = 2;
    std::vector<std::size_t> seen;
    opts.on_epoch = [&](const EpochLog &log, const HybridModel &) { seen.push_back(log.epoch); };
    const auto r = train_model(m, train, &val, opts);
    REQUIRE(!r.history.empty());
    CHECK(r.history[0].epoch == 0);
    CHECK(r.history[0].gamma.value() == 1.0);
    CHECK(seen.size() == r.history.size());
    CHECK(r.best.has_value());
    CHECK(r.history.size() <= 7);
    if (r.history.size() < 7) {
        CHECK(r.history.size() - 1 - r.best_epoch == opts.patience);
    }

    // Same seeds, same result.
    HybridModel again(cfg);
    const auto r2 = train_model(again, train, &val, opts);
    CHECK(again.named_tensors() == m.named_tensors());
    CHECK(r2.history.size() == r.history.size());
}

TEST_CASE("evaluate reports the split and seed") {
    const HybridModel m(reduced_config(Strategy::DHF));
    auto ds = random_images(10, 4, 27);
    ds.split = data::Split::Val;
    const auto rep = evaluate(m, ds, 99);
    CHECK(rep.split == "val");
    CHECK(rep.seed == 99);
    CHECK(rep.counts.total() == 10);
}
