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
#include "qvf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "qvf/digest.hpp"
#include "qvf/parallel.hpp"
#include "qvf/rng.hpp"

namespace qvf {

namespace {

void require(bool ok, const std::string &message) {
    if (!ok) {
        throw std::invalid_argument(message);
    }
}

nlohmann::json adam_to_json(const nn::AdamConfig &c) {
    return {{"lr", c.lr}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}};
}

nn::AdamConfig adam_from_json(const nlohmann::json &j, nn::AdamConfig base) {
    base.lr = j.value("lr", base.lr);
    base.beta1 = j.value("beta1", base.beta1);
    base.beta2 = j.value("beta2", base.beta2);
    base.epsilon = j.value("epsilon", base.epsilon);
    return base;
}

std::vector<double> flat(const Tensor &t) { return t.vec(); }

} // namespace

const char *to_string(Strategy strategy) {
    switch (strategy) {
    case Strategy::BaselineClassical:
        return "baseline_classical";
    case Strategy::BaselineQuantum:
        return "baseline_quantum";
    case Strategy::SHF:
        return "shf";
    case Strategy::DHF:
        return "dhf";
    case Strategy::TSHF:
        return "tshf";
    }
    return "?";
}

Strategy strategy_from_string(std::string_view name) {
    for (auto s : {Strategy::BaselineClassical, Strategy::BaselineQuantum, Strategy::SHF,
                   Strategy::DHF, Strategy::TSHF}) {
        if (iequals(name, to_string(s))) {
            return s;
        }
    }
    throw std::invalid_argument("unknown strategy '" + std::string(name) +
                                "' (expected baseline_classical, baseline_quantum, shf, dhf "
                                "or tshf)");
}

// ---------------------------------------------------------------------------
// Fusion operators

std::vector<double> concat_fuse(const EmbeddingPair &pair) {
    require(pair.h_q.size() == pair.h_c.size(), "fusion: branch embedding widths differ (" +
                                                    std::to_string(pair.h_q.size()) + " vs " +
                                                    std::to_string(pair.h_c.size()) + ")");
    std::vector<double> out(pair.h_q);
    out.insert(out.end(), pair.h_c.begin(), pair.h_c.end());
    return out;
}

std::vector<double> temp_fuse(const EmbeddingPair &pair, double gamma) {
    require(std::isfinite(gamma), "fusion: gamma must be finite");
    auto out = concat_fuse(pair);
    for (std::size_t i = 0; i < pair.h_q.size(); ++i) {
        out[i] = gamma * pair.h_q[i];
    }
    return out;
}

TempFuseGrads temp_fuse_backward(const EmbeddingPair &pair, double gamma,
                                 std::span<const double> upstream) {
    const std::size_t d = pair.h_q.size();
    require(pair.h_c.size() == d, "fusion: branch embedding widths differ");
    require(upstream.size() == 2 * d, "fusion: upstream gradient has length " +
                                          std::to_string(upstream.size()) + ", expected " +
                                          std::to_string(2 * d));
    TempFuseGrads g;
    g.h_q.resize(d);
    g.h_c.assign(upstream.begin() + static_cast<std::ptrdiff_t>(d), upstream.end());
    for (std::size_t i = 0; i < d; ++i) {
        g.h_q[i] = gamma * upstream[i];
        g.gamma += pair.h_q[i] * upstream[i];
    }
    return g;
}

// ---------------------------------------------------------------------------
// Config

void ModelConfig::validate() const {
    quanv.validate();
    require(image_shape.size() == 3, "model: image_shape must be (c, h, w)");
    require(image_shape[0] == quanv.in_channels,
            "model: image channels do not match quanv in_channels");
    require(embed_dim > 0, "model: embed_dim must be positive");
    const bool classical = strategy != Strategy::BaselineQuantum;
    if (classical) {
        require(backbone.embed_dim == embed_dim, "model: backbone embed_dim " +
                                                     std::to_string(backbone.embed_dim) +
                                                     " differs from embed_dim " +
                                                     std::to_string(embed_dim));
        require(backbone.input_shape == image_shape,
                "model: backbone input_shape differs from image_shape");
        (void)backbone.trace_shapes();
    }
    quantum_opt.validate();
    classical_opt.validate();
    handler_opt.validate();
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json q;
    qvf::to_json(q, quanv);
    nlohmann::json b;
    nn::to_json(b, backbone);
    return {{"strategy", qvf::to_string(strategy)},
            {"quanv", q},
            {"backbone", b},
            {"embed_dim", embed_dim},
            {"image_shape", image_shape},
            {"batch_norm", batch_norm},
            {"seed", seed},
            {"optim",
             {{"quantum", adam_to_json(quantum_opt)},
              {"classical", adam_to_json(classical_opt)},
              {"handler", adam_to_json(handler_opt)}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json &j) {
    require(j.is_object(), "model config must be a JSON object");
    ModelConfig c;
    if (j.contains("strategy")) {
        c.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    }
    if (j.contains("quanv")) {
        c.quanv = quanv_config_from_json(j.at("quanv"));
    }
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    if (j.contains("image_shape")) {
        c.image_shape = j.at("image_shape").get<std::vector<std::size_t>>();
    }
    if (j.contains("backbone")) {
        const auto &b = j.at("backbone");
        if (b.is_string()) {
            const auto kind = nn::backbone_kind_from_string(b.get<std::string>());
            require(kind != nn::BackboneKind::Custom,
                    "model: a custom backbone needs an explicit layer list");
            c.backbone = kind == nn::BackboneKind::SCNN ? nn::BackboneSpec::scnn(c.embed_dim)
                                                        : nn::BackboneSpec::mini_resnet(c.embed_dim);
        } else {
            auto spec = b;
            if (spec.is_object() && !spec.contains("embed_dim")) {
                spec["embed_dim"] = c.embed_dim;
            }
            if (spec.is_object() && !spec.contains("input_shape")) {
                spec["input_shape"] = c.image_shape;
            }
            c.backbone = nn::backbone_spec_from_json(spec);
        }
    } else {
        c.backbone = nn::BackboneSpec::scnn(c.embed_dim);
    }
    c.batch_norm = j.value("batch_norm", c.batch_norm);
    c.seed = j.value("seed", c.seed);
    if (j.contains("optim")) {
        const auto &o = j.at("optim");
        if (o.contains("quantum")) {
            c.quantum_opt = adam_from_json(o.at("quantum"), c.quantum_opt);
        }
        if (o.contains("classical")) {
            c.classical_opt = adam_from_json(o.at("classical"), c.classical_opt);
        }
        if (o.contains("handler")) {
            c.handler_opt = adam_from_json(o.at("handler"), c.handler_opt);
        }
    }
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Model

HybridModel::HybridModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const std::uint64_t root = config_.seed;
    if (has_quantum()) {
        quanv_state = QuanvState::initialize(config_.quanv);
        theta_moments.m.assign(quanv_state.theta.size(), 0.0);
        theta_moments.v.assign(quanv_state.theta.size(), 0.0);
    }
    const std::size_t d = config_.embed_dim;
    if (is_fusion()) {
        q_proj = nn::LayerParams("quantum.proj", {d, quantum_feature_dim()}, d);
        SplitMix64 rng(derive_seed(root, "init.quantum_proj"));
        nn::kaiming_uniform(q_proj, quantum_feature_dim(), rng);
    }
    if (has_classical()) {
        classical = nn::Backbone(config_.backbone, derive_seed(root, "init.classical"));
    }
    if (config_.strategy == Strategy::TSHF) {
        gamma = nn::LayerParams("fusion.gamma", {1}, 0);
        gamma.weights[0] = 1.0;
    }
    handler = nn::LayerParams("handler", {2, handler_input_dim()}, 2);
    SplitMix64 rng(derive_seed(root, "init.handler"));
    nn::kaiming_uniform(handler, handler_input_dim(), rng);
    if (uses_batch_norm()) {
        bn_q = nn::BatchNormState("bn_q", d);
        bn_c = nn::BatchNormState("bn_c", d);
    }
}

bool HybridModel::has_quantum() const {
    return config_.strategy != Strategy::BaselineClassical;
}

bool HybridModel::has_classical() const {
    return config_.strategy != Strategy::BaselineQuantum;
}

bool HybridModel::is_fusion() const { return has_quantum() && has_classical(); }

bool HybridModel::uses_batch_norm() const {
    return config_.batch_norm &&
           (config_.strategy == Strategy::DHF || config_.strategy == Strategy::TSHF);
}

std::size_t HybridModel::quantum_feature_dim() const {
    const auto &q = config_.quanv;
    return q.out_channels() * q.out_dim(config_.image_shape[1]) *
           q.out_dim(config_.image_shape[2]);
}

std::size_t HybridModel::handler_input_dim() const {
    switch (config_.strategy) {
    case Strategy::BaselineClassical:
        return config_.embed_dim;
    case Strategy::BaselineQuantum:
        return quantum_feature_dim();
    default:
        return 2 * config_.embed_dim;
    }
}

double HybridModel::gamma_value() const {
    return config_.strategy == Strategy::TSHF ? gamma.weights[0] : 1.0;
}

std::vector<NamedTensor> HybridModel::named_tensors() const {
    std::vector<NamedTensor> out;
    auto add_layer = [&](const std::string &prefix, const nn::LayerParams &p) {
        out.push_back({prefix + ".weight", p.weights});
        if (!p.bias.empty()) {
            out.push_back({prefix + ".bias", p.bias});
        }
    };
    if (has_quantum()) {
        out.push_back({"quantum.theta", Tensor({quanv_state.theta.size()}, quanv_state.theta)});
    }
    if (is_fusion()) {
        add_layer("quantum.proj", q_proj);
    }
    if (has_classical()) {
        for (const auto &p : classical.params()) {
            add_layer("classical." + p.name, p);
        }
    }
    if (config_.strategy == Strategy::TSHF) {
        out.push_back({"fusion.gamma", gamma.weights});
    }
    add_layer("handler", handler);
    if (uses_batch_norm()) {
        for (const auto *bn : {&bn_q, &bn_c}) {
            add_layer(bn->params.name, bn->params);
            const std::size_t d = bn->running_mean.size();
            out.push_back({bn->params.name + ".running_mean", Tensor({d}, bn->running_mean)});
            out.push_back({bn->params.name + ".running_var", Tensor({d}, bn->running_var)});
        }
    }
    return out;
}

void HybridModel::load_tensors(const std::vector<NamedTensor> &tensors) {
    std::map<std::string, const Tensor *> by_name;
    for (const auto &t : tensors) {
        require(by_name.emplace(t.name, &t.tensor).second,
                "checkpoint: duplicate tensor '" + t.name + "'");
    }
    const auto expected = named_tensors();
    require(tensors.size() == expected.size(),
            "checkpoint: holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                std::to_string(expected.size()));
    auto fetch = [&](const std::string &name, const Tensor &like) -> const Tensor & {
        auto it = by_name.find(name);
        require(it != by_name.end(), "checkpoint: missing tensor '" + name + "'");
        require(it->second->shape() == like.shape(),
                "checkpoint: tensor '" + name + "' has shape " +
                    shape_string(it->second->shape()) + ", model expects " +
                    shape_string(like.shape()));
        return *it->second;
    };
    auto load_layer = [&](const std::string &prefix, nn::LayerParams &p) {
        p.weights = fetch(prefix + ".weight", p.weights);
        if (!p.bias.empty()) {
            p.bias = fetch(prefix + ".bias", p.bias);
        }
        p.reset_moments();
    };
    if (has_quantum()) {
        const Tensor like({quanv_state.theta.size()});
        quanv_state.theta = fetch("quantum.theta", like).vec();
        std::fill(theta_moments.m.begin(), theta_moments.m.end(), 0.0);
        std::fill(theta_moments.v.begin(), theta_moments.v.end(), 0.0);
        theta_moments.step = 0;
    }
    if (is_fusion()) {
        load_layer("quantum.proj", q_proj);
    }
    if (has_classical()) {
        for (auto &p : classical.params()) {
            load_layer("classical." + p.name, p);
        }
    }
    if (config_.strategy == Strategy::TSHF) {
        gamma.weights = fetch("fusion.gamma", gamma.weights);
        gamma.reset_moments();
    }
    load_layer("handler", handler);
    if (uses_batch_norm()) {
        for (auto *bn : {&bn_q, &bn_c}) {
            load_layer(bn->params.name, bn->params);
            const Tensor like({bn->running_mean.size()});
            bn->running_mean = fetch(bn->params.name + ".running_mean", like).vec();
            bn->running_var = fetch(bn->params.name + ".running_var", like).vec();
        }
    }
}

std::string HybridModel::branch_hash() const {
    Sha256 h;
    for (const auto &t : named_tensors()) {
        if (t.name.rfind("quantum.", 0) != 0 && t.name.rfind("classical.", 0) != 0) {
            continue;
        }
        h.update(t.name);
        h.update(shape_string(t.tensor.shape()));
        h.update(t.tensor.data());
    }
    return h.hex();
}

std::string HybridModel::config_hash() const { return sha256_hex(config_.to_json().dump()); }

ParamCount count_params(const HybridModel &model) {
    ParamCount c;
    c.classical = model.handler.count() + model.q_proj.count() + model.gamma.count() +
                  model.bn_q.params.count() + model.bn_c.params.count();
    if (model.has_classical()) {
        c.classical += model.classical.param_count();
    }
    if (model.has_quantum() && !model.quanv_state.frozen) {
        c.quantum = model.quanv_state.theta.size();
    }
    return c;
}

// ---------------------------------------------------------------------------
// Gradients

NonFiniteLossError::NonFiniteLossError(std::size_t batch_index, double loss)
    : std::runtime_error("non-finite loss (" + std::to_string(loss) + ") at batch " +
                         std::to_string(batch_index)),
      batch_index_(batch_index) {}

Batch make_batch(const data::LabeledDataset &dataset, std::span<const std::size_t> indices,
                 const std::vector<std::vector<double>> *quantum_cache, std::size_t batch_index) {
    Batch b;
    b.index = batch_index;
    for (auto i : indices) {
        require(i < dataset.size(), "batch index out of range");
        b.images.push_back(&dataset.images[i]);
        b.labels.push_back(dataset.labels[i]);
        if (quantum_cache != nullptr) {
            b.quantum_features.push_back(&(*quantum_cache)[i]);
        }
    }
    return b;
}

ModelGrads ModelGrads::zeros_like(const HybridModel &model) {
    ModelGrads g;
    g.theta.assign(model.quanv_state.theta.size(), 0.0);
    g.q_proj = nn::LayerGrads::zeros_like(model.q_proj);
    g.classical = model.classical.zero_grads();
    g.gamma = nn::LayerGrads::zeros_like(model.gamma);
    g.handler = nn::LayerGrads::zeros_like(model.handler);
    g.bn_q = nn::LayerGrads::zeros_like(model.bn_q.params);
    g.bn_c = nn::LayerGrads::zeros_like(model.bn_c.params);
    return g;
}

ModelGrads &ModelGrads::operator+=(const ModelGrads &other) {
    require(theta.size() == other.theta.size(), "gradient theta sizes differ");
    for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] += other.theta[i];
    }
    q_proj += other.q_proj;
    classical += other.classical;
    gamma += other.gamma;
    handler += other.handler;
    bn_q += other.bn_q;
    bn_c += other.bn_c;
    return *this;
}

ModelGrads &ModelGrads::operator*=(double s) {
    for (auto &t : theta) {
        t *= s;
    }
    q_proj *= s;
    classical *= s;
    gamma *= s;
    handler *= s;
    bn_q *= s;
    bn_c *= s;
    return *this;
}

namespace {

struct SampleForward {
    std::vector<double> qf;  // flattened quanvolution output
    std::vector<double> h_q; // projected quantum embedding
    std::vector<double> h_c; // backbone embedding
    nn::BackboneTape tape;
};

std::vector<double> quantum_features(const HybridModel &model, const Tensor &image) {
    return quanv_forward(image, model.config().quanv, model.quanv_state).vec();
}

void check_image(const HybridModel &model, const Tensor &image) {
    require(image.shape() == model.config().image_shape,
            "image shape " + shape_string(image.shape()) + " does not match model input " +
                shape_string(model.config().image_shape));
}

/// Branch forward for one sample.
SampleForward branch_forward(const HybridModel &model, const Tensor &image,
                             const std::vector<double> *cached_qf, bool record) {
    check_image(model, image);
    SampleForward f;
    if (model.has_quantum()) {
        if (cached_qf != nullptr) {
            require(cached_qf->size() == model.quantum_feature_dim(),
                    "cached quantum features have the wrong width");
            f.qf = *cached_qf;
        } else {
            f.qf = quantum_features(model, image);
        }
        if (model.is_fusion()) {
            f.h_q = flat(nn::linear_forward(f.qf, model.q_proj));
        }
    }
    if (model.has_classical()) {
        f.h_c = flat(model.classical.forward(image, record ? &f.tape : nullptr));
    }
    return f;
}

std::vector<double> handler_input(const HybridModel &model, const std::vector<double> &qf,
                                  const std::vector<double> &z_q, const std::vector<double> &z_c) {
    switch (model.strategy()) {
    case Strategy::BaselineClassical:
        return z_c;
    case Strategy::BaselineQuantum:
        return qf;
    case Strategy::TSHF:
        return temp_fuse({z_q, z_c}, model.gamma_value());
    default:
        return concat_fuse({z_q, z_c});
    }
}

bool finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

struct BatchPass {
    double loss = 0.0;
    ModelGrads grads;
    nn::BatchNormState bn_q;
    nn::BatchNormState bn_c;
};

BatchPass run_batch(const HybridModel &model, const Batch &batch, bool want_grads) {
    const std::size_t b = batch.size();
    require(b > 0, "empty batch");
    require(batch.images.size() == b, "batch images and labels differ in count");
    require(batch.quantum_features.empty() || batch.quantum_features.size() == b,
            "batch quantum feature count differs from batch size");
    const bool use_cache = !batch.quantum_features.empty();
    if (use_cache && want_grads) {
        require(model.quanv_state.frozen || !model.has_quantum(),
                "precomputed quantum features require a Fixed quanvolution");
    }

    std::vector<SampleForward> fwd(b);
    parallel_for(b, [&](std::size_t i) {
        fwd[i] = branch_forward(model, *batch.images[i],
                                use_cache ? batch.quantum_features[i] : nullptr, want_grads);
    });

    BatchPass pass;
    pass.bn_q = model.bn_q;
    pass.bn_c = model.bn_c;
    const bool bn = model.uses_batch_norm();
    std::vector<std::vector<double>> z_q(b);
    std::vector<std::vector<double>> z_c(b);
    nn::BatchNormCache cache_q;
    nn::BatchNormCache cache_c;
    if (bn) {
        std::vector<std::vector<double>> rows_q(b);
        std::vector<std::vector<double>> rows_c(b);
        for (std::size_t i = 0; i < b; ++i) {
            rows_q[i] = fwd[i].h_q;
            rows_c[i] = fwd[i].h_c;
        }
        z_q = nn::batchnorm_forward(rows_q, pass.bn_q, true, &cache_q);
        z_c = nn::batchnorm_forward(rows_c, pass.bn_c, true, &cache_c);
    } else {
        for (std::size_t i = 0; i < b; ++i) {
            z_q[i] = fwd[i].h_q;
            z_c[i] = fwd[i].h_c;
        }
    }

    // Head and loss, serial and in index order.
    const double inv_b = 1.0 / static_cast<double>(b);
    std::vector<std::vector<double>> g_zq(b);
    std::vector<std::vector<double>> g_zc(b);
    std::vector<std::vector<double>> g_qf(b);
    if (want_grads) {
        pass.grads = ModelGrads::zeros_like(model);
    }
    double loss_sum = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const auto input = handler_input(model, fwd[i].qf, z_q[i], z_c[i]);
        const auto logits = nn::linear_forward(input, model.handler);
        if (!finite(logits.data())) {
            throw NonFiniteLossError(batch.index, std::nan(""));
        }
        const auto ce = nn::cross_entropy(logits.data(), batch.labels[i]);
        if (!std::isfinite(ce.loss)) {
            throw NonFiniteLossError(batch.index, ce.loss);
        }
        loss_sum += ce.loss;
        if (!want_grads) {
            continue;
        }
        std::vector<double> up(ce.grad);
        for (auto &g : up) {
            g *= inv_b;
        }
        auto hb = nn::linear_backward(input, model.handler, up, true);
        pass.grads.handler += hb.params;
        switch (model.strategy()) {
        case Strategy::BaselineClassical:
            g_zc[i] = std::move(hb.input);
            break;
        case Strategy::BaselineQuantum:
            g_qf[i] = std::move(hb.input);
            break;
        case Strategy::TSHF: {
            auto tg = temp_fuse_backward({z_q[i], z_c[i]}, model.gamma_value(), hb.input);
            pass.grads.gamma.weights[0] += tg.gamma;
            g_zq[i] = std::move(tg.h_q);
            g_zc[i] = std::move(tg.h_c);
            break;
        }
        default: {
            const std::size_t d = model.config().embed_dim;
            g_zq[i].assign(hb.input.begin(), hb.input.begin() + static_cast<std::ptrdiff_t>(d));
            g_zc[i].assign(hb.input.begin() + static_cast<std::ptrdiff_t>(d), hb.input.end());
            break;
        }
        }
    }
    pass.loss = loss_sum * inv_b;
    if (!std::isfinite(pass.loss)) {
        throw NonFiniteLossError(batch.index, pass.loss);
    }
    if (!want_grads) {
        return pass;
    }

    std::vector<std::vector<double>> &g_hq = g_zq;
    std::vector<std::vector<double>> &g_hc = g_zc;
    if (bn) {
        auto bq = nn::batchnorm_backward(pass.bn_q, cache_q, g_zq);
        auto bc = nn::batchnorm_backward(pass.bn_c, cache_c, g_zc);
        pass.grads.bn_q = std::move(bq.params);
        pass.grads.bn_c = std::move(bc.params);
        g_zq = std::move(bq.input);
        g_zc = std::move(bc.input);
    }

    // Branch backward, per sample, reduced afterwards in index order.
    struct SampleGrads {
        std::vector<double> theta;
        nn::LayerGrads q_proj;
        nn::BackboneGrads classical;
    };
    std::vector<SampleGrads> per(b);
    const bool theta_trainable = model.has_quantum() && !model.quanv_state.frozen &&
                                 !model.quanv_state.theta.empty();
    parallel_for(b, [&](std::size_t i) {
        auto &s = per[i];
        if (model.is_fusion()) {
            auto pb = nn::linear_backward(fwd[i].qf, model.q_proj, g_hq[i], theta_trainable);
            s.q_proj = std::move(pb.params);
            if (theta_trainable) {
                g_qf[i] = std::move(pb.input);
            }
        }
        if (theta_trainable) {
            const auto &q = model.config().quanv;
            const auto &img = *batch.images[i];
            Tensor up({q.out_channels(), q.out_dim(img.dim(1)), q.out_dim(img.dim(2))},
                      std::move(g_qf[i]));
            s.theta = quanv_backward(img, q, model.quanv_state, up, false).theta;
        }
        if (model.has_classical()) {
            s.classical = model.classical.backward(fwd[i].tape,
                                                   Tensor({g_hc[i].size()}, g_hc[i]), false);
        }
    });
    for (std::size_t i = 0; i < b; ++i) {
        auto &s = per[i];
        if (theta_trainable) {
            for (std::size_t k = 0; k < s.theta.size(); ++k) {
                pass.grads.theta[k] += s.theta[k];
            }
        }
        if (model.is_fusion()) {
            pass.grads.q_proj += s.q_proj;
        }
        if (model.has_classical()) {
            s.classical.input = Tensor();
            pass.grads.classical += s.classical;
        }
    }
    pass.grads.classical.input = Tensor();
    return pass;
}

void apply_step(HybridModel &model, const ModelGrads &g) {
    const auto &cfg = model.config();
    nn::adam_step(model.handler, g.handler, cfg.handler_opt);
    if (cfg.strategy == Strategy::TSHF) {
        nn::adam_step(model.gamma, g.gamma, cfg.handler_opt);
    }
    if (model.uses_batch_norm()) {
        nn::adam_step(model.bn_q.params, g.bn_q, cfg.handler_opt);
        nn::adam_step(model.bn_c.params, g.bn_c, cfg.handler_opt);
    }
    if (model.has_classical()) {
        auto &params = model.classical.params();
        for (std::size_t k = 0; k < params.size(); ++k) {
            nn::adam_step(params[k], g.classical.params[k], cfg.classical_opt);
        }
    }
    if (model.is_fusion()) {
        nn::adam_step(model.q_proj, g.q_proj, cfg.quantum_opt);
    }
    if (model.has_quantum() && !model.quanv_state.frozen && !model.quanv_state.theta.empty()) {
        auto &tm = model.theta_moments;
        tm.step += 1;
        nn::adam_apply(model.quanv_state.theta, g.theta, tm.m, tm.v, tm.step, cfg.quantum_opt);
    }
}

} // namespace

LossAndGrads compute_loss_and_grads(const HybridModel &model, const Batch &batch) {
    auto pass = run_batch(model, batch, true);
    return {pass.loss, std::move(pass.grads)};
}

double batch_loss(const HybridModel &model, const Batch &batch) {
    return run_batch(model, batch, false).loss;
}

StepResult train_step(HybridModel &model, const Batch &batch) {
    require(model.strategy() != Strategy::SHF,
            "SHF trains only the handler on cached features (use shf_run)");
    auto pass = run_batch(model, batch, true);
    apply_step(model, pass.grads);
    if (model.uses_batch_norm()) {
        model.bn_q.running_mean = pass.bn_q.running_mean;
        model.bn_q.running_var = pass.bn_q.running_var;
        model.bn_c.running_mean = pass.bn_c.running_mean;
        model.bn_c.running_var = pass.bn_c.running_var;
    }
    return {pass.loss, std::move(pass.grads)};
}

StepResult dhf_step(HybridModel &model, const Batch &batch) {
    require(model.strategy() == Strategy::DHF, "dhf_step needs a DHF model");
    return train_step(model, batch);
}

StepResult tshf_step(HybridModel &model, const Batch &batch) {
    require(model.strategy() == Strategy::TSHF, "tshf_step needs a TSHF model");
    return train_step(model, batch);
}

// ---------------------------------------------------------------------------
// Inference

std::vector<std::vector<double>> precompute_quantum_features(const HybridModel &model,
                                                             const data::LabeledDataset &data) {
    require(model.has_quantum(), "model has no quantum branch");
    std::vector<std::vector<double>> out(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        check_image(model, data.images[i]);
        out[i] = quantum_features(model, data.images[i]);
    });
    return out;
}

namespace {

std::vector<std::vector<double>> dataset_logits(const HybridModel &model,
                                                const data::LabeledDataset &data,
                                                const std::vector<std::vector<double>> *cache) {
    const std::size_t n = data.size();
    require(cache == nullptr || cache->size() == n, "quantum feature cache size mismatch");
    std::vector<SampleForward> fwd(n);
    parallel_for(n, [&](std::size_t i) {
        fwd[i] = branch_forward(model, data.images[i], cache ? &(*cache)[i] : nullptr, false);
    });
    std::vector<std::vector<double>> z_q(n);
    std::vector<std::vector<double>> z_c(n);
    for (std::size_t i = 0; i < n; ++i) {
        z_q[i] = std::move(fwd[i].h_q);
        z_c[i] = std::move(fwd[i].h_c);
    }
    if (model.uses_batch_norm() && n > 0) {
        auto bq = model.bn_q;
        auto bc = model.bn_c;
        z_q = nn::batchnorm_forward(z_q, bq, false, nullptr);
        z_c = nn::batchnorm_forward(z_c, bc, false, nullptr);
    }
    std::vector<std::vector<double>> logits(n);
    for (std::size_t i = 0; i < n; ++i) {
        logits[i] =
            flat(nn::linear_forward(handler_input(model, fwd[i].qf, z_q[i], z_c[i]), model.handler));
    }
    return logits;
}

std::vector<double> positive_probs(const std::vector<std::vector<double>> &logits) {
    std::vector<double> scores(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        scores[i] = nn::softmax(logits[i])[1];
    }
    return scores;
}

double mean_loss(const std::vector<std::vector<double>> &logits, const std::vector<int> &labels) {
    if (logits.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        sum += nn::cross_entropy(logits[i], labels[i]).loss;
    }
    return sum / static_cast<double>(logits.size());
}

} // namespace

std::vector<double> predict_scores(const HybridModel &model, const data::LabeledDataset &data,
                                   const std::vector<std::vector<double>> *quantum_cache) {
    return positive_probs(dataset_logits(model, data, quantum_cache));
}

metrics::MetricsReport evaluate(const HybridModel &model, const data::LabeledDataset &data,
                                std::uint64_t seed,
                                const std::vector<std::vector<double>> *quantum_cache) {
    const auto scores = predict_scores(model, data, quantum_cache);
    return metrics::make_report(data.labels, scores, 0.5, data::to_string(data.split), seed);
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

/// Shared early-stopping loop. step_epoch runs one epoch of updates and
/// returns the mean training loss; snapshot stores the current best.
struct Tracker {
    const TrainOptions &options;
    bool has_val;
    double best_f1 = -1.0;
    std::size_t best_epoch = 0;
    std::size_t since_best = 0;

    /// True when the current epoch is a new best.
    bool observe(std::size_t epoch, double f1) {
        if (!has_val || epoch == 0 || f1 > best_f1) {
            if (has_val && (epoch == 0 || f1 > best_f1)) {
                best_f1 = f1;
            }
            best_epoch = epoch;
            since_best = 0;
            return true;
        }
        ++since_best;
        return false;
    }
    [[nodiscard]] bool should_stop() const {
        return has_val && options.early_stopping && since_best >= options.patience;
    }
};

} // namespace

TrainResult train_model(HybridModel &model, const data::LabeledDataset &train,
                        const data::LabeledDataset *val, const TrainOptions &options) {
    require(model.strategy() != Strategy::SHF, "SHF models are trained with shf_run");
    require(options.batch_size > 0, "batch_size must be positive");
    require(train.size() > 0, "training split is empty");
    train.validate();

    std::vector<std::vector<double>> train_q;
    std::vector<std::vector<double>> val_q;
    const bool cache_q = model.has_quantum() && model.quanv_state.frozen;
    if (cache_q) {
        train_q = precompute_quantum_features(model, train);
        if (val != nullptr) {
            val_q = precompute_quantum_features(model, *val);
        }
    }
    const auto *tq = cache_q ? &train_q : nullptr;
    const auto *vq = cache_q && val != nullptr ? &val_q : nullptr;

    TrainResult result;
    Tracker tracker{options, val != nullptr && val->size() > 0};
    auto log_epoch = [&](std::size_t epoch, double train_loss) {
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = train_loss;
        if (tracker.has_val) {
            const auto scores = predict_scores(model, *val, vq);
            const auto r = metrics::make_report(val->labels, scores);
            log.val_acc = r.accuracy;
            log.val_f1 = r.f1;
        }
        if (model.strategy() == Strategy::TSHF) {
            log.gamma = model.gamma_value();
        }
        result.history.push_back(log);
        if (tracker.observe(epoch, log.val_f1)) {
            result.best = model;
            result.best_epoch = epoch;
        }
        if (options.on_epoch) {
            options.on_epoch(log, model);
        }
    };

    log_epoch(0, mean_loss(dataset_logits(model, train, tq), train.labels));
    SplitMix64 rng(options.shuffle_seed);
    std::size_t batch_index = 0;
    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        const auto order = permutation(train.size(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t len = std::min(options.batch_size, order.size() - start);
            const auto batch = make_batch(
                train, std::span<const std::size_t>(order).subspan(start, len), tq, batch_index++);
            loss_sum += train_step(model, batch).loss * static_cast<double>(len);
        }
        log_epoch(epoch, loss_sum / static_cast<double>(train.size()));
        if (tracker.should_stop()) {
            break;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Static fusion

nlohmann::json cache_provenance(const HybridModel &model, const nlohmann::json &seeds) {
    return {{"seeds", seeds},
            {"theta", export_theta(model.config().quanv, model.quanv_state)},
            {"checkpoint_hash", model.branch_hash()},
            {"config_hash", model.config_hash()}};
}

FeatureCache extract_features(const HybridModel &model, const data::LabeledDataset &data,
                              const nlohmann::json &seeds) {
    require(model.is_fusion(), "feature extraction needs both branches");
    FeatureCache cache;
    cache.split = data::to_string(data.split);
    cache.dim = model.config().embed_dim;
    cache.labels = data.labels;
    cache.h_q.resize(data.size());
    cache.h_c.resize(data.size());
    parallel_for(data.size(), [&](std::size_t i) {
        auto f = branch_forward(model, data.images[i], nullptr, false);
        cache.h_q[i] = std::move(f.h_q);
        cache.h_c[i] = std::move(f.h_c);
    });
    cache.provenance = cache_provenance(model, seeds);
    cache.validate();
    return cache;
}

TrainResult pretrain_classical(HybridModel &model, const data::LabeledDataset &train,
                               const data::LabeledDataset *val, const TrainOptions &options) {
    require(model.has_classical(), "model has no classical branch");
    auto cfg = model.config();
    cfg.strategy = Strategy::BaselineClassical;
    cfg.batch_norm = false;
    HybridModel base(cfg);
    base.classical = model.classical;
    auto result = train_model(base, train, val, options);
    model.classical = result.best ? result.best->classical : base.classical;
    for (auto &p : model.classical.params()) {
        p.reset_moments();
    }
    return result;
}

std::vector<double> handler_scores(const HybridModel &model, const FeatureCache &cache) {
    std::vector<double> scores(cache.size());
    for (std::size_t i = 0; i < cache.size(); ++i) {
        const auto logits =
            nn::linear_forward(concat_fuse({cache.h_q[i], cache.h_c[i]}), model.handler);
        scores[i] = nn::softmax(logits.data())[1];
    }
    return scores;
}

ShfResult shf_run(HybridModel &model, const FeatureCache &train, const FeatureCache *val,
                  const std::vector<const FeatureCache *> &report_splits,
                  const TrainOptions &options) {
    require(model.strategy() == Strategy::SHF, "shf_run needs an SHF model");
    require(options.batch_size > 0, "batch_size must be positive");
    require(train.size() > 0, "training cache is empty");
    const std::string hash = model.branch_hash();
    auto check = [&](const FeatureCache &c) {
        c.validate();
        if (c.dim != model.config().embed_dim) {
            throw std::runtime_error("feature cache '" + c.split + "' has width " +
                                     std::to_string(c.dim) + ", model expects " +
                                     std::to_string(model.config().embed_dim));
        }
        if (c.provenance.at("checkpoint_hash").get<std::string>() != hash) {
            throw std::runtime_error("feature cache '" + c.split +
                                     "' was extracted with different branch parameters "
                                     "(provenance hash mismatch)");
        }
    };
    check(train);
    if (val != nullptr) {
        check(*val);
    }
    for (const auto *c : report_splits) {
        check(*c);
    }

    auto mean_cache_loss = [&](const FeatureCache &c) {
        double sum = 0.0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            const auto logits =
                nn::linear_forward(concat_fuse({c.h_q[i], c.h_c[i]}), model.handler);
            sum += nn::cross_entropy(logits.data(), c.labels[i]).loss;
        }
        return sum / static_cast<double>(c.size());
    };

    ShfResult result;
    result.best_handler = model.handler;
    Tracker tracker{options, val != nullptr && val->size() > 0};
    auto log_epoch = [&](std::size_t epoch, double train_loss) {
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = train_loss;
        if (tracker.has_val) {
            const auto r = metrics::make_report(val->labels, handler_scores(model, *val));
            log.val_acc = r.accuracy;
            log.val_f1 = r.f1;
        }
        result.history.push_back(log);
        if (tracker.observe(epoch, log.val_f1)) {
            result.best_handler = model.handler;
            result.best_epoch = epoch;
        }
        if (options.on_epoch) {
            options.on_epoch(log, model);
        }
    };

    log_epoch(0, mean_cache_loss(train));
    SplitMix64 rng(options.shuffle_seed);
    std::size_t batch_index = 0;
    for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
        const auto order = permutation(train.size(), rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
            const std::size_t len = std::min(options.batch_size, order.size() - start);
            const double inv = 1.0 / static_cast<double>(len);
            auto grads = nn::LayerGrads::zeros_like(model.handler);
            double batch_sum = 0.0;
            for (std::size_t k = start; k < start + len; ++k) {
                const std::size_t i = order[k];
                const auto input = concat_fuse({train.h_q[i], train.h_c[i]});
                const auto logits = nn::linear_forward(input, model.handler);
                if (!finite(logits.data())) {
                    throw NonFiniteLossError(batch_index, std::nan(""));
                }
                auto ce = nn::cross_entropy(logits.data(), train.labels[i]);
                batch_sum += ce.loss;
                for (auto &g : ce.grad) {
                    g *= inv;
                }
                grads += nn::linear_backward(input, model.handler, ce.grad, false).params;
            }
            if (!std::isfinite(batch_sum)) {
                throw NonFiniteLossError(batch_index, batch_sum);
            }
            nn::adam_step(model.handler, grads, model.config().handler_opt);
            loss_sum += batch_sum;
            ++batch_index;
        }
        log_epoch(epoch, loss_sum / static_cast<double>(train.size()));
        if (tracker.should_stop()) {
            break;
        }
    }

    HybridModel best = model;
    best.handler = result.best_handler;
    for (const auto *c : report_splits) {
        result.reports[c->split] = metrics::make_report(c->labels, handler_scores(best, *c), 0.5,
                                                        c->split, model.config().seed);
    }
    return result;
}

} // namespace qvf
