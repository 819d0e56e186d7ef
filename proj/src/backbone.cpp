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
#include "qvf/backbone.hpp"

#include <stdexcept>

namespace qvf::nn {

namespace {

bool needs_projection(const LayerDesc &d) { return d.stride != 1 || d.in != d.out; }

const char *op_name(LayerDesc::Op op) {
    switch (op) {
    case LayerDesc::Op::Conv:
        return "conv";
    case LayerDesc::Op::Linear:
        return "linear";
    case LayerDesc::Op::ReLU:
        return "relu";
    case LayerDesc::Op::MaxPool:
        return "maxpool";
    case LayerDesc::Op::Flatten:
        return "flatten";
    case LayerDesc::Op::GlobalAvgPool:
        return "gap";
    case LayerDesc::Op::Residual:
        return "residual";
    }
    return "?";
}

LayerDesc::Op op_from_name(const std::string &name) {
    for (auto op : {LayerDesc::Op::Conv, LayerDesc::Op::Linear, LayerDesc::Op::ReLU,
                    LayerDesc::Op::MaxPool, LayerDesc::Op::Flatten,
                    LayerDesc::Op::GlobalAvgPool, LayerDesc::Op::Residual}) {
        if (name == op_name(op)) {
            return op;
        }
    }
    throw std::invalid_argument("unknown backbone layer op '" + name + "'");
}

} // namespace

const char *to_string(BackboneKind kind) {
    switch (kind) {
    case BackboneKind::SCNN:
        return "SCNN";
    case BackboneKind::MiniResNet:
        return "MiniResNet";
    case BackboneKind::Custom:
        return "Custom";
    }
    return "?";
}

BackboneKind backbone_kind_from_string(std::string_view name) {
    if (iequals(name, "SCNN")) {
        return BackboneKind::SCNN;
    }
    if (iequals(name, "MiniResNet") || iequals(name, "ResNet")) {
        return BackboneKind::MiniResNet;
    }
    if (iequals(name, "Custom")) {
        return BackboneKind::Custom;
    }
    throw std::invalid_argument("unknown backbone kind '" + std::string(name) + "'");
}

LayerDesc LayerDesc::conv(std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride, std::size_t padding) {
    return {Op::Conv, in, out, kernel, stride, padding};
}
LayerDesc LayerDesc::linear(std::size_t in, std::size_t out) { return {Op::Linear, in, out}; }
LayerDesc LayerDesc::maxpool(std::size_t size) { return {Op::MaxPool, 0, 0, size}; }
LayerDesc LayerDesc::flatten() { return {Op::Flatten}; }
LayerDesc LayerDesc::global_avg_pool() { return {Op::GlobalAvgPool}; }
LayerDesc LayerDesc::residual(std::size_t in, std::size_t out, std::size_t stride) {
    return {Op::Residual, in, out, 3, stride, 1};
}

BackboneSpec BackboneSpec::scnn(std::size_t embed_dim) {
    BackboneSpec spec;
    spec.kind = BackboneKind::SCNN;
    spec.embed_dim = embed_dim;
    spec.layers = {LayerDesc::conv(1, 16, 3, 1, 1), LayerDesc::relu(),
                   LayerDesc::maxpool(2),           LayerDesc::conv(16, 32, 3, 1, 1),
                   LayerDesc::relu(),               LayerDesc::maxpool(2),
                   LayerDesc::flatten(),            LayerDesc::linear(32 * 7 * 7, 56),
                   LayerDesc::relu(),               LayerDesc::linear(56, embed_dim)};
    return spec;
}

BackboneSpec BackboneSpec::mini_resnet(std::size_t embed_dim) {
    BackboneSpec spec;
    spec.kind = BackboneKind::MiniResNet;
    spec.embed_dim = embed_dim;
    spec.layers = {LayerDesc::conv(1, 16, 3, 1, 1), LayerDesc::relu(),
                   LayerDesc::residual(16, 16, 1),  LayerDesc::residual(16, 32, 2),
                   LayerDesc::residual(32, 64, 2),  LayerDesc::global_avg_pool(),
                   LayerDesc::linear(64, embed_dim)};
    return spec;
}

std::vector<std::vector<std::size_t>> BackboneSpec::trace_shapes() const {
    std::vector<std::vector<std::size_t>> shapes;
    std::vector<std::size_t> shape = input_shape;
    auto fail = [&](std::size_t i, const std::string &why) {
        throw std::invalid_argument("backbone layer " + std::to_string(i) + " (" +
                                    op_name(layers[i].op) + "): " + why + ", input shape " +
                                    shape_string(shape));
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto &d = layers[i];
        switch (d.op) {
        case LayerDesc::Op::Conv:
        case LayerDesc::Op::Residual: {
            const std::size_t k = d.op == LayerDesc::Op::Conv ? d.kernel : 3;
            const std::size_t pad = d.op == LayerDesc::Op::Conv ? d.padding : 1;
            if (shape.size() != 3 || shape[0] != d.in) {
                fail(i, "expects " + std::to_string(d.in) + " channels");
            }
            if (k == 0 || d.stride == 0 || shape[1] + 2 * pad < k || shape[2] + 2 * pad < k) {
                fail(i, "empty output");
            }
            shape = {d.out, (shape[1] + 2 * pad - k) / d.stride + 1,
                     (shape[2] + 2 * pad - k) / d.stride + 1};
            break;
        }
        case LayerDesc::Op::Linear:
            if (shape.size() != 1 || shape[0] != d.in) {
                fail(i, "expects a flat input of " + std::to_string(d.in));
            }
            shape = {d.out};
            break;
        case LayerDesc::Op::ReLU:
            break;
        case LayerDesc::Op::MaxPool:
            if (shape.size() != 3 || d.kernel == 0 || shape[1] < d.kernel ||
                shape[2] < d.kernel) {
                fail(i, "window does not fit");
            }
            shape = {shape[0], shape[1] / d.kernel, shape[2] / d.kernel};
            break;
        case LayerDesc::Op::Flatten:
            shape = {Tensor::numel_of(shape)};
            break;
        case LayerDesc::Op::GlobalAvgPool:
            if (shape.size() != 3) {
                fail(i, "expects a (c, h, w) input");
            }
            shape = {shape[0]};
            break;
        }
        shapes.push_back(shape);
    }
    if (shape != std::vector<std::size_t>{embed_dim}) {
        throw std::invalid_argument("backbone output " + shape_string(shape) +
                                    " does not match embed_dim " + std::to_string(embed_dim));
    }
    return shapes;
}

std::size_t BackboneSpec::param_count() const {
    (void)trace_shapes();
    std::size_t total = 0;
    for (const auto &d : layers) {
        switch (d.op) {
        case LayerDesc::Op::Conv:
            total += d.out * d.in * d.kernel * d.kernel + d.out;
            break;
        case LayerDesc::Op::Linear:
            total += d.out * d.in + d.out;
            break;
        case LayerDesc::Op::Residual:
            total += d.out * d.in * 9 + d.out + d.out * d.out * 9 + d.out;
            if (needs_projection(d)) {
                total += d.out * d.in + d.out;
            }
            break;
        default:
            break;
        }
    }
    return total;
}

void to_json(nlohmann::json &j, const BackboneSpec &spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto &d : spec.layers) {
        layers.push_back({{"op", op_name(d.op)},
                          {"in", d.in},
                          {"out", d.out},
                          {"kernel", d.kernel},
                          {"stride", d.stride},
                          {"padding", d.padding}});
    }
    j = nlohmann::json{{"kind", to_string(spec.kind)},
                       {"embed_dim", spec.embed_dim},
                       {"input_shape", spec.input_shape},
                       {"layers", std::move(layers)}};
}

BackboneSpec backbone_spec_from_json(const nlohmann::json &j) {
    const auto kind = backbone_kind_from_string(j.value("kind", std::string("SCNN")));
    const auto embed = j.value("embed_dim", std::size_t{128});
    BackboneSpec spec;
    if (kind == BackboneKind::SCNN) {
        spec = BackboneSpec::scnn(embed);
    } else if (kind == BackboneKind::MiniResNet) {
        spec = BackboneSpec::mini_resnet(embed);
    } else {
        spec.kind = kind;
        spec.embed_dim = embed;
        for (const auto &l : j.at("layers")) {
            LayerDesc d;
            d.op = op_from_name(l.at("op").get<std::string>());
            d.in = l.value("in", std::size_t{0});
            d.out = l.value("out", std::size_t{0});
            d.kernel = l.value("kernel", std::size_t{0});
            d.stride = l.value("stride", std::size_t{1});
            d.padding = l.value("padding", std::size_t{0});
            spec.layers.push_back(d);
        }
    }
    if (j.contains("input_shape")) {
        spec.input_shape = j.at("input_shape").get<std::vector<std::size_t>>();
    }
    (void)spec.trace_shapes();
    return spec;
}

// ---------------------------------------------------------------------------
// Backbone

BackboneGrads &BackboneGrads::operator+=(const BackboneGrads &other) {
    if (params.size() != other.params.size()) {
        throw std::invalid_argument("backbone gradient layouts differ");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        params[i] += other.params[i];
    }
    if (!other.input.empty()) {
        if (input.empty()) {
            input = other.input;
        } else {
            input += other.input;
        }
    }
    return *this;
}

BackboneGrads &BackboneGrads::operator*=(double s) {
    for (auto &p : params) {
        p *= s;
    }
    input *= s;
    return *this;
}

Backbone::Backbone(BackboneSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    build(seed, true);
}

Backbone Backbone::zeros(BackboneSpec spec) {
    Backbone b;
    b.spec_ = std::move(spec);
    b.build(0, false);
    return b;
}

void Backbone::build(std::uint64_t seed, bool random) {
    (void)spec_.trace_shapes();
    SplitMix64 rng(seed);
    params_.clear();
    param_offset_.clear();
    auto add = [&](const std::string &name, std::vector<std::size_t> shape, std::size_t bias,
                   std::size_t fan_in) {
        LayerParams p(name, std::move(shape), bias);
        if (random) {
            kaiming_uniform(p, fan_in, rng);
        }
        params_.push_back(std::move(p));
    };
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto &d = spec_.layers[i];
        param_offset_.push_back(params_.size());
        const std::string base = "layer" + std::to_string(i);
        switch (d.op) {
        case LayerDesc::Op::Conv:
            add(base + ".conv", {d.out, d.in, d.kernel, d.kernel}, d.out,
                d.in * d.kernel * d.kernel);
            break;
        case LayerDesc::Op::Linear:
            add(base + ".linear", {d.out, d.in}, d.out, d.in);
            break;
        case LayerDesc::Op::Residual:
            add(base + ".conv1", {d.out, d.in, 3, 3}, d.out, d.in * 9);
            add(base + ".conv2", {d.out, d.out, 3, 3}, d.out, d.out * 9);
            if (needs_projection(d)) {
                add(base + ".proj", {d.out, d.in, 1, 1}, d.out, d.in);
            }
            break;
        default:
            break;
        }
    }
}

std::size_t Backbone::param_count() const {
    std::size_t total = 0;
    for (const auto &p : params_) {
        total += p.count();
    }
    return total;
}

Tensor Backbone::forward(const Tensor &image, BackboneTape *tape) const {
    if (image.shape() != spec_.input_shape) {
        throw std::invalid_argument("backbone expects input " + shape_string(spec_.input_shape) +
                                    ", got " + shape_string(image.shape()));
    }
    if (tape != nullptr) {
        tape->records.assign(spec_.layers.size(), {});
    }
    Tensor x = image;
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
        const auto &d = spec_.layers[i];
        const std::size_t off = param_offset_[i];
        BackboneTape::Record *rec = tape != nullptr ? &tape->records[i] : nullptr;
        if (rec != nullptr) {
            rec->input = x;
        }
        switch (d.op) {
        case LayerDesc::Op::Conv:
            x = conv2d_forward(x, params_[off], d.stride, d.padding);
            break;
        case LayerDesc::Op::Linear:
            x = linear_forward(x.data(), params_[off]);
            break;
        case LayerDesc::Op::ReLU:
            x = relu_forward(x);
            break;
        case LayerDesc::Op::MaxPool: {
            auto pooled = maxpool2d_forward(x, d.kernel);
            if (rec != nullptr) {
                rec->argmax = std::move(pooled.argmax);
            }
            x = std::move(pooled.output);
            break;
        }
        case LayerDesc::Op::Flatten:
            x = x.reshaped({x.size()});
            break;
        case LayerDesc::Op::GlobalAvgPool:
            x = global_avg_pool_forward(x);
            break;
        case LayerDesc::Op::Residual: {
            Tensor pre = conv2d_forward(x, params_[off], d.stride, 1);
            Tensor mid = relu_forward(pre);
            Tensor sum = conv2d_forward(mid, params_[off + 1], 1, 1);
            if (needs_projection(d)) {
                sum += conv2d_forward(x, params_[off + 2], d.stride, 0);
            } else {
                sum += x;
            }
            x = relu_forward(sum);
            if (rec != nullptr) {
                rec->pre = std::move(pre);
                rec->mid = std::move(mid);
                rec->sum = std::move(sum);
            }
            break;
        }
        }
    }
    return x;
}

BackboneGrads Backbone::zero_grads() const {
    BackboneGrads g;
    for (const auto &p : params_) {
        g.params.push_back(LayerGrads::zeros_like(p));
    }
    return g;
}

BackboneGrads Backbone::backward(const BackboneTape &tape, const Tensor &grad_embedding,
                                 bool want_input_grad) const {
    if (tape.records.size() != spec_.layers.size()) {
        throw std::invalid_argument("backbone tape does not match the network");
    }
    if (grad_embedding.size() != spec_.embed_dim) {
        throw std::invalid_argument("backbone upstream gradient has " +
                                    std::to_string(grad_embedding.size()) + " entries, expected " +
                                    std::to_string(spec_.embed_dim));
    }
    BackboneGrads grads = zero_grads();
    Tensor g = grad_embedding;
    for (std::size_t ii = spec_.layers.size(); ii-- > 0;) {
        const auto &d = spec_.layers[ii];
        const auto &rec = tape.records[ii];
        const std::size_t off = param_offset_[ii];
        const bool need_input = ii > 0 || want_input_grad;
        switch (d.op) {
        case LayerDesc::Op::Conv: {
            auto r = conv2d_backward(rec.input, params_[off], d.stride, d.padding, g, need_input);
            grads.params[off] = std::move(r.params);
            g = std::move(r.input);
            break;
        }
        case LayerDesc::Op::Linear: {
            auto r = linear_backward(rec.input.data(), params_[off], g.data(), need_input);
            grads.params[off] = std::move(r.params);
            g = need_input ? Tensor(rec.input.shape(), std::move(r.input)) : Tensor();
            break;
        }
        case LayerDesc::Op::ReLU:
            g = relu_backward(rec.input, g);
            break;
        case LayerDesc::Op::MaxPool:
            g = maxpool2d_backward(rec.input.shape(), rec.argmax, g);
            break;
        case LayerDesc::Op::Flatten:
            g = g.reshaped(rec.input.shape());
            break;
        case LayerDesc::Op::GlobalAvgPool:
            g = global_avg_pool_backward(rec.input.shape(), g);
            break;
        case LayerDesc::Op::Residual: {
            const Tensor g_sum = relu_backward(rec.sum, g);
            auto r2 = conv2d_backward(rec.mid, params_[off + 1], 1, 1, g_sum, true);
            const Tensor g_pre = relu_backward(rec.pre, r2.input);
            auto r1 = conv2d_backward(rec.input, params_[off], d.stride, 1, g_pre, need_input);
            grads.params[off] = std::move(r1.params);
            grads.params[off + 1] = std::move(r2.params);
            Tensor g_in = std::move(r1.input);
            if (needs_projection(d)) {
                auto rp = conv2d_backward(rec.input, params_[off + 2], d.stride, 0, g_sum,
                                          need_input);
                grads.params[off + 2] = std::move(rp.params);
                if (need_input) {
                    g_in += rp.input;
                }
            } else if (need_input) {
                g_in += g_sum;
            }
            g = std::move(g_in);
            break;
        }
        }
        if (!need_input) {
            break;
        }
    }
    if (want_input_grad) {
        grads.input = std::move(g);
    }
    return grads;
}

} // namespace qvf::nn
