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
#include <string>
#include <vector>

#include "json.hpp"
#include "qvf/layers.hpp"
#include "qvf/tensor.hpp"

namespace qvf::nn {

enum class BackboneKind { SCNN, MiniResNet, Custom };

const char *to_string(BackboneKind kind);
BackboneKind backbone_kind_from_string(std::string_view name);

struct LayerDesc {
    enum class Op { Conv, Linear, ReLU, MaxPool, Flatten, GlobalAvgPool, Residual };

    Op op = Op::ReLU;
    std::size_t in = 0;     // channels (Conv, Residual) or features (Linear)
    std::size_t out = 0;
    std::size_t kernel = 0; // Conv kernel, MaxPool window
    std::size_t stride = 1;
    std::size_t padding = 0;

    static LayerDesc conv(std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride = 1, std::size_t padding = 0);
    static LayerDesc linear(std::size_t in, std::size_t out);
    static LayerDesc relu() { return {}; }
    static LayerDesc maxpool(std::size_t size);
    static LayerDesc flatten();
    static LayerDesc global_avg_pool();
    /// conv3x3(stride) -> relu -> conv3x3 -> + shortcut -> relu. The shortcut
    /// is a 1x1 strided projection when stride != 1 or in != out.
    static LayerDesc residual(std::size_t in, std::size_t out, std::size_t stride);
};

struct BackboneSpec {
    BackboneKind kind = BackboneKind::Custom;
    std::vector<LayerDesc> layers;
    std::size_t embed_dim = 128;
    std::vector<std::size_t> input_shape{1, 28, 28};

    /// conv(1->16,3,p1) relu pool2 conv(16->32,3,p1) relu pool2 flatten
    /// linear(1568->56) relu linear(56->embed_dim).
    static BackboneSpec scnn(std::size_t embed_dim = 128);
    /// stem conv(1->16,3,p1) relu, residual blocks 16/32/64 (strides 1/2/2),
    /// global average pool, linear(64->embed_dim).
    static BackboneSpec mini_resnet(std::size_t embed_dim = 128);

    /// Shape after each layer; throws when consecutive shapes do not compose
    /// or the last shape is not (embed_dim).
    [[nodiscard]] std::vector<std::vector<std::size_t>> trace_shapes() const;
    [[nodiscard]] std::size_t param_count() const;
};

void to_json(nlohmann::json &j, const BackboneSpec &spec);
BackboneSpec backbone_spec_from_json(const nlohmann::json &j);

/// Per-sample activations recorded by the forward pass.
struct BackboneTape {
    struct Record {
        Tensor input;
        Tensor pre;  // conv1 pre-activation (Residual)
        Tensor mid;  // relu(conv1) (Residual)
        Tensor sum;  // conv2 + shortcut before the final relu (Residual)
        std::vector<std::size_t> argmax;
    };
    std::vector<Record> records;
};

struct BackboneGrads {
    std::vector<LayerGrads> params; // same order as Backbone::params()
    Tensor input;

    BackboneGrads &operator+=(const BackboneGrads &other);
    BackboneGrads &operator*=(double s);
};

/// Classical feature extractor built from a BackboneSpec.
class Backbone {
  public:
    Backbone() = default;
    /// Kaiming-uniform weights from seed, zero biases.
    Backbone(BackboneSpec spec, std::uint64_t seed);
    /// All parameters zero.
    static Backbone zeros(BackboneSpec spec);

    [[nodiscard]] const BackboneSpec &spec() const { return spec_; }
    [[nodiscard]] std::vector<LayerParams> &params() { return params_; }
    [[nodiscard]] const std::vector<LayerParams> &params() const { return params_; }
    [[nodiscard]] std::size_t param_count() const;

    /// Embedding of one (c, h, w) image. tape may be null for inference.
    Tensor forward(const Tensor &image, BackboneTape *tape) const;
    BackboneGrads backward(const BackboneTape &tape, const Tensor &grad_embedding,
                           bool want_input_grad = false) const;
    BackboneGrads zero_grads() const;

  private:
    void build(std::uint64_t seed, bool random);

    BackboneSpec spec_;
    std::vector<LayerParams> params_;
    std::vector<std::size_t> param_offset_; // first params_ index per layer
};

} // namespace qvf::nn
