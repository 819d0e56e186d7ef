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
#include <span>
#include <string>
#include <vector>

#include "qvf/rng.hpp"
#include "qvf/tensor.hpp"

namespace qvf::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
};

/// Weights, bias, and the Adam moments for both. One step counter per layer.
struct LayerParams {
    std::string name;
    Tensor weights;
    Tensor bias;
    Tensor m_weights;
    Tensor v_weights;
    Tensor m_bias;
    Tensor v_bias;
    std::uint64_t step = 0;

    LayerParams() = default;
    LayerParams(std::string name, std::vector<std::size_t> weight_shape, std::size_t bias_len);

    [[nodiscard]] std::size_t count() const { return weights.size() + bias.size(); }
    /// Zeroes the optimizer state, keeping values.
    void reset_moments();
};

struct LayerGrads {
    Tensor weights;
    Tensor bias;

    static LayerGrads zeros_like(const LayerParams &params);
    LayerGrads &operator+=(const LayerGrads &other);
    LayerGrads &operator*=(double s);
};

/// Bias-corrected Adam update on one flat parameter block. t is the step
/// number after incrementing (first step is t = 1).
void adam_apply(std::span<double> values, std::span<const double> grads, std::span<double> m,
                std::span<double> v, std::uint64_t t, const AdamConfig &config);

/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2; w <- w - lr mhat / (sqrt(vhat) + eps).
void adam_step(LayerParams &params, const LayerGrads &grads, const AdamConfig &config);

/// Kaiming-uniform (gain sqrt(2)) on fan_in, zero bias.
void kaiming_uniform(LayerParams &params, std::size_t fan_in, SplitMix64 &rng);

// Convolution uses the cross-correlation convention. Weights are
// (out, in, k, k), bias is (out), input and output are (c, h, w).
Tensor conv2d_forward(const Tensor &input, const LayerParams &params, std::size_t stride,
                      std::size_t padding);

struct ConvBackward {
    Tensor input;
    LayerGrads params;
};

ConvBackward conv2d_backward(const Tensor &input, const LayerParams &params, std::size_t stride,
                             std::size_t padding, const Tensor &grad_output,
                             bool want_input_grad = true);

// Linear layer: weights (out, in), bias (out). The input is flattened.
Tensor linear_forward(std::span<const double> input, const LayerParams &params);

struct LinearBackward {
    std::vector<double> input;
    LayerGrads params;
};

LinearBackward linear_backward(std::span<const double> input, const LayerParams &params,
                               std::span<const double> grad_output, bool want_input_grad = true);

Tensor relu_forward(const Tensor &input);
Tensor relu_backward(const Tensor &input, const Tensor &grad_output);

struct MaxPoolResult {
    Tensor output;
    std::vector<std::size_t> argmax; // flat input index per output cell
};

/// Non-overlapping size x size windows; ties resolve to the first cell in
/// row-major scan order.
MaxPoolResult maxpool2d_forward(const Tensor &input, std::size_t size);
Tensor maxpool2d_backward(const std::vector<std::size_t> &input_shape,
                          const std::vector<std::size_t> &argmax, const Tensor &grad_output);

Tensor global_avg_pool_forward(const Tensor &input);
Tensor global_avg_pool_backward(const std::vector<std::size_t> &input_shape,
                                const Tensor &grad_output);

std::vector<double> softmax(std::span<const double> logits);

struct CrossEntropy {
    double loss = 0.0;
    std::vector<double> grad; // softmax - onehot
};

/// -log softmax(logits)[label], max-subtracted.
CrossEntropy cross_entropy(std::span<const double> logits, int label);

/// Batch normalization over a batch of feature vectors (one statistic per
/// feature). weights = scale, bias = shift.
struct BatchNormState {
    LayerParams params;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double epsilon = 1e-5;

    BatchNormState() = default;
    BatchNormState(std::string name, std::size_t features);
};

struct BatchNormCache {
    std::vector<std::vector<double>> normalized;
    std::vector<double> inv_std;
};

std::vector<std::vector<double>> batchnorm_forward(const std::vector<std::vector<double>> &batch,
                                                   BatchNormState &state, bool training,
                                                   BatchNormCache *cache);

struct BatchNormBackward {
    std::vector<std::vector<double>> input;
    LayerGrads params;
};

BatchNormBackward batchnorm_backward(const BatchNormState &state, const BatchNormCache &cache,
                                     const std::vector<std::vector<double>> &grad_output);

} // namespace qvf::nn
