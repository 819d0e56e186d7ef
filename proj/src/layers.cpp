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

#include "qvf/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace qvf::nn {

namespace {

void require(bool ok, const std::string &message) {
    if (!ok) {
        throw std::invalid_argument(message);
    }
}

} // namespace

void AdamConfig::validate() const {
    require(lr >= 0.0 && std::isfinite(lr), "adam lr must be finite and >= 0");
    require(beta1 > 0.0 && beta1 < 1.0, "adam beta1 must lie in (0, 1)");
    require(beta2 > 0.0 && beta2 < 1.0, "adam beta2 must lie in (0, 1)");
    require(epsilon > 0.0, "adam epsilon must be > 0");
}

LayerParams::LayerParams(std::string layer_name, std::vector<std::size_t> weight_shape,
                         std::size_t bias_len)
    : name(std::move(layer_name)), weights(weight_shape), bias(bias_len == 0
                                                                  ? std::vector<std::size_t>{0}
                                                                  : std::vector<std::size_t>{
                                                                        bias_len}),
      m_weights(weight_shape), v_weights(weight_shape), m_bias(bias.shape()),
      v_bias(bias.shape()) {}

void LayerParams::reset_moments() {
    m_weights = Tensor(weights.shape());
    v_weights = Tensor(weights.shape());
    m_bias = Tensor(bias.shape());
    v_bias = Tensor(bias.shape());
    step = 0;
}

LayerGrads LayerGrads::zeros_like(const LayerParams &params) {
    auto like = [](const Tensor &t) { return t.empty() ? Tensor() : Tensor(t.shape()); };
    return {like(params.weights), like(params.bias)};
}

LayerGrads &LayerGrads::operator+=(const LayerGrads &other) {
    weights += other.weights;
    bias += other.bias;
    return *this;
}

LayerGrads &LayerGrads::operator*=(double s) {
    weights *= s;
    bias *= s;
    return *this;
}

void adam_apply(std::span<double> values, std::span<const double> grads, std::span<double> m,
                std::span<double> v, std::uint64_t t, const AdamConfig &config) {
    require(values.size() == grads.size() && m.size() == values.size() &&
                v.size() == values.size(),
            "adam: parameter, gradient and moment sizes differ");
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grads[i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        values[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
}

void adam_step(LayerParams &params, const LayerGrads &grads, const AdamConfig &config) {
    require(grads.weights.size() == params.weights.size() &&
                grads.bias.size() == params.bias.size(),
            "adam: gradient shape does not match layer '" + params.name + "'");
    params.step += 1;
    adam_apply(params.weights.data(), grads.weights.data(), params.m_weights.data(),
               params.v_weights.data(), params.step, config);
    adam_apply(params.bias.data(), grads.bias.data(), params.m_bias.data(), params.v_bias.data(),
               params.step, config);
}

void kaiming_uniform(LayerParams &params, std::size_t fan_in, SplitMix64 &rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (auto &w : params.weights.data()) {
        w = rng.uniform(-bound, bound);
    }
    params.bias.fill(0.0);
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
    std::size_t in_c, in_h, in_w, out_c, k, out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor &input, const LayerParams &params, std::size_t stride,
                           std::size_t padding) {
    require(input.rank() == 3, "conv2d expects a (c, h, w) input, got " +
                                   shape_string(input.shape()));
    require(params.weights.rank() == 4, "conv2d weights must be rank 4");
    require(stride >= 1, "conv2d stride must be >= 1");
    const std::size_t in_c = input.dim(0);
    const std::size_t in_h = input.dim(1);
    const std::size_t in_w = input.dim(2);
    const std::size_t out_c = params.weights.dim(0);
    const std::size_t k = params.weights.dim(2);
    require(params.weights.dim(1) == in_c,
            "conv2d '" + params.name + "' expects " + std::to_string(params.weights.dim(1)) +
                " input channels, got " + std::to_string(in_c));
    require(params.weights.dim(3) == k, "conv2d kernels must be square");
    require(params.bias.size() == out_c, "conv2d bias length must equal output channels");
    require(in_h + 2 * padding >= k && in_w + 2 * padding >= k,
            "conv2d '" + params.name + "' output would be empty for input " +
                shape_string(input.shape()));
    return {in_c, in_h, in_w, out_c, k, (in_h + 2 * padding - k) / stride + 1,
            (in_w + 2 * padding - k) / stride + 1};
}

// Range of output columns whose input column ox*stride + kx - pad is inside [0, in_w).
std::pair<std::size_t, std::size_t> valid_range(std::size_t offset, std::size_t padding,
                                                std::size_t stride, std::size_t in_extent,
                                                std::size_t out_extent) {
    // need ox*stride + offset >= padding and ox*stride + offset - padding < in_extent
    std::size_t lo = 0;
    if (offset < padding) {
        lo = (padding - offset + stride - 1) / stride;
    }
    std::size_t hi = 0;
    if (in_extent + padding > offset) {
        hi = (in_extent + padding - offset - 1) / stride + 1;
    }
    return {std::min(lo, out_extent), std::min(hi, out_extent)};
}

} // namespace

Tensor conv2d_forward(const Tensor &input, const LayerParams &params, std::size_t stride,
                      std::size_t padding) {
    const auto g = conv_geometry(input, params, stride, padding);
    Tensor out({g.out_c, g.out_h, g.out_w});
    const double *in = input.data().data();
    const double *w = params.weights.data().data();
    double *o = out.data().data();
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        std::fill(o + oc * plane, o + (oc + 1) * plane, params.bias[oc]);
        for (std::size_t ic = 0; ic < g.in_c; ++ic) {
            const double *in_plane = in + ic * g.in_h * g.in_w;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                const auto [oy_lo, oy_hi] = valid_range(ky, padding, stride, g.in_h, g.out_h);
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const double wv = w[((oc * g.in_c + ic) * g.k + ky) * g.k + kx];
                    const auto [ox_lo, ox_hi] =
                        valid_range(kx, padding, stride, g.in_w, g.out_w);
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const double *row = in_plane + (oy * stride + ky - padding) * g.in_w;
                        double *orow = o + oc * plane + oy * g.out_w;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                            orow[ox] += wv * row[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
    return out;
}

ConvBackward conv2d_backward(const Tensor &input, const LayerParams &params, std::size_t stride,
                             std::size_t padding, const Tensor &grad_output,
                             bool want_input_grad) {
    const auto g = conv_geometry(input, params, stride, padding);
    require(grad_output.shape() == std::vector<std::size_t>{g.out_c, g.out_h, g.out_w},
            "conv2d '" + params.name + "' upstream gradient has shape " +
                shape_string(grad_output.shape()));
    ConvBackward result{want_input_grad ? Tensor(input.shape()) : Tensor(),
                        LayerGrads::zeros_like(params)};
    const double *in = input.data().data();
    const double *w = params.weights.data().data();
    const double *go = grad_output.data().data();
    double *gw = result.params.weights.data().data();
    double *gi = want_input_grad ? result.input.data().data() : nullptr;
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        double bsum = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            bsum += go[oc * plane + p];
        }
        result.params.bias[oc] = bsum;
        for (std::size_t ic = 0; ic < g.in_c; ++ic) {
            const double *in_plane = in + ic * g.in_h * g.in_w;
            double *gi_plane = gi != nullptr ? gi + ic * g.in_h * g.in_w : nullptr;
            for (std::size_t ky = 0; ky < g.k; ++ky) {
                const auto [oy_lo, oy_hi] = valid_range(ky, padding, stride, g.in_h, g.out_h);
                for (std::size_t kx = 0; kx < g.k; ++kx) {
                    const std::size_t widx = ((oc * g.in_c + ic) * g.k + ky) * g.k + kx;
                    const double wv = w[widx];
                    const auto [ox_lo, ox_hi] =
                        valid_range(kx, padding, stride, g.in_w, g.out_w);
                    double acc = 0.0;
                    for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
                        const std::size_t iy = oy * stride + ky - padding;
                        const double *row = in_plane + iy * g.in_w;
                        const double *grow = go + oc * plane + oy * g.out_w;
                        for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                            acc += grow[ox] * row[ox * stride + kx - padding];
                        }
                        if (gi_plane != nullptr) {
                            double *girow = gi_plane + iy * g.in_w;
                            for (std::size_t ox = ox_lo; ox < ox_hi; ++ox) {
                                girow[ox * stride + kx - padding] += wv * grow[ox];
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Linear

Tensor linear_forward(std::span<const double> input, const LayerParams &params) {
    require(params.weights.rank() == 2, "linear weights must be rank 2");
    const std::size_t out_dim = params.weights.dim(0);
    const std::size_t in_dim = params.weights.dim(1);
    require(input.size() == in_dim, "linear '" + params.name + "' expects " +
                                        std::to_string(in_dim) + " inputs, got " +
                                        std::to_string(input.size()));
    Tensor out({out_dim});
    const double *w = params.weights.data().data();
    for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = params.bias[o];
        const double *row = w + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) {
            acc += row[i] * input[i];
        }
        out[o] = acc;
    }
    return out;
}

LinearBackward linear_backward(std::span<const double> input, const LayerParams &params,
                               std::span<const double> grad_output, bool want_input_grad) {
    const std::size_t out_dim = params.weights.dim(0);
    const std::size_t in_dim = params.weights.dim(1);
    require(input.size() == in_dim && grad_output.size() == out_dim,
            "linear '" + params.name + "' backward shape mismatch");
    LinearBackward result{want_input_grad ? std::vector<double>(in_dim, 0.0)
                                          : std::vector<double>{},
                          LayerGrads::zeros_like(params)};
    const double *w = params.weights.data().data();
    double *gw = result.params.weights.data().data();
    for (std::size_t o = 0; o < out_dim; ++o) {
        const double g = grad_output[o];
        result.params.bias[o] = g;
        double *grow = gw + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) {
            grow[i] = g * input[i];
        }
        if (want_input_grad) {
            const double *row = w + o * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) {
                result.input[i] += row[i] * g;
            }
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Activations and pooling

Tensor relu_forward(const Tensor &input) {
    Tensor out = input;
    for (auto &v : out.data()) {
        v = v > 0.0 ? v : 0.0;
    }
    return out;
}

Tensor relu_backward(const Tensor &input, const Tensor &grad_output) {
    require(input.size() == grad_output.size(), "relu backward shape mismatch");
    Tensor out(grad_output.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        out[i] = input[i] > 0.0 ? grad_output[i] : 0.0;
    }
    return out;
}

MaxPoolResult maxpool2d_forward(const Tensor &input, std::size_t size) {
    require(input.rank() == 3, "maxpool2d expects a (c, h, w) input");
    require(size >= 1, "maxpool size must be >= 1");
    const std::size_t c = input.dim(0);
    const std::size_t h = input.dim(1);
    const std::size_t w = input.dim(2);
    require(h >= size && w >= size, "maxpool window larger than input");
    const std::size_t oh = h / size;
    const std::size_t ow = w / size;
    MaxPoolResult result{Tensor({c, oh, ow}), std::vector<std::size_t>(c * oh * ow)};
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = (ch * h + oy * size) * w + ox * size;
                for (std::size_t dy = 0; dy < size; ++dy) {
                    for (std::size_t dx = 0; dx < size; ++dx) {
                        const std::size_t idx = (ch * h + oy * size + dy) * w + ox * size + dx;
                        if (input[idx] > best) {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (ch * oh + oy) * ow + ox;
                result.output[o] = best;
                result.argmax[o] = best_idx;
            }
        }
    }
    return result;
}

Tensor maxpool2d_backward(const std::vector<std::size_t> &input_shape,
                          const std::vector<std::size_t> &argmax, const Tensor &grad_output) {
    require(argmax.size() == grad_output.size(), "maxpool backward shape mismatch");
    Tensor out(input_shape);
    for (std::size_t o = 0; o < argmax.size(); ++o) {
        out[argmax[o]] += grad_output[o];
    }
    return out;
}

Tensor global_avg_pool_forward(const Tensor &input) {
    require(input.rank() == 3, "global average pool expects a (c, h, w) input");
    const std::size_t c = input.dim(0);
    const std::size_t plane = input.dim(1) * input.dim(2);
    Tensor out({c});
    for (std::size_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) {
            acc += input[ch * plane + p];
        }
        out[ch] = acc / static_cast<double>(plane);
    }
    return out;
}

Tensor global_avg_pool_backward(const std::vector<std::size_t> &input_shape,
                                const Tensor &grad_output) {
    Tensor out(input_shape);
    const std::size_t c = input_shape[0];
    const std::size_t plane = input_shape[1] * input_shape[2];
    require(grad_output.size() == c, "global average pool backward shape mismatch");
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double g = grad_output[ch] / static_cast<double>(plane);
        for (std::size_t p = 0; p < plane; ++p) {
            out[ch * plane + p] = g;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss

std::vector<double> softmax(std::span<const double> logits) {
    require(!logits.empty(), "softmax of an empty vector");
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        total += p[i];
    }
    for (auto &v : p) {
        v /= total;
    }
    return p;
}

CrossEntropy cross_entropy(std::span<const double> logits, int label) {
    for (const double l : logits) {
        require(std::isfinite(l), "cross_entropy: non-finite logit");
    }
    require(label >= 0 && static_cast<std::size_t>(label) < logits.size(),
            "cross_entropy: label out of range");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double total = 0.0;
    for (const double l : logits) {
        total += std::exp(l - mx);
    }
    const double log_z = mx + std::log(total);
    CrossEntropy result;
    result.loss = log_z - logits[static_cast<std::size_t>(label)];
    result.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        result.grad[i] = std::exp(logits[i] - log_z);
    }
    result.grad[static_cast<std::size_t>(label)] -= 1.0;
    return result;
}

// ---------------------------------------------------------------------------
// Batch normalization

BatchNormState::BatchNormState(std::string name, std::size_t features)
    : params(std::move(name), {features}, features), running_mean(features, 0.0),
      running_var(features, 1.0) {
    params.weights.fill(1.0);
}

std::vector<std::vector<double>> batchnorm_forward(const std::vector<std::vector<double>> &batch,
                                                   BatchNormState &state, bool training,
                                                   BatchNormCache *cache) {
    const std::size_t d = state.running_mean.size();
    const std::size_t b = batch.size();
    require(b > 0, "batchnorm over an empty batch");
    for (const auto &row : batch) {
        require(row.size() == d, "batchnorm feature width mismatch");
    }
    std::vector<double> mean(d, 0.0);
    std::vector<double> var(d, 0.0);
    if (training) {
        for (const auto &row : batch) {
            for (std::size_t f = 0; f < d; ++f) {
                mean[f] += row[f];
            }
        }
        for (auto &m : mean) {
            m /= static_cast<double>(b);
        }
        for (const auto &row : batch) {
            for (std::size_t f = 0; f < d; ++f) {
                var[f] += (row[f] - mean[f]) * (row[f] - mean[f]);
            }
        }
        for (std::size_t f = 0; f < d; ++f) {
            const double biased = var[f] / static_cast<double>(b);
            const double unbiased =
                b > 1 ? var[f] / static_cast<double>(b - 1) : state.running_var[f];
            state.running_mean[f] =
                (1.0 - state.momentum) * state.running_mean[f] + state.momentum * mean[f];
            state.running_var[f] =
                (1.0 - state.momentum) * state.running_var[f] + state.momentum * unbiased;
            var[f] = biased;
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }
    std::vector<double> inv_std(d);
    for (std::size_t f = 0; f < d; ++f) {
        inv_std[f] = 1.0 / std::sqrt(var[f] + state.epsilon);
    }
    std::vector<std::vector<double>> out(b, std::vector<double>(d));
    if (cache != nullptr) {
        cache->normalized.assign(b, std::vector<double>(d));
        cache->inv_std = inv_std;
    }
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t f = 0; f < d; ++f) {
            const double xhat = (batch[i][f] - mean[f]) * inv_std[f];
            if (cache != nullptr) {
                cache->normalized[i][f] = xhat;
            }
            out[i][f] = state.params.weights[f] * xhat + state.params.bias[f];
        }
    }
    return out;
}

BatchNormBackward batchnorm_backward(const BatchNormState &state, const BatchNormCache &cache,
                                     const std::vector<std::vector<double>> &grad_output) {
    const std::size_t b = grad_output.size();
    const std::size_t d = state.running_mean.size();
    require(cache.normalized.size() == b, "batchnorm backward batch mismatch");
    BatchNormBackward result{std::vector<std::vector<double>>(b, std::vector<double>(d)),
                             LayerGrads::zeros_like(state.params)};
    for (std::size_t f = 0; f < d; ++f) {
        double sum_g = 0.0;
        double sum_gx = 0.0;
        for (std::size_t i = 0; i < b; ++i) {
            sum_g += grad_output[i][f];
            sum_gx += grad_output[i][f] * cache.normalized[i][f];
        }
        result.params.bias[f] = sum_g;
        result.params.weights[f] = sum_gx;
        const double scale =
            state.params.weights[f] * cache.inv_std[f] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
            result.input[i][f] = scale * (static_cast<double>(b) * grad_output[i][f] - sum_g -
                                          cache.normalized[i][f] * sum_gx);
        }
    }
    return result;
}

} // namespace qvf::nn
