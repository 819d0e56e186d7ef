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
#include "qvf/quanv.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "qvf/rng.hpp"

namespace qvf {

namespace {

void check_image(const FeatureTensor &image, const QuanvConfig &config) {
    if (image.rank() != 3) {
        throw std::invalid_argument("quanv expects a (c, h, w) image, got shape " +
                                    shape_string(image.shape()));
    }
    if (image.dim(0) != config.in_channels) {
        throw std::invalid_argument("quanv expects " + std::to_string(config.in_channels) +
                                    " channels, got " + std::to_string(image.dim(0)));
    }
    if (!image.all_finite()) {
        throw std::invalid_argument("quanv input contains non-finite pixels");
    }
}

std::vector<double> scaled(std::span<const double> patch, double scale) {
    std::vector<double> out(patch.begin(), patch.end());
    for (auto &v : out) {
        v *= scale;
    }
    return out;
}

} // namespace

const char *to_string(QuanvMode mode) { return mode == QuanvMode::Fixed ? "Fixed" : "Trainable"; }

QuanvMode quanv_mode_from_string(std::string_view name) {
    if (iequals(name, "fixed") || iequals(name, "non-trainable")) {
        return QuanvMode::Fixed;
    }
    if (iequals(name, "trainable")) {
        return QuanvMode::Trainable;
    }
    throw std::invalid_argument("unknown quanv mode '" + std::string(name) + "'");
}

void QuanvConfig::validate() const {
    if (kernel < 1 || stride < 1 || in_channels < 1) {
        throw std::invalid_argument("quanv kernel, stride and channels must be >= 1");
    }
    if (!(angle_scale > 0.0) || !std::isfinite(angle_scale)) {
        throw std::invalid_argument("quanv angle_scale must be positive and finite");
    }
    if (circuit.num_qubits() != patch_size() || circuit.num_encoding_slots() != patch_size()) {
        throw std::invalid_argument("quanv circuit must have c*k*k = " +
                                    std::to_string(patch_size()) +
                                    " qubits and encoding slots, has " +
                                    std::to_string(circuit.num_qubits()));
    }
}

std::size_t QuanvConfig::out_dim(std::size_t extent) const {
    if (extent < kernel) {
        throw std::invalid_argument("image extent " + std::to_string(extent) +
                                    " smaller than kernel " + std::to_string(kernel));
    }
    return (extent - kernel) / stride + 1;
}

QuanvState QuanvState::initialize(const QuanvConfig &config) {
    SplitMix64 rng(config.seed);
    QuanvState state;
    state.theta.resize(config.circuit.num_param_slots());
    for (auto &t : state.theta) {
        t = 2.0 * std::numbers::pi * rng.uniform();
    }
    state.frozen = config.mode == QuanvMode::Fixed;
    return state;
}

PatchGrid extract_patches(const FeatureTensor &image, std::size_t kernel, std::size_t stride) {
    if (image.rank() != 3) {
        throw std::invalid_argument("extract_patches expects a (c, h, w) image");
    }
    if (kernel < 1 || stride < 1) {
        throw std::invalid_argument("kernel and stride must be >= 1");
    }
    const std::size_t c = image.dim(0);
    const std::size_t h = image.dim(1);
    const std::size_t w = image.dim(2);
    if (h < kernel || w < kernel) {
        throw std::invalid_argument("image " + shape_string(image.shape()) +
                                    " is smaller than kernel " + std::to_string(kernel));
    }
    PatchGrid grid;
    grid.rows = (h - kernel) / stride + 1;
    grid.cols = (w - kernel) / stride + 1;
    grid.patch_len = c * kernel * kernel;
    grid.values.reserve(grid.count() * grid.patch_len);
    for (std::size_t r = 0; r < grid.rows; ++r) {
        for (std::size_t s = 0; s < grid.cols; ++s) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t dy = 0; dy < kernel; ++dy) {
                    for (std::size_t dx = 0; dx < kernel; ++dx) {
                        grid.values.push_back(image.at(ch, r * stride + dy, s * stride + dx));
                    }
                }
            }
        }
    }
    return grid;
}

FeatureTensor quanv_forward(const FeatureTensor &image, const QuanvConfig &config,
                            const QuanvState &state) {
    config.validate();
    check_image(image, config);
    const PatchGrid grid = extract_patches(image, config.kernel, config.stride);
    const std::size_t n = config.out_channels();
    FeatureTensor out({n, grid.rows, grid.cols});
    const std::size_t plane = grid.count();
    for (std::size_t p = 0; p < plane; ++p) {
        const auto angles = scaled(grid.patch(p), config.angle_scale);
        const auto y = qsim::measure_all_z(config.circuit, angles, state.theta);
        for (std::size_t i = 0; i < n; ++i) {
            out[i * plane + p] = y[i];
        }
    }
    return out;
}

QuanvGradients quanv_backward(const FeatureTensor &image, const QuanvConfig &config,
                              const QuanvState &state, const FeatureTensor &upstream,
                              bool want_image_grad) {
    config.validate();
    check_image(image, config);
    const std::size_t n = config.out_channels();
    const std::size_t rows = config.out_dim(image.dim(1));
    const std::size_t cols = config.out_dim(image.dim(2));
    if (upstream.shape() != std::vector<std::size_t>{n, rows, cols}) {
        throw std::invalid_argument("quanv upstream gradient has shape " +
                                    shape_string(upstream.shape()) + ", expected " +
                                    shape_string(std::vector<std::size_t>{n, rows, cols}));
    }

    QuanvGradients grads;
    grads.theta.assign(state.theta.size(), 0.0);
    const bool want_theta = config.mode == QuanvMode::Trainable && !state.frozen;
    if (want_image_grad) {
        grads.image = FeatureTensor(image.shape());
    }
    if (!want_theta && !want_image_grad) {
        return grads;
    }

    const PatchGrid grid = extract_patches(image, config.kernel, config.stride);
    const std::size_t plane = grid.count();
    const std::size_t k = config.kernel;
    std::vector<double> up(n);
    for (std::size_t p = 0; p < plane; ++p) {
        for (std::size_t i = 0; i < n; ++i) {
            up[i] = upstream[i * plane + p];
        }
        const auto angles = scaled(grid.patch(p), config.angle_scale);
        if (want_theta) {
            const auto jac = qsim::param_shift_jacobian(config.circuit, angles, state.theta);
            for (std::size_t j = 0; j < jac.cols; ++j) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += jac(i, j) * up[i];
                }
                grads.theta[j] += acc;
            }
        }
        if (want_image_grad) {
            const auto jac = qsim::encoding_shift_jacobian(config.circuit, angles, state.theta);
            const std::size_t r = p / grid.cols;
            const std::size_t s = p % grid.cols;
            for (std::size_t slot = 0; slot < jac.cols; ++slot) {
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    acc += jac(i, slot) * up[i];
                }
                const std::size_t ch = slot / (k * k);
                const std::size_t dy = (slot / k) % k;
                const std::size_t dx = slot % k;
                grads.image.at(ch, r * config.stride + dy, s * config.stride + dx) +=
                    acc * config.angle_scale;
            }
        }
    }
    return grads;
}

nlohmann::json export_theta(const QuanvConfig &config, const QuanvState &state) {
    return {{"seed", config.seed}, {"mode", to_string(config.mode)}, {"theta", state.theta}};
}

QuanvState import_theta(const nlohmann::json &j, const QuanvConfig &config) {
    QuanvState state;
    state.theta = j.at("theta").get<std::vector<double>>();
    if (state.theta.size() != config.circuit.num_param_slots()) {
        throw std::invalid_argument("imported theta has " + std::to_string(state.theta.size()) +
                                    " entries, circuit has " +
                                    std::to_string(config.circuit.num_param_slots()) + " slots");
    }
    for (const double t : state.theta) {
        if (!std::isfinite(t)) {
            throw std::invalid_argument("imported theta contains non-finite values");
        }
    }
    state.frozen = config.mode == QuanvMode::Fixed;
    return state;
}

void to_json(nlohmann::json &j, const QuanvConfig &config) {
    j = nlohmann::json{{"kernel", config.kernel},
                       {"stride", config.stride},
                       {"in_channels", config.in_channels},
                       {"mode", to_string(config.mode)},
                       {"seed", config.seed},
                       {"angle_scale", config.angle_scale},
                       {"circuit", config.circuit}};
}

QuanvConfig quanv_config_from_json(const nlohmann::json &j) {
    QuanvConfig config;
    config.kernel = j.value("kernel", config.kernel);
    config.stride = j.value("stride", config.stride);
    config.in_channels = j.value("in_channels", config.in_channels);
    config.mode = quanv_mode_from_string(j.value("mode", std::string("Trainable")));
    config.seed = j.value("seed", config.seed);
    config.angle_scale = j.value("angle_scale", config.angle_scale);
    if (j.contains("circuit")) {
        config.circuit = qsim::circuit_from_json(j.at("circuit"));
    } else {
        config.circuit = qsim::CircuitSpec::default_ansatz(config.patch_size());
    }
    config.validate();
    return config;
}

} // namespace qvf
