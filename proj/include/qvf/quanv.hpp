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
#include <numbers>
#include <span>
#include <vector>

#include "json.hpp"
#include "qvf/qsim.hpp"
#include "qvf/tensor.hpp"

namespace qvf {

enum class QuanvMode { Trainable, Fixed };

const char *to_string(QuanvMode mode);
QuanvMode quanv_mode_from_string(std::string_view name);

/// Sliding-window quantum convolution. Each k x k window over c channels is
/// flattened (channel-major, then row-major) into n = c*k*k encoding angles.
struct QuanvConfig {
    std::size_t kernel = 2;
    std::size_t stride = 2;
    std::size_t in_channels = 1;
    QuanvMode mode = QuanvMode::Trainable;
    std::uint64_t seed = 0;
    double angle_scale = std::numbers::pi; // pixel in [0,1] -> angle in [0, pi]
    qsim::CircuitSpec circuit = qsim::CircuitSpec::default_ansatz(4);

    void validate() const;
    [[nodiscard]] std::size_t patch_size() const { return in_channels * kernel * kernel; }
    [[nodiscard]] std::size_t out_channels() const { return circuit.num_qubits(); }
    [[nodiscard]] std::size_t out_dim(std::size_t extent) const;
};

struct QuanvState {
    std::vector<double> theta;
    bool frozen = false;

    /// theta_j ~ U[0, 2pi) drawn in slot order from SplitMix64(config.seed).
    /// Fixed mode marks the vector frozen.
    static QuanvState initialize(const QuanvConfig &config);
};

/// Flattened windows in row-major grid order.
struct PatchGrid {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t patch_len = 0;
    std::vector<double> values; // rows * cols * patch_len

    [[nodiscard]] std::size_t count() const { return rows * cols; }
    [[nodiscard]] std::span<const double> patch(std::size_t i) const {
        return {values.data() + i * patch_len, patch_len};
    }
};

PatchGrid extract_patches(const FeatureTensor &image, std::size_t kernel, std::size_t stride);

/// Output channel i at (r, s) is <Z_i> of the circuit fed with the window at
/// (r, s) scaled by angle_scale.
FeatureTensor quanv_forward(const FeatureTensor &image, const QuanvConfig &config,
                            const QuanvState &state);

struct QuanvGradients {
    std::vector<double> theta;
    FeatureTensor image;
};

/// grad_theta sums per-window parameter-shift Jacobians against the upstream
/// slice; Fixed mode returns exact zeros without evaluating them.
/// With want_image_grad = false the image gradient is left empty.
QuanvGradients quanv_backward(const FeatureTensor &image, const QuanvConfig &config,
                              const QuanvState &state, const FeatureTensor &upstream,
                              bool want_image_grad = true);

/// {"seed": s, "mode": ..., "theta": [...]}, for feature-cache provenance.
nlohmann::json export_theta(const QuanvConfig &config, const QuanvState &state);
QuanvState import_theta(const nlohmann::json &j, const QuanvConfig &config);

void to_json(nlohmann::json &j, const QuanvConfig &config);
QuanvConfig quanv_config_from_json(const nlohmann::json &j);

} // namespace qvf
