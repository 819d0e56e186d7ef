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

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "qvf/qsim.hpp"
#include "qvf/rng.hpp"
#include "qvf/tensor.hpp"

namespace qvf::testing {

/// Central difference of f at x along coordinate i.
inline double central_diff(const std::function<double(std::span<const double>)> &f,
                           std::vector<double> x, std::size_t i, double h = 1e-5) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double up = f(x);
    x[i] = x0 - h;
    const double down = f(x);
    return (up - down) / (2.0 * h);
}

/// |a - b| / max(1, |a|, |b|).
inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

inline Tensor random_tensor(std::vector<std::size_t> shape, SplitMix64 &rng, double lo = -1.0,
                            double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto &v : t.data()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

inline std::vector<double> random_vec(std::size_t n, SplitMix64 &rng, double lo = -1.0,
                                      double hi = 1.0) {
    std::vector<double> v(n);
    for (auto &x : v) {
        x = rng.uniform(lo, hi);
    }
    return v;
}

/// Random circuit on n qubits: encoding layer (when with_encoding), then
/// `depth` random gates drawing from m parameter slots, every slot used.
inline qsim::CircuitSpec random_circuit(std::size_t n, std::size_t m, std::size_t depth,
                                        SplitMix64 &rng, bool with_encoding = true) {
    using qsim::AngleSource;
    using qsim::Gate;
    using qsim::GateKind;
    std::vector<Gate> gates;
    if (with_encoding) {
        for (std::size_t q = 0; q < n; ++q) {
            gates.push_back(Gate::rotation(GateKind::RY, q, AngleSource::encoding(q)));
        }
    }
    const GateKind kinds[] = {GateKind::RX, GateKind::RY, GateKind::RZ};
    for (std::size_t j = 0; j < m; ++j) {
        gates.push_back(Gate::rotation(kinds[rng.below(3)], rng.below(n), AngleSource::parameter(j)));
    }
    for (std::size_t g = 0; g < depth; ++g) {
        const auto pick = rng.below(4);
        if (pick == 3 && n > 1) {
            const auto c = rng.below(n);
            auto t = rng.below(n - 1);
            if (t >= c) {
                ++t;
            }
            gates.push_back(Gate::cnot(c, t));
        } else if (m > 0 && rng.below(2) == 0) {
            gates.push_back(Gate::rotation(kinds[rng.below(3)], rng.below(n),
                                           AngleSource::parameter(rng.below(m))));
        } else if (with_encoding && rng.below(3) == 0) {
            gates.push_back(Gate::rotation(kinds[rng.below(3)], rng.below(n),
                                           AngleSource::encoding(rng.below(n))));
        } else {
            gates.push_back(Gate::rotation(kinds[rng.below(3)], rng.below(n),
                                           AngleSource::constant(rng.uniform(-3.0, 3.0))));
        }
    }
    return qsim::CircuitSpec(n, gates, with_encoding ? n : 0, m);
}

} // namespace qvf::testing
