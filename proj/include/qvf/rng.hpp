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
#include <string_view>
#include <vector>

namespace qvf {

/// SplitMix64 generator. Every random draw in the project goes through this
/// type so that sampled values are identical on every platform; the standard
/// library distributions are implementation-defined and are not used.
class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next();

    /// Uniform on [0, 1) with 53 bits of resolution.
    double uniform();
    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller (cosine branch only, one draw per call).
    double normal();
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

    [[nodiscard]] std::uint64_t state() const { return state_; }

  private:
    std::uint64_t state_;
};

/// The SplitMix64 output finalizer.
std::uint64_t mix64(std::uint64_t z);

/// Named sub-seed of a root seed, e.g. derive_seed(root, "theta_fix").
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

/// Fisher-Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, SplitMix64 &rng);

} // namespace qvf
