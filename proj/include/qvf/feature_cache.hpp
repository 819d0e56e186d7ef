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
#include <string>
#include <vector>

#include "json.hpp"

namespace qvf {

inline constexpr std::uint32_t kFeatureCacheVersion = 1;

/// Offline (quantum, classical) embedding pairs for one split.
struct FeatureCache {
    std::string split;
    std::size_t dim = 0;
    std::vector<int> labels;
    std::vector<std::vector<double>> h_q;
    std::vector<std::vector<double>> h_c;
    /// seeds, theta, checkpoint hash, config hash
    nlohmann::json provenance;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
    /// Record count, widths, labels and provenance keys are consistent.
    void validate() const;

    bool operator==(const FeatureCache &) const = default;
};

/// "QVFC", version u32 LE, split name (u32 LE length + bytes), count u64 LE,
/// d u64 LE, then per record: label u8, h_q d x f64 LE, h_c d x f64 LE.
std::string encode_feature_cache(const FeatureCache &cache);
FeatureCache decode_feature_cache(const std::string &bytes, const std::string &source);

/// Writes path and path + ".json" (the provenance sidecar).
void write_feature_cache(const std::string &path, const FeatureCache &cache);
FeatureCache read_feature_cache(const std::string &path);

} // namespace qvf
