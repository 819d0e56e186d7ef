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

#include <string>
#include <vector>

#include "qvf/tensor.hpp"

namespace qvf {

struct NamedTensor {
    std::string name;
    Tensor tensor;

    bool operator==(const NamedTensor &) const = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "QVFM", version u32 LE, then per tensor: name length u32 LE, name bytes,
/// rank u64 LE, dims u64 LE, data f64 LE. Tensors are stored in the given order.
std::string encode_checkpoint(const std::vector<NamedTensor> &tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string &bytes, const std::string &source);

void write_checkpoint(const std::string &path, const std::vector<NamedTensor> &tensors);
std::vector<NamedTensor> read_checkpoint(const std::string &path);

} // namespace qvf
