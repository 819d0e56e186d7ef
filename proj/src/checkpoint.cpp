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

#include "qvf/checkpoint.hpp"

#include "qvf/binary_io.hpp"

namespace qvf {

std::string encode_checkpoint(const std::vector<NamedTensor> &tensors) {
    io::ByteWriter w;
    w.raw("QVFM");
    w.u32_le(kCheckpointVersion);
    for (const auto &t : tensors) {
        w.u32_le(static_cast<std::uint32_t>(t.name.size()));
        w.raw(t.name);
        w.u64_le(t.tensor.rank());
        for (const auto d : t.tensor.shape()) {
            w.u64_le(d);
        }
        for (const double v : t.tensor.data()) {
            w.f64_le(v);
        }
    }
    return w.bytes();
}

std::vector<NamedTensor> decode_checkpoint(const std::string &bytes, const std::string &source) {
    io::ByteReader r(bytes, source);
    if (r.raw(4, "magic") != "QVFM") {
        throw io::FormatError(source + ": bad checkpoint magic");
    }
    const auto version = r.u32_le("version");
    if (version != kCheckpointVersion) {
        throw io::FormatError(source + ": unsupported checkpoint version " +
                              std::to_string(version));
    }
    std::vector<NamedTensor> out;
    while (!r.at_end()) {
        NamedTensor t;
        const auto len = r.u32_le("name length");
        t.name = r.raw(len, "name");
        const auto rank = r.u64_le("rank");
        if (rank > 8) {
            throw io::FormatError(source + ": implausible rank " + std::to_string(rank) +
                                  " for '" + t.name + "'");
        }
        std::vector<std::size_t> shape(rank);
        for (auto &d : shape) {
            d = r.u64_le("dim");
        }
        const std::size_t n = Tensor::numel_of(shape);
        r.need(n * 8, "tensor data");
        std::vector<double> data(n);
        for (auto &v : data) {
            v = r.f64_le("tensor data");
        }
        t.tensor = Tensor(std::move(shape), std::move(data));
        out.push_back(std::move(t));
    }
    return out;
}

void write_checkpoint(const std::string &path, const std::vector<NamedTensor> &tensors) {
    io::write_file(path, encode_checkpoint(tensors));
}

std::vector<NamedTensor> read_checkpoint(const std::string &path) {
    return decode_checkpoint(io::read_file(path), path);
}

} // namespace qvf
