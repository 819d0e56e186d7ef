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

#include "qvf/feature_cache.hpp"

#include <cmath>
#include <stdexcept>

#include "qvf/binary_io.hpp"

namespace qvf {

void FeatureCache::validate() const {
    if (h_q.size() != labels.size() || h_c.size() != labels.size()) {
        throw std::invalid_argument("feature cache '" + split + "': record counts differ");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) {
            throw std::invalid_argument("feature cache '" + split + "': bad label at record " +
                                        std::to_string(i));
        }
        if (h_q[i].size() != dim || h_c[i].size() != dim) {
            throw std::invalid_argument("feature cache '" + split + "': record " +
                                        std::to_string(i) + " width differs from d=" +
                                        std::to_string(dim));
        }
        for (std::size_t f = 0; f < dim; ++f) {
            if (!std::isfinite(h_q[i][f]) || !std::isfinite(h_c[i][f])) {
                throw std::invalid_argument("feature cache '" + split +
                                            "': non-finite value in record " +
                                            std::to_string(i));
            }
        }
    }
    for (const char *key : {"seeds", "theta", "checkpoint_hash", "config_hash"}) {
        if (!provenance.contains(key)) {
            throw std::invalid_argument("feature cache '" + split + "': provenance lacks '" +
                                        key + "'");
        }
    }
}

std::string encode_feature_cache(const FeatureCache &cache) {
    cache.validate();
    io::ByteWriter w;
    w.raw("QVFC");
    w.u32_le(kFeatureCacheVersion);
    w.u32_le(static_cast<std::uint32_t>(cache.split.size()));
    w.raw(cache.split);
    w.u64_le(cache.size());
    w.u64_le(cache.dim);
    for (std::size_t i = 0; i < cache.size(); ++i) {
        w.u8(static_cast<std::uint8_t>(cache.labels[i]));
        for (const double v : cache.h_q[i]) {
            w.f64_le(v);
        }
        for (const double v : cache.h_c[i]) {
            w.f64_le(v);
        }
    }
    return w.bytes();
}

FeatureCache decode_feature_cache(const std::string &bytes, const std::string &source) {
    io::ByteReader r(bytes, source);
    if (r.raw(4, "magic") != "QVFC") {
        throw io::FormatError(source + ": bad feature cache magic");
    }
    const auto version = r.u32_le("version");
    if (version != kFeatureCacheVersion) {
        throw io::FormatError(source + ": unsupported feature cache version " +
                              std::to_string(version));
    }
    FeatureCache cache;
    cache.split = r.raw(r.u32_le("split name length"), "split name");
    const auto count = r.u64_le("record count");
    cache.dim = r.u64_le("embedding width");
    r.need(count * (1 + 16 * cache.dim), "records");
    cache.labels.resize(count);
    cache.h_q.assign(count, std::vector<double>(cache.dim));
    cache.h_c.assign(count, std::vector<double>(cache.dim));
    for (std::size_t i = 0; i < count; ++i) {
        cache.labels[i] = r.u8("label");
        for (auto &v : cache.h_q[i]) {
            v = r.f64_le("h_q");
        }
        for (auto &v : cache.h_c[i]) {
            v = r.f64_le("h_c");
        }
    }
    if (!r.at_end()) {
        throw io::FormatError(source + ": " + std::to_string(r.remaining()) +
                              " trailing bytes after the last record");
    }
    return cache;
}

void write_feature_cache(const std::string &path, const FeatureCache &cache) {
    io::write_file(path, encode_feature_cache(cache));
    io::write_file(path + ".json", cache.provenance.dump(2) + "\n");
}

FeatureCache read_feature_cache(const std::string &path) {
    FeatureCache cache = decode_feature_cache(io::read_file(path), path);
    cache.provenance = nlohmann::json::parse(io::read_file(path + ".json"));
    cache.validate();
    return cache;
}

} // namespace qvf
