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

#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace qvf::io {

/// Raised for malformed or truncated binary containers.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class ByteWriter {
  public:
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32_le(std::uint32_t v) { put_le(v, 4); }
    void u64_le(std::uint64_t v) { put_le(v, 8); }
    void u32_be(std::uint32_t v) {
        for (int i = 3; i >= 0; --i) {
            u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFU));
        }
    }
    void f64_le(double v) { put_le(std::bit_cast<std::uint64_t>(v), 8); }
    void raw(const std::string &s) { bytes_ += s; }

    [[nodiscard]] const std::string &bytes() const { return bytes_; }

  private:
    void put_le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            u8(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFU));
        }
    }

    std::string bytes_;
};

/// Bounds-checked cursor over a byte buffer. Truncation errors name the
/// field and how many bytes were missing.
class ByteReader {
  public:
    ByteReader(const std::string &bytes, std::string source)
        : bytes_(bytes), source_(std::move(source)) {}

    [[nodiscard]] bool at_end() const { return pos_ == bytes_.size(); }
    [[nodiscard]] std::size_t remaining() const { return bytes_.size() - pos_; }
    [[nodiscard]] std::size_t position() const { return pos_; }

    void need(std::size_t n, const char *what) const {
        if (remaining() < n) {
            throw FormatError(source_ + ": truncated while reading " + what + " at offset " +
                              std::to_string(pos_) + ": missing " +
                              std::to_string(n - remaining()) + " bytes");
        }
    }
    std::uint8_t u8(const char *what) {
        need(1, what);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }
    std::uint32_t u32_le(const char *what) { return static_cast<std::uint32_t>(get_le(4, what)); }
    std::uint64_t u64_le(const char *what) { return get_le(8, what); }
    std::uint32_t u32_be(const char *what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_++]);
        }
        return v;
    }
    double f64_le(const char *what) { return std::bit_cast<double>(get_le(8, what)); }
    std::string raw(std::size_t n, const char *what) {
        need(n, what);
        std::string out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }

  private:
    std::uint64_t get_le(int n, const char *what) {
        need(static_cast<std::size_t>(n), what);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_++])) << (8 * i);
        }
        return v;
    }

    const std::string &bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string &path);
void write_file(const std::string &path, const std::string &bytes);

} // namespace qvf::io
