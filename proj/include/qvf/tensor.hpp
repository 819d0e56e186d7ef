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
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace qvf {

/// Dense row-major real array. Carries images, feature maps, embeddings and
/// parameter blocks. Rank is whatever the shape says; rank 0 is a scalar.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static std::size_t numel_of(std::span<const std::size_t> shape);

    [[nodiscard]] const std::vector<std::size_t> &shape() const { return shape_; }
    [[nodiscard]] std::size_t rank() const { return shape_.size(); }
    [[nodiscard]] std::size_t dim(std::size_t i) const;
    [[nodiscard]] std::size_t size() const { return data_.size(); }
    [[nodiscard]] bool empty() const { return data_.empty(); }

    [[nodiscard]] std::span<double> data() { return data_; }
    [[nodiscard]] std::span<const double> data() const { return data_; }
    [[nodiscard]] std::vector<double> &vec() { return data_; }
    [[nodiscard]] const std::vector<double> &vec() const { return data_; }

    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // (c, h, w) access for rank-3 tensors.
    double &at(std::size_t c, std::size_t h, std::size_t w) {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double at(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }

    /// Same data, new shape. Throws if the element counts differ.
    [[nodiscard]] Tensor reshaped(std::vector<std::size_t> shape) const;

    void fill(double value);
    [[nodiscard]] bool all_finite() const;
    [[nodiscard]] bool same_shape(const Tensor &other) const { return shape_ == other.shape_; }

    Tensor &operator+=(const Tensor &other);
    Tensor &operator*=(double s);

    bool operator==(const Tensor &other) const = default;

  private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

using FeatureTensor = Tensor;

std::string shape_string(std::span<const std::size_t> shape);

} // namespace qvf
