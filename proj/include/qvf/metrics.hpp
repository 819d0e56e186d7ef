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
#include <string>
#include <vector>

#include "json.hpp"

/// Binary classification metrics. Label 1 is the positive (malignant) class.
namespace qvf::metrics {

struct Confusion {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t tn = 0;
    std::size_t fn = 0;

    [[nodiscard]] std::size_t total() const { return tp + fp + tn + fn; }
    bool operator==(const Confusion &) const = default;
};

Confusion confusion(std::span<const int> labels, std::span<const int> predictions);

/// Harmonic mean; 0 when precision + recall == 0.
double f1(double precision, double recall);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    bool operator==(const RocPoint &) const = default;
};

struct Roc {
    double auc = 0.0;
    std::vector<RocPoint> points; // (0,0) ... (1,1), one point per distinct score
};

/// Rank (Mann-Whitney) AUC with ties counted one half, plus the ROC staircase
/// from a descending threshold sweep. Throws unless both classes are present.
Roc auc_roc(std::span<const int> labels, std::span<const double> scores);

double trapezoid_area(std::span<const RocPoint> points);

struct MetricsReport {
    std::string split;
    std::uint64_t seed = 0;
    Confusion counts;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    bool auc_defined = true; // false for single-class splits
    bool zero_division = false; // a precision/recall/F1 denominator vanished
    double threshold = 0.5;
    std::vector<RocPoint> roc;

    [[nodiscard]] nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json &j);
    /// "Acc,Prec,Rec,F1,AUC"
    static std::string csv_header();
    /// Percentages with two decimals, in csv_header() order.
    [[nodiscard]] std::string csv_row() const;
};

/// Counts at score >= threshold, then every derived metric.
MetricsReport make_report(std::span<const int> labels, std::span<const double> scores,
                          double threshold = 0.5, std::string split = {},
                          std::uint64_t seed = 0);

} // namespace qvf::metrics
