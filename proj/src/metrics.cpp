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

#include "qvf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace qvf::metrics {

namespace {

void check_label(int label) {
    if (label != 0 && label != 1) {
        throw std::invalid_argument("labels must be 0 or 1, got " + std::to_string(label));
    }
}

double ratio(std::size_t num, std::size_t den, bool &zero_division) {
    if (den == 0) {
        zero_division = true;
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

} // namespace

Confusion confusion(std::span<const int> labels, std::span<const int> predictions) {
    if (labels.size() != predictions.size()) {
        throw std::invalid_argument("confusion: " + std::to_string(labels.size()) +
                                    " labels vs " + std::to_string(predictions.size()) +
                                    " predictions");
    }
    Confusion c;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        check_label(labels[i]);
        check_label(predictions[i]);
        if (labels[i] == 1) {
            (predictions[i] == 1 ? c.tp : c.fn) += 1;
        } else {
            (predictions[i] == 1 ? c.fp : c.tn) += 1;
        }
    }
    return c;
}

double f1(double precision, double recall) {
    if (!(precision >= 0.0 && precision <= 1.0 && recall >= 0.0 && recall <= 1.0)) {
        throw std::invalid_argument("f1: precision and recall must lie in [0, 1]");
    }
    if (precision + recall == 0.0) {
        return 0.0;
    }
    return 2.0 * precision * recall / (precision + recall);
}

Roc auc_roc(std::span<const int> labels, std::span<const double> scores) {
    if (labels.size() != scores.size()) {
        throw std::invalid_argument("auc_roc: label and score counts differ");
    }
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        check_label(labels[i]);
        if (!std::isfinite(scores[i])) {
            throw std::invalid_argument("auc_roc: non-finite score at index " +
                                        std::to_string(i));
        }
        pos += labels[i] == 1 ? 1 : 0;
    }
    const std::size_t neg = labels.size() - pos;
    if (pos == 0 || neg == 0) {
        throw std::invalid_argument("auc_roc needs at least one positive and one negative");
    }

    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    // Sweep tie groups from the highest score down. A positive beats every
    // negative in a later (lower) group and ties with negatives in its own.
    Roc roc;
    roc.points.push_back({0.0, 0.0});
    std::uint64_t half_wins = 0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::size_t gpos = 0;
        std::size_t gneg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? gpos : gneg) += 1;
            ++j;
        }
        // Negatives below this group: neg - fp - gneg.
        half_wins += 2ULL * gpos * (neg - fp - gneg) + static_cast<std::uint64_t>(gpos) * gneg;
        tp += gpos;
        fp += gneg;
        roc.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                              static_cast<double>(tp) / static_cast<double>(pos)});
        i = j;
    }
    roc.auc = (static_cast<double>(half_wins) / 2.0) / static_cast<double>(pos * neg);
    return roc;
}

double trapezoid_area(std::span<const RocPoint> points) {
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
    }
    return area;
}

MetricsReport make_report(std::span<const int> labels, std::span<const double> scores,
                          double threshold, std::string split, std::uint64_t seed) {
    if (labels.size() != scores.size()) {
        throw std::invalid_argument("make_report: label and score counts differ");
    }
    std::vector<int> preds(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        preds[i] = scores[i] >= threshold ? 1 : 0;
    }
    MetricsReport r;
    r.split = std::move(split);
    r.seed = seed;
    r.threshold = threshold;
    r.counts = confusion(labels, preds);
    const auto &c = r.counts;
    bool zero_div = false;
    r.accuracy = ratio(c.tp + c.tn, c.total(), zero_div);
    r.precision = ratio(c.tp, c.tp + c.fp, zero_div);
    r.recall = ratio(c.tp, c.tp + c.fn, zero_div);
    if (r.precision + r.recall == 0.0) {
        zero_div = true;
    }
    r.f1 = f1(r.precision, r.recall);
    r.zero_division = zero_div;
    const bool both = c.tp + c.fn > 0 && c.tn + c.fp > 0;
    if (both) {
        auto roc = auc_roc(labels, scores);
        r.auc = roc.auc;
        r.roc = std::move(roc.points);
    } else {
        r.auc_defined = false;
    }
    return r;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json roc_json = nlohmann::json::array();
    for (const auto &p : roc) {
        roc_json.push_back({p.fpr, p.tpr});
    }
    nlohmann::json j{{"split", split},
                     {"seed", seed},
                     {"tp", counts.tp},
                     {"fp", counts.fp},
                     {"tn", counts.tn},
                     {"fn", counts.fn},
                     {"accuracy", accuracy},
                     {"precision", precision},
                     {"recall", recall},
                     {"f1", f1},
                     {"threshold", threshold},
                     {"zero_division", zero_division},
                     {"roc", std::move(roc_json)}};
    j["auc"] = auc_defined ? nlohmann::json(auc) : nlohmann::json(nullptr);
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json &j) {
    MetricsReport r;
    r.split = j.value("split", std::string{});
    r.seed = j.value("seed", std::uint64_t{0});
    r.counts = {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(),
                j.at("tn").get<std::size_t>(), j.at("fn").get<std::size_t>()};
    r.accuracy = j.at("accuracy").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.auc_defined = !j.at("auc").is_null();
    r.auc = r.auc_defined ? j.at("auc").get<double>() : 0.0;
    r.threshold = j.value("threshold", 0.5);
    r.zero_division = j.value("zero_division", false);
    for (const auto &p : j.value("roc", nlohmann::json::array())) {
        r.roc.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    return r;
}

std::string MetricsReport::csv_header() { return "Acc,Prec,Rec,F1,AUC"; }

std::string MetricsReport::csv_row() const {
    return percent(accuracy) + "," + percent(precision) + "," + percent(recall) + "," +
           percent(f1) + "," + (auc_defined ? percent(auc) : std::string("NA"));
}

} // namespace qvf::metrics
