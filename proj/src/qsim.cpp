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

#include "qvf/qsim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace qvf::qsim {

namespace {

constexpr double kNormTolerance = 1e-10;

std::string qubit_error(std::size_t qubit, std::size_t n) {
    return "qubit index " + std::to_string(qubit) + " out of range for " + std::to_string(n) +
           "-qubit register";
}

void validate_gate(const Gate &gate, std::size_t num_qubits) {
    if (gate.target >= num_qubits) {
        throw std::out_of_range(qubit_error(gate.target, num_qubits));
    }
    if (gate.kind == GateKind::CNOT) {
        if (gate.control >= num_qubits) {
            throw std::out_of_range(qubit_error(gate.control, num_qubits));
        }
        if (gate.control == gate.target) {
            throw std::invalid_argument("CNOT control and target must differ (both " +
                                        std::to_string(gate.target) + ")");
        }
        if (gate.source.type != AngleSource::Type::None) {
            throw std::invalid_argument("CNOT takes no angle source");
        }
    } else if (gate.source.type == AngleSource::Type::None) {
        throw std::invalid_argument(std::string(to_string(gate.kind)) +
                                    " requires an angle source");
    } else if (gate.source.type == AngleSource::Type::Constant &&
               !std::isfinite(gate.source.value)) {
        throw std::invalid_argument("constant gate angle must be finite");
    }
}

void check_finite(std::span<const double> values, const char *what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw std::invalid_argument(std::string(what) + "[" + std::to_string(i) +
                                        "] is not finite");
        }
    }
}

double resolve_angle(const Gate &gate, std::span<const double> x, std::span<const double> theta) {
    switch (gate.source.type) {
    case AngleSource::Type::Encoding:
        return x[gate.source.index];
    case AngleSource::Type::Parameter:
        return theta[gate.source.index];
    case AngleSource::Type::Constant:
        return gate.source.value;
    case AngleSource::Type::None:
        break;
    }
    return 0.0;
}

void check_inputs(const CircuitSpec &spec, std::span<const double> x,
                  std::span<const double> theta) {
    if (x.size() != spec.num_encoding_slots()) {
        throw std::invalid_argument("encoding input has length " + std::to_string(x.size()) +
                                    ", circuit expects " +
                                    std::to_string(spec.num_encoding_slots()));
    }
    if (theta.size() != spec.num_param_slots()) {
        throw std::invalid_argument("parameter vector has length " +
                                    std::to_string(theta.size()) + ", circuit expects " +
                                    std::to_string(spec.num_param_slots()));
    }
    check_finite(x, "x");
    check_finite(theta, "theta");
}

void apply_resolved(QuantumState &state, const Gate &gate, double angle) {
    if (gate.is_rotation()) {
        state.apply(gate, angle);
    } else {
        state.apply(gate, std::nullopt);
    }
}

Jacobian shift_jacobian(const CircuitSpec &spec, std::span<const double> x,
                        std::span<const double> theta, AngleSource::Type slot_type,
                        std::size_t num_slots) {
    check_inputs(spec, x, theta);
    const auto &gates = spec.gates();
    const std::size_t n = spec.num_qubits();

    std::vector<double> angles(gates.size(), 0.0);
    for (std::size_t g = 0; g < gates.size(); ++g) {
        angles[g] = resolve_angle(gates[g], x, theta);
    }

    // prefix[g] is the state just before gate g.
    std::vector<QuantumState> prefix;
    prefix.reserve(gates.size());
    QuantumState state(n);
    for (std::size_t g = 0; g < gates.size(); ++g) {
        prefix.push_back(state);
        apply_resolved(state, gates[g], angles[g]);
    }

    Jacobian jac{n, num_slots, std::vector<double>(n * num_slots, 0.0)};
    constexpr double shift = std::numbers::pi / 2.0;
    for (std::size_t g = 0; g < gates.size(); ++g) {
        if (gates[g].source.type != slot_type) {
            continue;
        }
        const std::size_t slot = gates[g].source.index;
        auto run_shifted = [&](double delta) {
            QuantumState s = prefix[g];
            apply_resolved(s, gates[g], angles[g] + delta);
            for (std::size_t h = g + 1; h < gates.size(); ++h) {
                apply_resolved(s, gates[h], angles[h]);
            }
            return expect_all_z(s);
        };
        const auto plus = run_shifted(shift);
        const auto minus = run_shifted(-shift);
        for (std::size_t i = 0; i < n; ++i) {
            jac(i, slot) += 0.5 * (plus[i] - minus[i]);
        }
    }
    return jac;
}

} // namespace

std::string_view to_string(GateKind kind) {
    switch (kind) {
    case GateKind::RX:
        return "RX";
    case GateKind::RY:
        return "RY";
    case GateKind::RZ:
        return "RZ";
    case GateKind::CNOT:
        return "CNOT";
    }
    return "?";
}

GateKind gate_kind_from_string(std::string_view name) {
    if (name == "RX") {
        return GateKind::RX;
    }
    if (name == "RY") {
        return GateKind::RY;
    }
    if (name == "RZ") {
        return GateKind::RZ;
    }
    if (name == "CNOT") {
        return GateKind::CNOT;
    }
    throw std::invalid_argument("unknown gate kind '" + std::string(name) + "'");
}

Gate Gate::rotation(GateKind kind, std::size_t target, AngleSource source) {
    if (kind == GateKind::CNOT) {
        throw std::invalid_argument("Gate::rotation called with CNOT");
    }
    return Gate{kind, target, 0, source};
}

Gate Gate::cnot(std::size_t control, std::size_t target) {
    return Gate{GateKind::CNOT, target, control, AngleSource::none()};
}

// ---------------------------------------------------------------------------
// QuantumState

QuantumState::QuantumState(std::size_t num_qubits) : num_qubits_(num_qubits) {
    if (num_qubits == 0 || num_qubits > kMaxQubits) {
        throw std::invalid_argument("qubit count must be in [1, " + std::to_string(kMaxQubits) +
                                    "], got " + std::to_string(num_qubits));
    }
    amplitudes_.assign(std::size_t{1} << num_qubits, Complex{0.0, 0.0});
    amplitudes_[0] = 1.0;
}

QuantumState::QuantumState(std::size_t num_qubits, std::vector<Complex> amplitudes)
    : num_qubits_(num_qubits), amplitudes_(std::move(amplitudes)) {
    if (num_qubits == 0 || num_qubits > kMaxQubits) {
        throw std::invalid_argument("qubit count must be in [1, " + std::to_string(kMaxQubits) +
                                    "], got " + std::to_string(num_qubits));
    }
    if (amplitudes_.size() != (std::size_t{1} << num_qubits)) {
        throw std::invalid_argument("amplitude vector has length " +
                                    std::to_string(amplitudes_.size()) + ", expected 2^" +
                                    std::to_string(num_qubits));
    }
    if (std::abs(norm_squared() - 1.0) > kNormTolerance) {
        throw std::invalid_argument("amplitudes are not normalized");
    }
}

double QuantumState::norm_squared() const {
    double total = 0.0;
    for (const auto &a : amplitudes_) {
        total += std::norm(a);
    }
    return total;
}

void QuantumState::check_qubit(std::size_t qubit) const {
    if (qubit >= num_qubits_) {
        throw std::out_of_range(qubit_error(qubit, num_qubits_));
    }
}

void QuantumState::apply(const Gate &gate, std::optional<double> angle) {
    validate_gate(gate, num_qubits_);
    if (gate.is_rotation() != angle.has_value()) {
        throw std::invalid_argument(gate.is_rotation()
                                        ? std::string(to_string(gate.kind)) + " requires an angle"
                                        : std::string("CNOT takes no angle"));
    }
    if (angle && !std::isfinite(*angle)) {
        throw std::invalid_argument("gate angle must be finite");
    }
    switch (gate.kind) {
    case GateKind::RX:
        rx(gate.target, *angle);
        break;
    case GateKind::RY:
        ry(gate.target, *angle);
        break;
    case GateKind::RZ:
        rz(gate.target, *angle);
        break;
    case GateKind::CNOT:
        cnot(gate.control, gate.target);
        break;
    }
}

void QuantumState::rx(std::size_t qubit, double angle) {
    check_qubit(qubit);
    const double c = std::cos(angle / 2.0);
    const double s = std::sin(angle / 2.0);
    const Complex mis{0.0, -s};
    const std::size_t bit = std::size_t{1} << qubit;
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
        if ((i & bit) != 0) {
            continue;
        }
        const Complex a0 = amplitudes_[i];
        const Complex a1 = amplitudes_[i | bit];
        amplitudes_[i] = c * a0 + mis * a1;
        amplitudes_[i | bit] = mis * a0 + c * a1;
    }
}

void QuantumState::ry(std::size_t qubit, double angle) {
    check_qubit(qubit);
    const double c = std::cos(angle / 2.0);
    const double s = std::sin(angle / 2.0);
    const std::size_t bit = std::size_t{1} << qubit;
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
        if ((i & bit) != 0) {
            continue;
        }
        const Complex a0 = amplitudes_[i];
        const Complex a1 = amplitudes_[i | bit];
        amplitudes_[i] = c * a0 - s * a1;
        amplitudes_[i | bit] = s * a0 + c * a1;
    }
}

void QuantumState::rz(std::size_t qubit, double angle) {
    check_qubit(qubit);
    const Complex lower = std::polar(1.0, -angle / 2.0);
    const Complex upper = std::polar(1.0, angle / 2.0);
    const std::size_t bit = std::size_t{1} << qubit;
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
        amplitudes_[i] *= (i & bit) != 0 ? upper : lower;
    }
}

void QuantumState::cnot(std::size_t control, std::size_t target) {
    check_qubit(control);
    check_qubit(target);
    if (control == target) {
        throw std::invalid_argument("CNOT control and target must differ");
    }
    const std::size_t cbit = std::size_t{1} << control;
    const std::size_t tbit = std::size_t{1} << target;
    for (std::size_t i = 0; i < amplitudes_.size(); ++i) {
        if ((i & cbit) != 0 && (i & tbit) == 0) {
            std::swap(amplitudes_[i], amplitudes_[i | tbit]);
        }
    }
}

QuantumState apply_gate(QuantumState state, const Gate &gate, std::optional<double> angle) {
    state.apply(gate, angle);
    return state;
}

// ---------------------------------------------------------------------------
// CircuitSpec

CircuitSpec::CircuitSpec(std::size_t num_qubits, std::vector<Gate> gates,
                         std::size_t num_encoding_slots, std::size_t num_param_slots)
    : num_qubits_(num_qubits), gates_(std::move(gates)), num_encoding_slots_(num_encoding_slots),
      num_param_slots_(num_param_slots) {
    if (num_qubits == 0 || num_qubits > kMaxQubits) {
        throw std::invalid_argument("qubit count must be in [1, " + std::to_string(kMaxQubits) +
                                    "], got " + std::to_string(num_qubits));
    }
    for (std::size_t g = 0; g < gates_.size(); ++g) {
        const Gate &gate = gates_[g];
        validate_gate(gate, num_qubits);
        const auto &src = gate.source;
        if (src.type == AngleSource::Type::Encoding && src.index >= num_encoding_slots) {
            throw std::out_of_range("gate " + std::to_string(g) + " reads encoding slot " +
                                    std::to_string(src.index) + " of " +
                                    std::to_string(num_encoding_slots));
        }
        if (src.type == AngleSource::Type::Parameter && src.index >= num_param_slots) {
            throw std::out_of_range("gate " + std::to_string(g) + " reads parameter slot " +
                                    std::to_string(src.index) + " of " +
                                    std::to_string(num_param_slots));
        }
    }
    if (num_encoding_slots == 0) {
        return;
    }
    if (num_encoding_slots != num_qubits) {
        throw std::invalid_argument("angle encoding needs one slot per qubit (" +
                                    std::to_string(num_qubits) + "), got " +
                                    std::to_string(num_encoding_slots));
    }
    if (gates_.size() < num_qubits) {
        throw std::invalid_argument("circuit is shorter than its encoding layer");
    }
    std::vector<bool> seen(num_qubits, false);
    for (std::size_t g = 0; g < num_qubits; ++g) {
        const Gate &gate = gates_[g];
        if (gate.kind != GateKind::RY || gate.source.type != AngleSource::Type::Encoding ||
            seen[gate.target]) {
            throw std::invalid_argument(
                "circuit must open with exactly one RY encoding gate per qubit");
        }
        seen[gate.target] = true;
    }
}

CircuitSpec CircuitSpec::default_ansatz(std::size_t num_qubits) {
    static constexpr GateKind pattern[] = {GateKind::RX, GateKind::RY, GateKind::RZ,
                                           GateKind::RY};
    std::vector<Gate> gates;
    for (std::size_t q = 0; q < num_qubits; ++q) {
        gates.push_back(Gate::rotation(GateKind::RY, q, AngleSource::encoding(q)));
    }
    for (std::size_t q = 0; q < num_qubits; ++q) {
        gates.push_back(Gate::rotation(pattern[q % 4], q, AngleSource::parameter(q)));
    }
    for (std::size_t q = 0; q + 1 < num_qubits; ++q) {
        gates.push_back(Gate::cnot(q, q + 1));
    }
    return CircuitSpec(num_qubits, std::move(gates), num_qubits, num_qubits);
}

void to_json(nlohmann::json &j, const CircuitSpec &spec) {
    nlohmann::json gates = nlohmann::json::array();
    for (const auto &gate : spec.gates()) {
        nlohmann::json g;
        g["kind"] = std::string(to_string(gate.kind));
        g["target"] = gate.target;
        if (gate.kind == GateKind::CNOT) {
            g["control"] = gate.control;
        } else {
            switch (gate.source.type) {
            case AngleSource::Type::Encoding:
                g["source"] = {{"type", "encoding"}, {"index", gate.source.index}};
                break;
            case AngleSource::Type::Parameter:
                g["source"] = {{"type", "parameter"}, {"index", gate.source.index}};
                break;
            case AngleSource::Type::Constant:
                g["source"] = {{"type", "constant"}, {"value", gate.source.value}};
                break;
            case AngleSource::Type::None:
                break;
            }
        }
        gates.push_back(std::move(g));
    }
    j = nlohmann::json{{"num_qubits", spec.num_qubits()},
                       {"num_encoding_slots", spec.num_encoding_slots()},
                       {"num_param_slots", spec.num_param_slots()},
                       {"gates", std::move(gates)}};
}

CircuitSpec circuit_from_json(const nlohmann::json &j) {
    const auto n = j.at("num_qubits").get<std::size_t>();
    std::vector<Gate> gates;
    std::size_t max_enc = 0;
    std::size_t max_param = 0;
    for (const auto &g : j.at("gates")) {
        const GateKind kind = gate_kind_from_string(g.at("kind").get<std::string>());
        const auto target = g.at("target").get<std::size_t>();
        if (kind == GateKind::CNOT) {
            gates.push_back(Gate::cnot(g.at("control").get<std::size_t>(), target));
            continue;
        }
        const auto &src = g.at("source");
        const auto type = src.at("type").get<std::string>();
        AngleSource source;
        if (type == "encoding") {
            source = AngleSource::encoding(src.at("index").get<std::size_t>());
            max_enc = std::max(max_enc, source.index + 1);
        } else if (type == "parameter") {
            source = AngleSource::parameter(src.at("index").get<std::size_t>());
            max_param = std::max(max_param, source.index + 1);
        } else if (type == "constant") {
            source = AngleSource::constant(src.at("value").get<double>());
        } else {
            throw std::invalid_argument("unknown angle source type '" + type + "'");
        }
        gates.push_back(Gate::rotation(kind, target, source));
    }
    const std::size_t enc = j.contains("num_encoding_slots")
                                ? j.at("num_encoding_slots").get<std::size_t>()
                                : max_enc;
    const std::size_t params =
        j.contains("num_param_slots") ? j.at("num_param_slots").get<std::size_t>() : max_param;
    return CircuitSpec(n, std::move(gates), enc, params);
}

void from_json(const nlohmann::json &j, CircuitSpec &spec) { spec = circuit_from_json(j); }

// ---------------------------------------------------------------------------
// Evaluation

QuantumState run_circuit(const CircuitSpec &spec, std::span<const double> x,
                         std::span<const double> theta) {
    check_inputs(spec, x, theta);
    QuantumState state(spec.num_qubits());
    for (const auto &gate : spec.gates()) {
        apply_resolved(state, gate, resolve_angle(gate, x, theta));
    }
    return state;
}

double expect_z(const QuantumState &state, std::size_t qubit) {
    if (qubit >= state.num_qubits()) {
        throw std::out_of_range(qubit_error(qubit, state.num_qubits()));
    }
    const auto amps = state.amplitudes();
    const std::size_t bit = std::size_t{1} << qubit;
    double total = 0.0;
    for (std::size_t i = 0; i < amps.size(); ++i) {
        total += (i & bit) != 0 ? -std::norm(amps[i]) : std::norm(amps[i]);
    }
    return std::clamp(total, -1.0, 1.0);
}

std::vector<double> expect_all_z(const QuantumState &state) {
    const std::size_t n = state.num_qubits();
    const auto amps = state.amplitudes();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < amps.size(); ++i) {
        const double p = std::norm(amps[i]);
        for (std::size_t q = 0; q < n; ++q) {
            out[q] += ((i >> q) & 1U) != 0 ? -p : p;
        }
    }
    for (auto &v : out) {
        v = std::clamp(v, -1.0, 1.0);
    }
    return out;
}

std::vector<double> measure_all_z(const CircuitSpec &spec, std::span<const double> x,
                                  std::span<const double> theta) {
    return expect_all_z(run_circuit(spec, x, theta));
}

Jacobian param_shift_jacobian(const CircuitSpec &spec, std::span<const double> x,
                              std::span<const double> theta) {
    return shift_jacobian(spec, x, theta, AngleSource::Type::Parameter, spec.num_param_slots());
}

Jacobian encoding_shift_jacobian(const CircuitSpec &spec, std::span<const double> x,
                                 std::span<const double> theta) {
    return shift_jacobian(spec, x, theta, AngleSource::Type::Encoding,
                          spec.num_encoding_slots());
}

} // namespace qvf::qsim
