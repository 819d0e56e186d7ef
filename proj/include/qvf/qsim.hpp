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

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "json.hpp"

/// Dense state-vector simulation for small qubit registers.
///
/// Qubit ordering is little-endian: qubit q corresponds to bit q of the
/// amplitude index, so |1> on qubit 0 of a 2-qubit register lives at index 1.
namespace qvf::qsim {

using Complex = std::complex<double>;

inline constexpr std::size_t kMaxQubits = 20;

enum class GateKind { RX, RY, RZ, CNOT };

std::string_view to_string(GateKind kind);
GateKind gate_kind_from_string(std::string_view name);

/// Where a rotation gate reads its angle from.
struct AngleSource {
    enum class Type { None, Encoding, Parameter, Constant };

    Type type = Type::None;
    std::size_t index = 0; // slot index for Encoding / Parameter
    double value = 0.0;    // radians, Constant only

    static AngleSource none() { return {}; }
    static AngleSource encoding(std::size_t slot) { return {Type::Encoding, slot, 0.0}; }
    static AngleSource parameter(std::size_t slot) { return {Type::Parameter, slot, 0.0}; }
    static AngleSource constant(double radians) { return {Type::Constant, 0, radians}; }

    bool operator==(const AngleSource &) const = default;
};

struct Gate {
    GateKind kind = GateKind::RY;
    std::size_t target = 0;
    std::size_t control = 0; // CNOT only
    AngleSource source;

    static Gate rotation(GateKind kind, std::size_t target, AngleSource source);
    static Gate cnot(std::size_t control, std::size_t target);

    [[nodiscard]] bool is_rotation() const { return kind != GateKind::CNOT; }

    bool operator==(const Gate &) const = default;
};

class QuantumState {
  public:
    /// |0...0> on num_qubits qubits.
    explicit QuantumState(std::size_t num_qubits);
    /// Takes ownership of amplitudes; rejects a length other than 2^n or a
    /// norm that deviates from 1 by more than 1e-10.
    QuantumState(std::size_t num_qubits, std::vector<Complex> amplitudes);

    [[nodiscard]] std::size_t num_qubits() const { return num_qubits_; }
    [[nodiscard]] std::span<const Complex> amplitudes() const { return amplitudes_; }
    [[nodiscard]] double norm_squared() const;

    /// In-place gate application. angle must be present exactly when the gate
    /// is a rotation.
    void apply(const Gate &gate, std::optional<double> angle);

    void rx(std::size_t qubit, double angle);
    void ry(std::size_t qubit, double angle);
    void rz(std::size_t qubit, double angle);
    void cnot(std::size_t control, std::size_t target);

  private:
    void check_qubit(std::size_t qubit) const;

    std::size_t num_qubits_;
    std::vector<Complex> amplitudes_;
};

QuantumState apply_gate(QuantumState state, const Gate &gate, std::optional<double> angle);

/// Gate program with data-driven (Encoding) and trainable (Parameter) slots.
///
/// When num_encoding_slots > 0 it must equal num_qubits and the program must
/// open with one RY Encoding gate per qubit, i.e. the angle-encoding layer.
class CircuitSpec {
  public:
    CircuitSpec(std::size_t num_qubits, std::vector<Gate> gates, std::size_t num_encoding_slots,
                std::size_t num_param_slots);

    /// Encoding layer RY(x_q) on every qubit, then one trainable rotation per
    /// qubit cycling through RX, RY, RZ, RY, then a CNOT chain q -> q+1.
    /// For 4 qubits: RX q0, RY q1, RZ q2, RY q3, four parameter slots.
    static CircuitSpec default_ansatz(std::size_t num_qubits = 4);

    [[nodiscard]] std::size_t num_qubits() const { return num_qubits_; }
    [[nodiscard]] const std::vector<Gate> &gates() const { return gates_; }
    [[nodiscard]] std::size_t num_encoding_slots() const { return num_encoding_slots_; }
    [[nodiscard]] std::size_t num_param_slots() const { return num_param_slots_; }

    bool operator==(const CircuitSpec &) const = default;

  private:
    std::size_t num_qubits_;
    std::vector<Gate> gates_;
    std::size_t num_encoding_slots_;
    std::size_t num_param_slots_;
};

void to_json(nlohmann::json &j, const CircuitSpec &spec);
void from_json(const nlohmann::json &j, CircuitSpec &spec);
CircuitSpec circuit_from_json(const nlohmann::json &j);

/// n x m row-major matrix of partial derivatives.
struct Jacobian {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double &operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

/// U(theta) U_in(x) |0...0>.
QuantumState run_circuit(const CircuitSpec &spec, std::span<const double> x,
                         std::span<const double> theta);

/// <psi| Z_qubit |psi>, clamped to the spectral bound [-1, 1].
double expect_z(const QuantumState &state, std::size_t qubit);

/// <Z_i> for every wire, computed in a single pass over the amplitudes.
std::vector<double> expect_all_z(const QuantumState &state);

std::vector<double> measure_all_z(const CircuitSpec &spec, std::span<const double> x,
                                  std::span<const double> theta);

/// d<Z_i>/d theta_j by the two-term shift rule at +-pi/2. A slot used by
/// several gates sums the per-gate shifts, which is exact for RX/RY/RZ.
Jacobian param_shift_jacobian(const CircuitSpec &spec, std::span<const double> x,
                              std::span<const double> theta);

/// d<Z_i>/d x_k by the same shift rule applied to Encoding slots.
Jacobian encoding_shift_jacobian(const CircuitSpec &spec, std::span<const double> x,
                                 std::span<const double> theta);

} // namespace qvf::qsim
