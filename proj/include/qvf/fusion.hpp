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
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "qvf/backbone.hpp"
#include "qvf/checkpoint.hpp"
#include "qvf/dataio.hpp"
#include "qvf/feature_cache.hpp"
#include "qvf/layers.hpp"
#include "qvf/metrics.hpp"
#include "qvf/quanv.hpp"

namespace qvf {

/// Baselines use a single branch; SHF, DHF and TSHF fuse both.
enum class Strategy { BaselineClassical, BaselineQuantum, SHF, DHF, TSHF };

const char *to_string(Strategy strategy);
Strategy strategy_from_string(std::string_view name);

// ---------------------------------------------------------------------------
// Fusion operators

struct EmbeddingPair {
    std::vector<double> h_q;
    std::vector<double> h_c;
};

/// h_q followed by h_c.
std::vector<double> concat_fuse(const EmbeddingPair &pair);

/// (gamma * h_q) followed by h_c.
std::vector<double> temp_fuse(const EmbeddingPair &pair, double gamma);

struct TempFuseGrads {
    std::vector<double> h_q; // gamma * upstream[0, d)
    std::vector<double> h_c; // upstream[d, 2d)
    double gamma = 0.0;      // <h_q, upstream[0, d)>
};

TempFuseGrads temp_fuse_backward(const EmbeddingPair &pair, double gamma,
                                 std::span<const double> upstream);

// ---------------------------------------------------------------------------
// Model

struct ModelConfig {
    Strategy strategy = Strategy::TSHF;
    QuanvConfig quanv;
    nn::BackboneSpec backbone = nn::BackboneSpec::scnn(128);
    std::size_t embed_dim = 128;
    std::vector<std::size_t> image_shape{1, 28, 28};
    /// Batch norm on each branch embedding before fusion (DHF/TSHF only).
    bool batch_norm = false;
    std::uint64_t seed = 0; // root of the weight-init sub-seeds
    nn::AdamConfig quantum_opt{1e-2};
    nn::AdamConfig classical_opt{1e-3};
    nn::AdamConfig handler_opt{1e-2};

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json &j);
};

/// Optimizer state for the circuit parameters, which live in QuanvState.
struct ThetaMoments {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;
};

class HybridModel {
  public:
    explicit HybridModel(ModelConfig config);

    [[nodiscard]] const ModelConfig &config() const { return config_; }
    [[nodiscard]] Strategy strategy() const { return config_.strategy; }
    [[nodiscard]] bool has_quantum() const;
    [[nodiscard]] bool has_classical() const;
    [[nodiscard]] bool is_fusion() const;
    [[nodiscard]] bool uses_batch_norm() const;
    /// Flattened quanvolution output length, n * H' * W'.
    [[nodiscard]] std::size_t quantum_feature_dim() const;
    [[nodiscard]] std::size_t handler_input_dim() const;
    [[nodiscard]] double gamma_value() const;

    QuanvState quanv_state;
    ThetaMoments theta_moments;
    nn::LayerParams q_proj; // quantum features -> d (fusion strategies)
    nn::Backbone classical;
    nn::LayerParams gamma; // one weight, TSHF only
    nn::LayerParams handler;
    nn::BatchNormState bn_q;
    nn::BatchNormState bn_c;

    /// Parameters in checkpoint order.
    [[nodiscard]] std::vector<NamedTensor> named_tensors() const;
    void load_tensors(const std::vector<NamedTensor> &tensors);
    /// SHA-256 over both feature-extraction branches (theta, projection,
    /// backbone), i.e. everything upstream of the fusion point.
    [[nodiscard]] std::string branch_hash() const;
    [[nodiscard]] std::string config_hash() const;

  private:
    ModelConfig config_;
};

struct ParamCount {
    std::size_t classical = 0;
    std::size_t quantum = 0; // trainable circuit parameters only
    [[nodiscard]] std::size_t total() const { return classical + quantum; }
};

ParamCount count_params(const HybridModel &model);

// ---------------------------------------------------------------------------
// Training

class NonFiniteLossError : public std::runtime_error {
  public:
    NonFiniteLossError(std::size_t batch_index, double loss);
    [[nodiscard]] std::size_t batch_index() const { return batch_index_; }

  private:
    std::size_t batch_index_;
};

struct Batch {
    std::vector<const Tensor *> images;
    std::vector<int> labels;
    /// Optional precomputed flattened quanvolution outputs (Fixed mode only).
    std::vector<const std::vector<double> *> quantum_features;
    std::size_t index = 0;

    [[nodiscard]] std::size_t size() const { return labels.size(); }
};

Batch make_batch(const data::LabeledDataset &dataset, std::span<const std::size_t> indices,
                 const std::vector<std::vector<double>> *quantum_cache = nullptr,
                 std::size_t batch_index = 0);

struct ModelGrads {
    std::vector<double> theta;
    nn::LayerGrads q_proj;
    nn::BackboneGrads classical;
    nn::LayerGrads gamma;
    nn::LayerGrads handler;
    nn::LayerGrads bn_q;
    nn::LayerGrads bn_c;

    static ModelGrads zeros_like(const HybridModel &model);
    ModelGrads &operator+=(const ModelGrads &other);
    ModelGrads &operator*=(double s);
};

struct LossAndGrads {
    double loss = 0.0; // batch mean
    ModelGrads grads;  // gradient of the batch-mean loss
};

/// Training-mode forward and backward without touching any parameter.
LossAndGrads compute_loss_and_grads(const HybridModel &model, const Batch &batch);

/// Training-mode batch-mean loss only (used by the finite-difference checks).
double batch_loss(const HybridModel &model, const Batch &batch);

struct StepResult {
    double loss = 0.0;
    ModelGrads grads;
};

/// One Adam step on every trainable group: handler and gamma with
/// handler_opt, backbone with classical_opt, projection and theta with
/// quantum_opt. Fixed-mode theta is never touched.
StepResult train_step(HybridModel &model, const Batch &batch);
StepResult dhf_step(HybridModel &model, const Batch &batch);
StepResult tshf_step(HybridModel &model, const Batch &batch);

/// Flattened quanvolution outputs per image; reusable across epochs when
/// the circuit is frozen.
std::vector<std::vector<double>> precompute_quantum_features(const HybridModel &model,
                                                             const data::LabeledDataset &data);

/// Positive-class softmax probability per image (inference-mode batch norm).
std::vector<double> predict_scores(const HybridModel &model, const data::LabeledDataset &data,
                                   const std::vector<std::vector<double>> *quantum_cache = nullptr);

metrics::MetricsReport evaluate(const HybridModel &model, const data::LabeledDataset &data,
                                std::uint64_t seed = 0,
                                const std::vector<std::vector<double>> *quantum_cache = nullptr);

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_acc = 0.0;
    double val_f1 = 0.0;
    std::optional<double> gamma;
};

struct TrainOptions {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    std::size_t patience = 10;
    bool early_stopping = true;
    std::uint64_t shuffle_seed = 0;
    /// Called after every epoch (including epoch 0, before any update).
    std::function<void(const EpochLog &, const HybridModel &)> on_epoch;
};

struct TrainResult {
    std::vector<EpochLog> history;
    std::size_t best_epoch = 0;
    std::optional<HybridModel> best; // model at best validation F1
};

/// Mini-batch training of a baseline, DHF or TSHF model. Epoch 0 records the
/// untouched model. Early stopping watches validation F1.
TrainResult train_model(HybridModel &model, const data::LabeledDataset &train,
                        const data::LabeledDataset *val, const TrainOptions &options);

// ---------------------------------------------------------------------------
// Static fusion

/// Seeds, theta, branch hash and config hash for a feature cache.
nlohmann::json cache_provenance(const HybridModel &model, const nlohmann::json &seeds);

/// h_q = projection(quanv(x)), h_c = backbone(x) for every image.
FeatureCache extract_features(const HybridModel &model, const data::LabeledDataset &data,
                              const nlohmann::json &seeds = nlohmann::json::object());

/// Trains a classical baseline with the model's backbone spec and seed, then
/// installs the trained backbone into model.
TrainResult pretrain_classical(HybridModel &model, const data::LabeledDataset &train,
                               const data::LabeledDataset *val, const TrainOptions &options);

struct ShfResult {
    std::vector<EpochLog> history;
    std::size_t best_epoch = 0;
    nn::LayerParams best_handler;
    std::map<std::string, metrics::MetricsReport> reports; // per split, final handler
};

/// Handler-only training on cached embeddings. Throws when a cache's branch
/// hash does not match the model. Branch parameters are never modified.
ShfResult shf_run(HybridModel &model, const FeatureCache &train, const FeatureCache *val,
                  const std::vector<const FeatureCache *> &report_splits,
                  const TrainOptions &options);

/// Positive-class probability from the handler on cached embeddings.
std::vector<double> handler_scores(const HybridModel &model, const FeatureCache &cache);

} // namespace qvf
