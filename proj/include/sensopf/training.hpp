#pragma once

#include <cstdint>
#include <vector>

#include "sensopf/mlp.hpp"

namespace sensopf {

enum class TrainMode { Plain, SensitivityInformed };

const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
    TrainMode mode = TrainMode::Plain;
    double jacobian_weight = 1.0;  // μ multiplying the Frobenius mismatch term
    double learning_rate = 0.01;
    int epochs = 1000;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::uint64_t seed = 0;   // minibatch shuffling only
    int batch_size = 0;       // 0 = full batch
    bool normalize = true;    // standardize θ/x (and rescale J targets) before fitting
};

/// Labeled samples sharing θ and x dimensions. Records without a Jacobian
/// (degenerate or value-only test samples) contribute value terms only.
struct TrainingSet {
    std::vector<SensitivityRecord> records;

    int size() const { return static_cast<int>(records.size()); }
    bool empty() const { return records.empty(); }
    int theta_dim() const;
    int x_dim() const;
    int degenerate_count() const;
    int full_count() const;  // records carrying a Jacobian
    void validate() const;
};

/// Plain: Σ_s ||x̂(θ_s) - x_s||².  Sensitivity-informed: adds
/// μ Σ_s ||Ĵ(θ_s) - J_s||_F² over the records that carry a Jacobian.
double loss(const MlpModel& model, const TrainingSet& batch, const TrainConfig& config);

struct GradientBuffer {
    std::vector<Matrix> dW;
    std::vector<Vector> db;

    void resize_like(const MlpModel& model);
    void set_zero();
};

/// Exact gradient of loss() in every weight and bias; returns the loss. The
/// Jacobian term is differentiated with the rectifier masks held fixed
/// (their weight-derivative vanishes almost everywhere).
double loss_gradient(const MlpModel& model, const TrainingSet& batch, const TrainConfig& config,
                     GradientBuffer& grad);

struct TrainHistory {
    std::vector<double> train_loss;    // per epoch, before the update
    std::vector<double> val_value_mse; // per epoch, raw units; filled when a validation set is given
};

/// Full-batch Adam (minibatches when batch_size > 0). Deterministic for fixed
/// seeds. `validation` must live in the same space as `data`; `denorm`
/// rescales the per-epoch validation MSE back to raw units when training in
/// normalized space. Throws NonFiniteLoss on divergence.
MlpModel train(const MlpModel& initial, const TrainingSet& data, const TrainConfig& config,
               TrainHistory* history = nullptr, const TrainingSet* validation = nullptr,
               const NormStats* denorm = nullptr);

/// Rescales records into standardized space (values, and Jacobians when present).
TrainingSet normalize_set(const NormStats& stats, const TrainingSet& raw);

struct FitResult {
    Predictor predictor;
    TrainHistory history;
    double train_seconds = 0.0;  // around the optimization loop only
};

/// High-level pipeline on raw-unit records: computes normalization stats from
/// the training set, trains, and returns a raw-unit predictor.
FitResult fit(const MlpModel& initial, const TrainingSet& raw_train, const TrainConfig& config,
              const TrainingSet* raw_validation = nullptr);

}  // namespace sensopf
