#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sensopf/sensitivity.hpp"

namespace sensopf {

/// Feedforward network: rectifier hidden layers, identity output.
struct MlpModel {
    std::vector<int> layer_dims;   // [input, hidden..., output]
    std::vector<Matrix> weights;   // W_k maps layer k-1 to layer k
    std::vector<Vector> biases;
    std::uint64_t seed = 0;

    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    int layer_count() const { return static_cast<int>(weights.size()); }
    std::int64_t parameter_count() const;
};

/// He-style initialization: weights ~ N(0, 2/fan_in), biases zero.
/// Bitwise deterministic for a given seed.
MlpModel init_model(const std::vector<int>& layer_dims, std::uint64_t seed);

/// Network output for one input.
Vector forward(const MlpModel& model, const Vector& input);

/// Exact input Jacobian at the given point, computed by forward-mode
/// propagation of all input tangent directions. A unit whose pre-activation
/// is exactly zero counts as inactive.
Matrix input_jacobian(const MlpModel& model, const Vector& input);

/// Affine standardization of inputs and outputs. Scales at or below 1e-12
/// are clamped to 1 (constant features pass through unscaled); such features
/// are flagged so Jacobian targets drop their columns — the data carries no
/// variation along them, and the clamped scale would otherwise blow the
/// column up by 1/σ_x.
struct NormStats {
    Vector theta_mean, theta_scale;
    Vector x_mean, x_scale;
    Vector theta_constant;  // 1.0 where the training feature was constant

    static NormStats identity(int theta_dim, int x_dim);
    bool is_identity() const;
};

/// Population mean/stddev over the training records only.
NormStats compute_norm_stats(const std::vector<SensitivityRecord>& train);

Vector normalize_theta(const NormStats& s, const Vector& theta);
Vector denormalize_theta(const NormStats& s, const Vector& theta);
Vector normalize_x(const NormStats& s, const Vector& x);
Vector denormalize_x(const NormStats& s, const Vector& x);
/// J_normalized = Sx⁻¹ J Sθ with constant-feature columns zeroed, so the
/// Jacobian loss is posed in the same standardized space the values are
/// fitted in.
Matrix normalize_jacobian(const NormStats& s, const Matrix& J);
Matrix denormalize_jacobian(const NormStats& s, const Matrix& J);

/// A trained network bundled with its normalization, operating in raw units.
struct Predictor {
    MlpModel net;
    NormStats stats;

    Vector predict(const Vector& theta_raw) const;
    Matrix predict_jacobian(const Vector& theta_raw) const;
};

std::string predictor_to_json(const Predictor& p);
Predictor predictor_from_json(const std::string& text);
void save_predictor(const Predictor& p, const std::string& path);
Predictor load_predictor(const std::string& path);

}  // namespace sensopf
