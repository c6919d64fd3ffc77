#include "sensopf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "sensopf/rng.hpp"

namespace sensopf {

const char* to_string(TrainMode mode) {
    return mode == TrainMode::Plain ? "plain" : "si";
}

TrainMode train_mode_from_string(const std::string& name) {
    if (name == "plain") return TrainMode::Plain;
    if (name == "si" || name == "sensitivity-informed") return TrainMode::SensitivityInformed;
    throw BadConfig("unknown training mode '" + name + "'");
}

int TrainingSet::theta_dim() const {
    if (records.empty()) throw EmptyBatch("training set is empty");
    return static_cast<int>(records.front().theta.size());
}

int TrainingSet::x_dim() const {
    if (records.empty()) throw EmptyBatch("training set is empty");
    return static_cast<int>(records.front().x.size());
}

int TrainingSet::degenerate_count() const {
    int n = 0;
    for (const auto& r : records) n += r.degenerate ? 1 : 0;
    return n;
}

int TrainingSet::full_count() const {
    int n = 0;
    for (const auto& r : records) n += r.jacobian.has_value() ? 1 : 0;
    return n;
}

void TrainingSet::validate() const {
    if (records.empty()) return;
    const Eigen::Index p = records.front().theta.size();
    const Eigen::Index nx = records.front().x.size();
    for (const auto& r : records) {
        if (r.theta.size() != p || r.x.size() != nx)
            throw DimensionMismatch("records disagree on θ/x dimensions");
        if (r.jacobian && (r.jacobian->rows() != nx || r.jacobian->cols() != p))
            throw DimensionMismatch("a record's Jacobian has the wrong shape");
    }
}

namespace {

// Activations, pre-activation masks, and the output of one batched forward
// pass. Column s of every matrix belongs to sample s.
struct ForwardPass {
    std::vector<Matrix> activations;  // activations[k]: layer k output (k=0 is the input)
    std::vector<Matrix> masks;        // masks[k]: 0/1 rectifier pattern of hidden layer k+1
};

ForwardPass run_forward(const MlpModel& model, const Matrix& inputs) {
    ForwardPass fp;
    const int last = model.layer_count() - 1;
    fp.activations.resize(model.layer_count() + 1);
    fp.masks.resize(std::max(0, last));
    fp.activations[0] = inputs;
    for (int k = 0; k <= last; ++k) {
        Matrix z = model.weights[k] * fp.activations[k];
        z.colwise() += model.biases[k];
        if (k < last) {
            fp.masks[k] = (z.array() > 0.0).cast<double>();
            fp.activations[k + 1] = z.cwiseProduct(fp.masks[k]);
        } else {
            fp.activations[k + 1] = std::move(z);
        }
    }
    return fp;
}

Matrix stack_inputs(const TrainingSet& batch, int dim) {
    Matrix m(dim, batch.size());
    for (int s = 0; s < batch.size(); ++s) m.col(s) = batch.records[static_cast<std::size_t>(s)].theta;
    return m;
}

Matrix stack_targets(const TrainingSet& batch, int dim) {
    Matrix m(dim, batch.size());
    for (int s = 0; s < batch.size(); ++s) m.col(s) = batch.records[static_cast<std::size_t>(s)].x;
    return m;
}

// Per-sample network Jacobian from an already-computed forward pass.
// Accumulated output-side (rank = output dim), which is the cheap direction
// at these shapes; identical to input_jacobian() up to rounding.
Matrix jacobian_reverse(const MlpModel& model, const ForwardPass& fp, int sample) {
    const int last = model.layer_count() - 1;
    Matrix lm = model.weights[static_cast<std::size_t>(last)];  // L_k Σ_k built top-down
    for (int k = last - 1; k >= 1; --k) {
        for (Eigen::Index c = 0; c < lm.cols(); ++c)
            if (fp.masks[static_cast<std::size_t>(k)](c, sample) == 0.0) lm.col(c).setZero();
        lm = lm * model.weights[static_cast<std::size_t>(k)];
    }
    if (last >= 1) {
        for (Eigen::Index c = 0; c < lm.cols(); ++c)
            if (fp.masks[0](c, sample) == 0.0) lm.col(c).setZero();
        lm = lm * model.weights[0];
    }
    return lm;
}

void check_model_batch(const MlpModel& model, const TrainingSet& batch) {
    if (batch.empty()) throw EmptyBatch("loss needs a nonempty batch");
    batch.validate();
    if (batch.theta_dim() != model.input_dim() || batch.x_dim() != model.output_dim())
        throw DimensionMismatch("batch dimensions do not match the model");
}

}  // namespace

double loss(const MlpModel& model, const TrainingSet& batch, const TrainConfig& config) {
    check_model_batch(model, batch);
    const Matrix inputs = stack_inputs(batch, model.input_dim());
    const Matrix targets = stack_targets(batch, model.output_dim());
    const ForwardPass fp = run_forward(model, inputs);
    double total = (fp.activations.back() - targets).squaredNorm();
    if (config.mode == TrainMode::SensitivityInformed && config.jacobian_weight != 0.0) {
        for (int s = 0; s < batch.size(); ++s) {
            const auto& rec = batch.records[static_cast<std::size_t>(s)];
            if (!rec.jacobian || rec.degenerate) continue;
            total += config.jacobian_weight * (jacobian_reverse(model, fp, s) - *rec.jacobian).squaredNorm();
        }
    }
    return total;
}

void GradientBuffer::resize_like(const MlpModel& model) {
    dW.resize(model.weights.size());
    db.resize(model.biases.size());
    for (std::size_t k = 0; k < model.weights.size(); ++k) {
        dW[k].resize(model.weights[k].rows(), model.weights[k].cols());
        db[k].resize(model.biases[k].size());
    }
}

void GradientBuffer::set_zero() {
    for (auto& m : dW) m.setZero();
    for (auto& v : db) v.setZero();
}

double loss_gradient(const MlpModel& model, const TrainingSet& batch, const TrainConfig& config,
                     GradientBuffer& grad) {
    check_model_batch(model, batch);
    grad.resize_like(model);
    grad.set_zero();

    const int last = model.layer_count() - 1;
    const Matrix inputs = stack_inputs(batch, model.input_dim());
    const Matrix targets = stack_targets(batch, model.output_dim());
    const ForwardPass fp = run_forward(model, inputs);

    // Value term, all samples at once.
    double total = (fp.activations.back() - targets).squaredNorm();
    Matrix delta = 2.0 * (fp.activations.back() - targets);
    for (int k = last; k >= 0; --k) {
        grad.dW[static_cast<std::size_t>(k)] += delta * fp.activations[static_cast<std::size_t>(k)].transpose();
        grad.db[static_cast<std::size_t>(k)] += delta.rowwise().sum();
        if (k > 0) delta = (model.weights[static_cast<std::size_t>(k)].transpose() * delta).cwiseProduct(fp.masks[static_cast<std::size_t>(k - 1)]);
    }

    if (config.mode != TrainMode::SensitivityInformed || config.jacobian_weight == 0.0) return total;

    // Jacobian term. With the rectifier masks fixed, the network Jacobian is
    //   T = W_K Σ_{K-1} W_{K-1} ... Σ_1 W_1,
    // and each weight appears once in the product, so
    //   ∂/∂W_k ||T - J*||_F² = (L_k Σ_k)' G T_{k-1}'   with   G = 2μ(T - J*),
    // where L_k collects the factors above layer k and T_{k-1} the tangent
    // below it. Both recursions carry only output-dim many rows per sample;
    // samples are stacked along that dimension so every step is one GEMM.
    std::vector<int> tracked;
    for (int s = 0; s < batch.size(); ++s) {
        const auto& rec = batch.records[static_cast<std::size_t>(s)];
        if (rec.jacobian && !rec.degenerate) tracked.push_back(s);
    }
    if (tracked.empty()) return total;

    const int nx = model.output_dim();
    const double mu = config.jacobian_weight;

    if (last == 0) {  // single linear layer: T = W exactly
        for (int s : tracked) {
            const Matrix diff = model.weights[0] - *batch.records[static_cast<std::size_t>(s)].jacobian;
            total += mu * diff.squaredNorm();
            grad.dW[0] += 2.0 * mu * diff;
        }
        return total;
    }

    const int width = static_cast<int>(tracked.size()) * nx;
    auto mask_block_cols = [&](Matrix& m, int hidden_layer) {
        const Matrix& mask = fp.masks[static_cast<std::size_t>(hidden_layer)];
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (std::size_t i = 0; i < tracked.size(); ++i)
                if (mask(c, tracked[i]) == 0.0)
                    m.block(static_cast<Eigen::Index>(i) * nx, c, nx, 1).setZero();
    };
    auto mask_block_rows = [&](Matrix& m, int hidden_layer) {
        const Matrix& mask = fp.masks[static_cast<std::size_t>(hidden_layer)];
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (std::size_t i = 0; i < tracked.size(); ++i)
                if (mask(r, tracked[i]) == 0.0)
                    m.block(r, static_cast<Eigen::Index>(i) * nx, 1, nx).setZero();
    };

    // Downward chain, rows blocked by sample: lm[k] = L_k Σ_k, ending in the
    // stacked network Jacobians.
    std::vector<Matrix> lm(static_cast<std::size_t>(last));
    Matrix chain(width, model.layer_dims[static_cast<std::size_t>(last)]);
    for (std::size_t i = 0; i < tracked.size(); ++i)
        chain.middleRows(static_cast<Eigen::Index>(i) * nx, nx) = model.weights[static_cast<std::size_t>(last)];
    for (int k = last - 1; k >= 0; --k) {
        mask_block_cols(chain, k);
        lm[static_cast<std::size_t>(k)] = chain;
        chain = chain * model.weights[static_cast<std::size_t>(k)];
    }

    Matrix g_stack(width, model.input_dim());
    for (std::size_t i = 0; i < tracked.size(); ++i) {
        const auto& rec = batch.records[static_cast<std::size_t>(tracked[i])];
        const Matrix diff = chain.middleRows(static_cast<Eigen::Index>(i) * nx, nx) - *rec.jacobian;
        total += mu * diff.squaredNorm();
        g_stack.middleRows(static_cast<Eigen::Index>(i) * nx, nx) = 2.0 * mu * diff;
    }

    // Upward chain, columns blocked by sample: R_k = Σ_k W_k R_{k-1} with
    // R_0 = G'. The gradient of layer k is lm[k]' R_{k-1}', block sums
    // falling out of the stacked product.
    Matrix rstack = g_stack.transpose();
    for (int k = 0; k < last; ++k) {
        grad.dW[static_cast<std::size_t>(k)] += lm[static_cast<std::size_t>(k)].transpose() * rstack.transpose();
        rstack = model.weights[static_cast<std::size_t>(k)] * rstack;
        mask_block_rows(rstack, k);
    }
    for (std::size_t i = 0; i < tracked.size(); ++i)
        grad.dW[static_cast<std::size_t>(last)] +=
            rstack.middleCols(static_cast<Eigen::Index>(i) * nx, nx).transpose();

    return total;
}

namespace {

void apply_adam_step(MlpModel& model, const GradientBuffer& grad, GradientBuffer& m1, GradientBuffer& m2,
                     const TrainConfig& cfg, long step) {
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < model.weights.size(); ++k) {
        m1.dW[k] = cfg.beta1 * m1.dW[k] + (1.0 - cfg.beta1) * grad.dW[k];
        m2.dW[k] = cfg.beta2 * m2.dW[k] + (1.0 - cfg.beta2) * grad.dW[k].cwiseAbs2();
        model.weights[k].array() -= cfg.learning_rate * (m1.dW[k].array() / c1) /
                                    ((m2.dW[k].array() / c2).sqrt() + cfg.adam_epsilon);
        m1.db[k] = cfg.beta1 * m1.db[k] + (1.0 - cfg.beta1) * grad.db[k];
        m2.db[k] = cfg.beta2 * m2.db[k] + (1.0 - cfg.beta2) * grad.db[k].cwiseAbs2();
        model.biases[k].array() -= cfg.learning_rate * (m1.db[k].array() / c1) /
                                   ((m2.db[k].array() / c2).sqrt() + cfg.adam_epsilon);
    }
}

}  // namespace

MlpModel train(const MlpModel& initial, const TrainingSet& data, const TrainConfig& config,
               TrainHistory* history, const TrainingSet* validation, const NormStats* denorm) {
    if (data.empty()) throw EmptyBatch("train needs a nonempty dataset");
    check_model_batch(initial, data);
    if (!(config.learning_rate > 0.0)) throw BadConfig("learning rate must be positive");
    if (config.epochs < 0) throw BadConfig("epochs must be nonnegative");
    if (config.jacobian_weight < 0.0) throw BadConfig("jacobian weight must be nonnegative");

    MlpModel model = initial;
    GradientBuffer grad;
    grad.resize_like(model);
    GradientBuffer m1 = grad, m2 = grad;
    for (auto& w : m1.dW) w.setZero();
    for (auto& b : m1.db) b.setZero();
    for (auto& w : m2.dW) w.setZero();
    for (auto& b : m2.db) b.setZero();

    Matrix val_inputs, val_targets;
    Vector val_scale;
    if (validation && !validation->empty()) {
        val_inputs = stack_inputs(*validation, model.input_dim());
        val_targets = stack_targets(*validation, model.output_dim());
        val_scale = denorm ? denorm->x_scale : Vector::Ones(model.output_dim());
    }

    std::vector<int> order(static_cast<std::size_t>(data.size()));
    std::iota(order.begin(), order.end(), 0);
    const int batch_size = config.batch_size > 0 ? std::min(config.batch_size, data.size()) : data.size();

    long step = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        if (batch_size == data.size()) {
            epoch_loss = loss_gradient(model, data, config, grad);
            if (!std::isfinite(epoch_loss)) throw NonFiniteLoss("training loss diverged", epoch);
            ++step;
            apply_adam_step(model, grad, m1, m2, config, step);
        } else {
            Rng rng(config.seed ^ (0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[rng.below(i)]);
            for (int begin = 0; begin < data.size(); begin += batch_size) {
                TrainingSet chunk;
                const int end = std::min(begin + batch_size, data.size());
                for (int i = begin; i < end; ++i)
                    chunk.records.push_back(data.records[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
                const double chunk_loss = loss_gradient(model, chunk, config, grad);
                if (!std::isfinite(chunk_loss)) throw NonFiniteLoss("training loss diverged", epoch);
                epoch_loss += chunk_loss;
                ++step;
                apply_adam_step(model, grad, m1, m2, config, step);
            }
        }
        if (history) {
            history->train_loss.push_back(epoch_loss);
            if (val_inputs.size() > 0) {
                const ForwardPass vp = run_forward(model, val_inputs);
                const Matrix err = val_scale.asDiagonal() * (vp.activations.back() - val_targets);
                history->val_value_mse.push_back(err.squaredNorm() / static_cast<double>(val_inputs.cols()));
            }
        }
    }
    return model;
}

TrainingSet normalize_set(const NormStats& stats, const TrainingSet& raw) {
    TrainingSet out;
    out.records.reserve(raw.records.size());
    for (const SensitivityRecord& r : raw.records) {
        SensitivityRecord n = r;
        n.theta = normalize_theta(stats, r.theta);
        n.x = normalize_x(stats, r.x);
        if (r.jacobian) n.jacobian = normalize_jacobian(stats, *r.jacobian);
        out.records.push_back(std::move(n));
    }
    return out;
}

FitResult fit(const MlpModel& initial, const TrainingSet& raw_train, const TrainConfig& config,
              const TrainingSet* raw_validation) {
    if (raw_train.empty()) throw EmptyBatch("fit needs a nonempty training set");
    raw_train.validate();

    FitResult result;
    result.predictor.stats = config.normalize
                                 ? compute_norm_stats(raw_train.records)
                                 : NormStats::identity(raw_train.theta_dim(), raw_train.x_dim());
    const TrainingSet train_set = normalize_set(result.predictor.stats, raw_train);
    TrainingSet val_set;
    if (raw_validation && !raw_validation->empty())
        val_set = normalize_set(result.predictor.stats, *raw_validation);

    const auto started = std::chrono::steady_clock::now();
    result.predictor.net = train(initial, train_set, config, &result.history,
                                 val_set.empty() ? nullptr : &val_set, &result.predictor.stats);
    result.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return result;
}

}  // namespace sensopf
