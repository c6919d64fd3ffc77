#include "sensopf/mlp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "sensopf/rng.hpp"

namespace sensopf {

std::int64_t MlpModel::parameter_count() const {
    std::int64_t n = 0;
    for (int k = 0; k < layer_count(); ++k) n += weights[k].size() + biases[k].size();
    return n;
}

MlpModel init_model(const std::vector<int>& layer_dims, std::uint64_t seed) {
    if (layer_dims.size() < 2) throw BadDimensions("a model needs at least input and output layers");
    for (int d : layer_dims)
        if (d < 1) throw BadDimensions("layer dimensions must be positive");

    MlpModel model;
    model.layer_dims = layer_dims;
    model.seed = seed;
    Rng rng(seed);
    for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
        const int fan_in = layer_dims[k];
        const int fan_out = layer_dims[k + 1];
        const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
        Matrix w(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) w(r, c) = rng.normal(0.0, stddev);
        model.weights.push_back(std::move(w));
        model.biases.push_back(Vector::Zero(fan_out));
    }
    return model;
}

Vector forward(const MlpModel& model, const Vector& input) {
    if (input.size() != model.input_dim()) throw DimensionMismatch("input has wrong length");
    Vector a = input;
    const int last = model.layer_count() - 1;
    for (int k = 0; k <= last; ++k) {
        Vector z = model.weights[k] * a + model.biases[k];
        a = (k < last) ? Vector(z.cwiseMax(0.0)) : z;
    }
    return a;
}

Matrix input_jacobian(const MlpModel& model, const Vector& input) {
    if (input.size() != model.input_dim()) throw DimensionMismatch("input has wrong length");
    Vector a = input;
    Matrix tangent = Matrix::Identity(model.input_dim(), model.input_dim());
    const int last = model.layer_count() - 1;
    for (int k = 0; k <= last; ++k) {
        const Vector z = model.weights[k] * a + model.biases[k];
        Matrix t = model.weights[k] * tangent;
        if (k < last) {
            for (Eigen::Index r = 0; r < z.size(); ++r)
                if (!(z[r] > 0.0)) t.row(r).setZero();
            a = z.cwiseMax(0.0);
        } else {
            a = z;
        }
        tangent = std::move(t);
    }
    return tangent;
}

NormStats NormStats::identity(int theta_dim, int x_dim) {
    NormStats s;
    s.theta_mean = Vector::Zero(theta_dim);
    s.theta_scale = Vector::Ones(theta_dim);
    s.x_mean = Vector::Zero(x_dim);
    s.x_scale = Vector::Ones(x_dim);
    s.theta_constant = Vector::Zero(theta_dim);
    return s;
}

bool NormStats::is_identity() const {
    return theta_mean.isZero(0.0) && x_mean.isZero(0.0) &&
           (theta_scale.array() == 1.0).all() && (x_scale.array() == 1.0).all();
}

NormStats compute_norm_stats(const std::vector<SensitivityRecord>& train) {
    if (train.empty()) throw EmptyBatch("cannot compute normalization from an empty set");
    const Eigen::Index p = train.front().theta.size();
    const Eigen::Index nx = train.front().x.size();
    const double inv_n = 1.0 / static_cast<double>(train.size());

    NormStats s;
    s.theta_mean = Vector::Zero(p);
    s.x_mean = Vector::Zero(nx);
    for (const SensitivityRecord& r : train) {
        if (r.theta.size() != p || r.x.size() != nx)
            throw DimensionMismatch("records disagree on dimensions");
        s.theta_mean += r.theta;
        s.x_mean += r.x;
    }
    s.theta_mean *= inv_n;
    s.x_mean *= inv_n;

    Vector var_theta = Vector::Zero(p), var_x = Vector::Zero(nx);
    for (const SensitivityRecord& r : train) {
        var_theta += (r.theta - s.theta_mean).cwiseAbs2();
        var_x += (r.x - s.x_mean).cwiseAbs2();
    }
    s.theta_scale = (var_theta * inv_n).cwiseSqrt();
    s.x_scale = (var_x * inv_n).cwiseSqrt();
    s.theta_constant = Vector::Zero(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        if (s.theta_scale[i] <= 1e-12) {  // constant feature
            s.theta_scale[i] = 1.0;
            s.theta_constant[i] = 1.0;
        }
    }
    for (Eigen::Index i = 0; i < nx; ++i)
        if (s.x_scale[i] <= 1e-12) s.x_scale[i] = 1.0;
    return s;
}

Vector normalize_theta(const NormStats& s, const Vector& theta) {
    if (theta.size() != s.theta_mean.size()) throw DimensionMismatch("theta has wrong length");
    return (theta - s.theta_mean).cwiseQuotient(s.theta_scale);
}

Vector denormalize_theta(const NormStats& s, const Vector& theta) {
    if (theta.size() != s.theta_mean.size()) throw DimensionMismatch("theta has wrong length");
    return theta.cwiseProduct(s.theta_scale) + s.theta_mean;
}

Vector normalize_x(const NormStats& s, const Vector& x) {
    if (x.size() != s.x_mean.size()) throw DimensionMismatch("x has wrong length");
    return (x - s.x_mean).cwiseQuotient(s.x_scale);
}

Vector denormalize_x(const NormStats& s, const Vector& x) {
    if (x.size() != s.x_mean.size()) throw DimensionMismatch("x has wrong length");
    return x.cwiseProduct(s.x_scale) + s.x_mean;
}

Matrix normalize_jacobian(const NormStats& s, const Matrix& J) {
    if (J.rows() != s.x_mean.size() || J.cols() != s.theta_mean.size())
        throw DimensionMismatch("jacobian has wrong shape");
    Matrix out = s.x_scale.cwiseInverse().asDiagonal() * J * s.theta_scale.asDiagonal();
    if (s.theta_constant.size() == J.cols())
        for (Eigen::Index c = 0; c < out.cols(); ++c)
            if (s.theta_constant[c] != 0.0) out.col(c).setZero();
    return out;
}

Matrix denormalize_jacobian(const NormStats& s, const Matrix& J) {
    if (J.rows() != s.x_mean.size() || J.cols() != s.theta_mean.size())
        throw DimensionMismatch("jacobian has wrong shape");
    return s.x_scale.asDiagonal() * J * s.theta_scale.cwiseInverse().asDiagonal();
}

Vector Predictor::predict(const Vector& theta_raw) const {
    return denormalize_x(stats, forward(net, normalize_theta(stats, theta_raw)));
}

Matrix Predictor::predict_jacobian(const Vector& theta_raw) const {
    return denormalize_jacobian(stats, input_jacobian(net, normalize_theta(stats, theta_raw)));
}

namespace {

using nlohmann::json;

json vec_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector vec_from(const json& j) {
    const auto data = j.get<std::vector<double>>();
    Vector v(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) v[static_cast<Eigen::Index>(i)] = data[i];
    return v;
}

}  // namespace

std::string predictor_to_json(const Predictor& p) {
    json j;
    j["format_version"] = 1;
    j["layer_dims"] = p.net.layer_dims;
    j["seed"] = p.net.seed;
    j["weights"] = json::array();
    for (const Matrix& w : p.net.weights) {
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(w.size()));
        for (Eigen::Index r = 0; r < w.rows(); ++r)
            for (Eigen::Index c = 0; c < w.cols(); ++c) data.push_back(w(r, c));
        j["weights"].push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"data", data}});
    }
    j["biases"] = json::array();
    for (const Vector& b : p.net.biases) j["biases"].push_back(vec_json(b));
    j["normalization"] = {{"theta_mean", vec_json(p.stats.theta_mean)},
                          {"theta_scale", vec_json(p.stats.theta_scale)},
                          {"theta_constant", vec_json(p.stats.theta_constant)},
                          {"x_mean", vec_json(p.stats.x_mean)},
                          {"x_scale", vec_json(p.stats.x_scale)}};
    return j.dump();
}

Predictor predictor_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw SchemaError("model file is not valid JSON");
    Predictor p;
    p.net.layer_dims = j.at("layer_dims").get<std::vector<int>>();
    p.net.seed = j.value("seed", 0ull);
    for (const auto& wj : j.at("weights")) {
        const Eigen::Index rows = wj.at("rows").get<Eigen::Index>();
        const Eigen::Index cols = wj.at("cols").get<Eigen::Index>();
        const auto data = wj.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols)
            throw SchemaError("weight data length does not match dimensions");
        Matrix w(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) w(r, c) = data[static_cast<std::size_t>(r * cols + c)];
        p.net.weights.push_back(std::move(w));
    }
    for (const auto& bj : j.at("biases")) p.net.biases.push_back(vec_from(bj));
    if (p.net.weights.size() + 1 != p.net.layer_dims.size() || p.net.biases.size() != p.net.weights.size())
        throw SchemaError("layer_dims and weights disagree");
    const auto& nj = j.at("normalization");
    p.stats.theta_mean = vec_from(nj.at("theta_mean"));
    p.stats.theta_scale = vec_from(nj.at("theta_scale"));
    p.stats.x_mean = vec_from(nj.at("x_mean"));
    p.stats.x_scale = vec_from(nj.at("x_scale"));
    p.stats.theta_constant = nj.contains("theta_constant") ? vec_from(nj.at("theta_constant"))
                                                           : Vector::Zero(p.stats.theta_mean.size());
    return p;
}

void save_predictor(const Predictor& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write model file: " + path);
    out << predictor_to_json(p) << "\n";
}

Predictor load_predictor(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open model file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return predictor_from_json(buf.str());
}

}  // namespace sensopf
