#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sensopf/mlp.hpp"

using namespace sensopf;
using namespace sensopf::testing;

namespace {

MlpModel random_model(const std::vector<int>& dims, std::uint64_t seed) { return init_model(dims, seed); }

}  // namespace

TEST_CASE("init_model") {
    SUBCASE("deterministic for a given seed") {
        const MlpModel a = init_model({2, 3, 1}, 7);
        const MlpModel b = init_model({2, 3, 1}, 7);
        for (int k = 0; k < a.layer_count(); ++k) {
            CHECK((a.weights[k] - b.weights[k]).cwiseAbs().maxCoeff() == 0.0);
            CHECK(a.biases[k].cwiseAbs().maxCoeff() == 0.0);
        }
        const MlpModel c = init_model({2, 3, 1}, 8);
        CHECK((a.weights[0] - c.weights[0]).cwiseAbs().maxCoeff() > 0.0);
    }
    SUBCASE("parameter count") {
        const MlpModel m = init_model({4, 210, 210, 350, 5}, 1);
        CHECK(m.parameter_count() ==
              4 * 210 + 210 + 210 * 210 + 210 + 210 * 350 + 350 + 350 * 5 + 5);
    }
    SUBCASE("first-layer stddev approaches sqrt(2/fan_in)") {
        const int fan_in = 20;
        const MlpModel m = init_model({fan_in, 5000, 1}, 99);
        const double expect = std::sqrt(2.0 / fan_in);
        const Matrix& w = m.weights[0];
        const double mean = w.sum() / static_cast<double>(w.size());
        const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size());
        CHECK(std::sqrt(var) == doctest::Approx(expect).epsilon(0.02));
    }
    SUBCASE("bad dimensions") {
        CHECK_THROWS_AS(init_model({3}, 0), BadDimensions);
        CHECK_THROWS_AS(init_model({3, 0, 2}, 0), BadDimensions);
    }
}

TEST_CASE("forward") {
    SUBCASE("all-zero weights give zero output") {
        MlpModel m = init_model({3, 4, 2}, 0);
        for (auto& w : m.weights) w.setZero();
        CHECK(forward(m, Vector::Ones(3)).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("single linear layer is Wx + b") {
        MlpModel m = init_model({3, 2}, 5);
        m.biases[0] << 0.1, -0.2;
        Rng rng(2);
        const Vector in = random_vector(3, rng);
        CHECK((forward(m, in) - (m.weights[0] * in + m.biases[0])).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("matches the plain-loop oracle") {
        Rng rng(3);
        const MlpModel m = random_model({5, 17, 9, 4}, 11);
        for (int trial = 0; trial < 20; ++trial) {
            const Vector in = random_vector(5, rng);
            CHECK((forward(m, in) - forward_oracle(m, in)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SUBCASE("dimension mismatch") {
        const MlpModel m = random_model({5, 3}, 0);
        CHECK_THROWS_AS(forward(m, Vector::Zero(4)), DimensionMismatch);
    }
}

TEST_CASE("input_jacobian") {
    SUBCASE("single linear layer: exactly W") {
        const MlpModel m = random_model({4, 3}, 21);
        CHECK((input_jacobian(m, Vector::Zero(4)) - m.weights[0]).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("matches central differences") {
        const MlpModel m = random_model({6, 24, 16, 3}, 13);
        Rng rng(17);
        for (int trial = 0; trial < 100; ++trial) {
            const Vector in = random_vector(6, rng);
            const Matrix jac = input_jacobian(m, in);
            const Matrix fd = fd_input_jacobian(m, in);
            CHECK((jac - fd).cwiseAbs().maxCoeff() / (1.0 + jac.cwiseAbs().maxCoeff()) <= 1e-6);
        }
    }
    SUBCASE("a dead unit contributes nothing") {
        MlpModel m = init_model({2, 2, 1}, 3);
        m.weights[0] << 1.0, 0.0, 0.0, 1.0;
        m.biases[0] << -1.0, 0.0;  // unit 0 dead at the probe point
        m.weights[1] << 5.0, 7.0;
        const Vector in = (Vector(2) << 0.5, 0.5).finished();
        const Matrix jac = input_jacobian(m, in);
        CHECK(jac(0, 0) == 0.0);   // blocked by the dead unit
        CHECK(jac(0, 1) == 7.0);
    }
    SUBCASE("pre-activation exactly zero counts as inactive") {
        MlpModel m = init_model({1, 1, 1}, 3);
        m.weights[0] << 2.0;
        m.biases[0] << 0.0;
        m.weights[1] << 3.0;
        const Matrix jac = input_jacobian(m, Vector::Zero(1));
        CHECK(jac(0, 0) == 0.0);
    }
}

TEST_CASE("normalization") {
    SUBCASE("identity stats pass vectors through") {
        const NormStats s = NormStats::identity(3, 2);
        Rng rng(5);
        const Vector t = random_vector(3, rng);
        CHECK((normalize_theta(s, t) - t).cwiseAbs().maxCoeff() == 0.0);
        CHECK(s.is_identity());
    }
    SUBCASE("round trip is the identity to 1e-12") {
        Rng rng(6);
        std::vector<SensitivityRecord> records;
        for (int i = 0; i < 12; ++i) {
            SensitivityRecord r;
            r.theta = random_vector(4, rng, 3.0);
            r.x = random_vector(2, rng, 0.5);
            records.push_back(r);
        }
        const NormStats s = compute_norm_stats(records);
        for (const auto& r : records) {
            CHECK((denormalize_theta(s, normalize_theta(s, r.theta)) - r.theta).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((denormalize_x(s, normalize_x(s, r.x)) - r.x).cwiseAbs().maxCoeff() < 1e-12);
        }
        Matrix j = Matrix::Random(2, 4);
        CHECK((denormalize_jacobian(s, normalize_jacobian(s, j)) - j).cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("constant features clamp to unit scale") {
        std::vector<SensitivityRecord> records;
        for (int i = 0; i < 5; ++i) {
            SensitivityRecord r;
            r.theta = Vector::Constant(3, 2.5);  // zero variance
            r.x = Vector::Constant(1, static_cast<double>(i));
            records.push_back(r);
        }
        const NormStats s = compute_norm_stats(records);
        CHECK((s.theta_scale.array() == 1.0).all());
        CHECK(s.x_scale[0] > 0.0);
    }
    SUBCASE("fitting a linear target in normalized space equals fitting raw") {
        // least-squares on an exactly linear map, solved in both spaces
        Rng rng(8);
        const Matrix target = Matrix::Random(2, 3);
        const Vector shift = random_vector(2, rng);
        std::vector<SensitivityRecord> records;
        for (int i = 0; i < 30; ++i) {
            SensitivityRecord r;
            r.theta = random_vector(3, rng, 2.0);
            r.theta.array() += 1.0;
            r.x = target * r.theta + shift;
            records.push_back(r);
        }
        const NormStats s = compute_norm_stats(records);
        // assemble LS systems [θ;1] -> x in each space
        auto lstsq = [](const std::vector<Vector>& ins, const std::vector<Vector>& outs) {
            const int p = static_cast<int>(ins.front().size());
            Matrix a(static_cast<int>(ins.size()), p + 1);
            Matrix y(static_cast<int>(ins.size()), outs.front().size());
            for (std::size_t i = 0; i < ins.size(); ++i) {
                a.row(static_cast<int>(i)).head(p) = ins[i].transpose();
                a(static_cast<int>(i), p) = 1.0;
                y.row(static_cast<int>(i)) = outs[i].transpose();
            }
            return Matrix(a.colPivHouseholderQr().solve(y).transpose());  // (xdim) x (p+1)
        };
        std::vector<Vector> raw_in, raw_out, norm_in, norm_out;
        for (const auto& r : records) {
            raw_in.push_back(r.theta);
            raw_out.push_back(r.x);
            norm_in.push_back(normalize_theta(s, r.theta));
            norm_out.push_back(normalize_x(s, r.x));
        }
        const Matrix w_raw = lstsq(raw_in, raw_out);
        const Matrix w_norm = lstsq(norm_in, norm_out);
        Rng rng2(9);
        for (int trial = 0; trial < 10; ++trial) {
            Vector probe = random_vector(3, rng2, 2.0);
            Vector via_raw = w_raw.leftCols(3) * probe + w_raw.col(3);
            Vector tn = normalize_theta(s, probe);
            Vector via_norm = denormalize_x(s, Vector(w_norm.leftCols(3) * tn + w_norm.col(3)));
            CHECK((via_raw - via_norm).cwiseAbs().maxCoeff() <= 1e-8);
        }
        // the normalized-space Jacobian of the linear map is Sx⁻¹ M Sθ
        CHECK((normalize_jacobian(s, target) -
               Matrix(s.x_scale.cwiseInverse().asDiagonal() * target * s.theta_scale.asDiagonal()))
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("predictor JSON round trip is bit exact") {
    Rng rng(12);
    Predictor p;
    p.net = random_model({4, 8, 3}, 77);
    std::vector<SensitivityRecord> records;
    for (int i = 0; i < 6; ++i) {
        SensitivityRecord r;
        r.theta = random_vector(4, rng, 2.0);
        r.x = random_vector(3, rng);
        records.push_back(r);
    }
    p.stats = compute_norm_stats(records);

    const Predictor q = predictor_from_json(predictor_to_json(p));
    CHECK(q.net.layer_dims == p.net.layer_dims);
    for (int k = 0; k < p.net.layer_count(); ++k) {
        CHECK((p.net.weights[k] - q.net.weights[k]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((p.net.biases[k] - q.net.biases[k]).cwiseAbs().maxCoeff() == 0.0);
    }
    CHECK((p.stats.theta_mean - q.stats.theta_mean).cwiseAbs().maxCoeff() == 0.0);
    const Vector probe = random_vector(4, rng);
    CHECK((p.predict(probe) - q.predict(probe)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((p.predict_jacobian(probe) - q.predict_jacobian(probe)).cwiseAbs().maxCoeff() == 0.0);
}
