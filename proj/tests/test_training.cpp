#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sensopf/training.hpp"

using namespace sensopf;
using namespace sensopf::testing;

namespace {

// Batch of well-scaled samples with Jacobian targets.
TrainingSet random_batch(int count, int theta_dim, int x_dim, std::uint64_t seed,
                         bool with_jacobians = true) {
    Rng rng(seed);
    TrainingSet set;
    for (int i = 0; i < count; ++i) {
        SensitivityRecord r;
        r.theta = random_vector(theta_dim, rng);
        r.x = random_vector(x_dim, rng);
        if (with_jacobians) {
            Matrix j(x_dim, theta_dim);
            for (int a = 0; a < x_dim; ++a)
                for (int b = 0; b < theta_dim; ++b) j(a, b) = rng.normal();
            r.jacobian = j;
        }
        set.records.push_back(r);
    }
    return set;
}

TrainConfig si_config() {
    TrainConfig cfg;
    cfg.mode = TrainMode::SensitivityInformed;
    return cfg;
}

}  // namespace

TEST_CASE("loss closed forms") {
    SUBCASE("a perfect linear model has zero loss in both modes") {
        MlpModel m = init_model({3, 2}, 0);
        TrainingSet set;
        Rng rng(1);
        for (int i = 0; i < 4; ++i) {
            SensitivityRecord r;
            r.theta = random_vector(3, rng);
            r.x = m.weights[0] * r.theta;
            r.jacobian = m.weights[0];
            set.records.push_back(r);
        }
        TrainConfig cfg;
        CHECK(loss(m, set, cfg) <= 1e-24);
        CHECK(loss(m, set, si_config()) <= 1e-24);
    }
    SUBCASE("linear model, one sample: ||Wθ-x||² + μ||W-J||²_F") {
        const MlpModel m = init_model({3, 2}, 4);
        Rng rng(2);
        SensitivityRecord r;
        r.theta = random_vector(3, rng);
        r.x = random_vector(2, rng);
        r.jacobian = Matrix::Random(2, 3);
        TrainingSet set;
        set.records.push_back(r);

        TrainConfig cfg = si_config();
        cfg.jacobian_weight = 0.7;
        const double expect = (m.weights[0] * r.theta - r.x).squaredNorm() +
                              0.7 * (m.weights[0] - *r.jacobian).squaredNorm();
        CHECK(loss(m, set, cfg) == doctest::Approx(expect).epsilon(1e-12));

        TrainConfig plain;
        CHECK(loss(m, set, plain) ==
              doctest::Approx((m.weights[0] * r.theta - r.x).squaredNorm()).epsilon(1e-12));
    }
    SUBCASE("random batch matches a per-sample summation oracle") {
        const MlpModel m = init_model({4, 10, 3}, 9);
        const TrainingSet set = random_batch(6, 4, 3, 77);
        TrainConfig cfg = si_config();
        cfg.jacobian_weight = 1.3;
        double expect = 0.0;
        for (const auto& r : set.records) {
            expect += (forward(m, r.theta) - r.x).squaredNorm();
            expect += 1.3 * (input_jacobian(m, r.theta) - *r.jacobian).squaredNorm();
        }
        CHECK(loss(m, set, cfg) == doctest::Approx(expect).epsilon(1e-10));
    }
    SUBCASE("empty batch throws") {
        const MlpModel m = init_model({2, 1}, 0);
        TrainingSet set;
        TrainConfig cfg;
        CHECK_THROWS_AS(loss(m, set, cfg), EmptyBatch);
    }
    SUBCASE("SI loss dominates the plain loss, equality iff the Jacobian term vanishes") {
        const MlpModel m = init_model({4, 6, 2}, 30);
        const TrainingSet set = random_batch(5, 4, 2, 31);
        TrainConfig plain;
        TrainConfig si = si_config();
        CHECK(loss(m, set, si) >= loss(m, set, plain));
        // equality when every record's Jacobian matches the network's
        TrainingSet matched = set;
        for (auto& r : matched.records) r.jacobian = input_jacobian(m, r.theta);
        CHECK(loss(m, matched, si) == doctest::Approx(loss(m, matched, plain)).epsilon(1e-12));
    }
    SUBCASE("degenerate records contribute value terms only") {
        const MlpModel m = init_model({4, 6, 2}, 32);
        TrainingSet set = random_batch(4, 4, 2, 33);
        const double with_all = loss(m, set, si_config());
        set.records[1].degenerate = true;  // keep the stale Jacobian attached
        const double with_flag = loss(m, set, si_config());
        const double dropped_term =
            (input_jacobian(m, set.records[1].theta) - *set.records[1].jacobian).squaredNorm();
        CHECK(with_all - with_flag == doctest::Approx(dropped_term).epsilon(1e-10));
        // plain loss ignores the flag entirely
        TrainConfig plain;
        const double p1 = loss(m, set, plain);
        set.records[1].degenerate = false;
        CHECK(loss(m, set, plain) == doctest::Approx(p1));
    }
}

TEST_CASE("loss_gradient closed forms and finite differences") {
    SUBCASE("zero gradient at a perfect linear fit") {
        MlpModel m = init_model({3, 2}, 0);
        TrainingSet set;
        Rng rng(1);
        for (int i = 0; i < 3; ++i) {
            SensitivityRecord r;
            r.theta = random_vector(3, rng);
            r.x = m.weights[0] * r.theta;
            r.jacobian = m.weights[0];
            set.records.push_back(r);
        }
        GradientBuffer grad;
        const double value = loss_gradient(m, set, si_config(), grad);
        CHECK(value <= 1e-24);
        CHECK(grad.dW[0].cwiseAbs().maxCoeff() <= 1e-11);
        CHECK(grad.db[0].cwiseAbs().maxCoeff() <= 1e-11);
    }
    SUBCASE("linear model single sample: dW = 2(Wθ-x)θ' + 2μ(W-J)") {
        const MlpModel m = init_model({3, 2}, 4);
        Rng rng(2);
        SensitivityRecord r;
        r.theta = random_vector(3, rng);
        r.x = random_vector(2, rng);
        r.jacobian = Matrix::Random(2, 3);
        TrainingSet set;
        set.records.push_back(r);
        TrainConfig cfg = si_config();
        cfg.jacobian_weight = 0.9;

        GradientBuffer grad;
        loss_gradient(m, set, cfg, grad);
        const Matrix expect = 2.0 * (m.weights[0] * r.theta - r.x) * r.theta.transpose() +
                              2.0 * 0.9 * (m.weights[0] - *r.jacobian);
        CHECK((grad.dW[0] - expect).cwiseAbs().maxCoeff() <= 1e-12);
        CHECK((grad.db[0] - 2.0 * (m.weights[0] * r.theta - r.x)).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("gradient matches finite differences in both modes (10 pairs)") {
        for (int pair = 0; pair < 10; ++pair) {
            const MlpModel m = init_model({4, 9, 7, 3}, 100 + static_cast<std::uint64_t>(pair));
            const TrainingSet set = random_batch(3, 4, 3, 200 + static_cast<std::uint64_t>(pair));
            for (TrainMode mode : {TrainMode::Plain, TrainMode::SensitivityInformed}) {
                TrainConfig cfg;
                cfg.mode = mode;
                GradientBuffer grad;
                loss_gradient(m, set, cfg, grad);
                const GradientBuffer fd = fd_loss_gradient(m, set, cfg);
                CHECK(max_relative_gradient_error(grad, fd) <= 1e-5);
            }
        }
    }
    SUBCASE("training-path network Jacobian equals the forward-mode one") {
        const MlpModel m = init_model({5, 12, 8, 3}, 55);
        TrainingSet set = random_batch(2, 5, 3, 56);
        // force the Jacobian term to be the only gradient contribution and
        // recover T via dW of a linear probe: instead compare loss values
        TrainConfig cfg = si_config();
        double expect = 0.0;
        for (const auto& r : set.records)
            expect += (forward(m, r.theta) - r.x).squaredNorm() +
                      (input_jacobian(m, r.theta) - *r.jacobian).squaredNorm();
        CHECK(loss(m, set, cfg) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("train") {
    SUBCASE("convex surrogate: SI training recovers the affine map") {
        // exact (x, J) data from one unconstrained region: the quadratic SI
        // loss has the linear model W = J, b = 0 as its unique optimum
        Rng rng(3);
        const Matrix map = Matrix::Random(2, 3);
        TrainingSet set;
        for (int i = 0; i < 6; ++i) {
            SensitivityRecord r;
            r.theta = random_vector(3, rng);
            r.x = map * r.theta;
            r.jacobian = map;
            set.records.push_back(r);
        }
        TrainConfig cfg = si_config();
        cfg.learning_rate = 0.02;
        cfg.epochs = 2000;
        cfg.normalize = false;
        TrainHistory history;
        const MlpModel fitted = train(init_model({3, 2}, 1), set, cfg, &history);
        CHECK(history.train_loss.back() < 1e-8);
        CHECK((fitted.weights[0] - map).cwiseAbs().maxCoeff() < 1e-4);
    }
    SUBCASE("zero epochs returns the initial model") {
        const MlpModel initial = init_model({3, 4, 2}, 9);
        TrainConfig cfg;
        cfg.epochs = 0;
        const MlpModel out = train(initial, random_batch(3, 3, 2, 4), cfg);
        for (int k = 0; k < initial.layer_count(); ++k)
            CHECK((out.weights[k] - initial.weights[k]).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("same seeds give identical loss histories and weights") {
        const TrainingSet set = random_batch(4, 3, 2, 5);
        TrainConfig cfg = si_config();
        cfg.epochs = 50;
        TrainHistory h1, h2;
        const MlpModel a = train(init_model({3, 8, 2}, 2), set, cfg, &h1);
        const MlpModel b = train(init_model({3, 8, 2}, 2), set, cfg, &h2);
        CHECK(h1.train_loss == h2.train_loss);
        for (int k = 0; k < a.layer_count(); ++k)
            CHECK((a.weights[k] - b.weights[k]).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("minibatch training is deterministic too") {
        const TrainingSet set = random_batch(9, 3, 2, 6);
        TrainConfig cfg;
        cfg.epochs = 20;
        cfg.batch_size = 4;
        cfg.seed = 123;
        TrainHistory h1, h2;
        train(init_model({3, 6, 2}, 3), set, cfg, &h1);
        train(init_model({3, 6, 2}, 3), set, cfg, &h2);
        CHECK(h1.train_loss == h2.train_loss);
    }
    SUBCASE("divergence raises NonFiniteLoss with the epoch") {
        TrainingSet set = random_batch(3, 3, 2, 7);
        for (auto& r : set.records) r.x *= 1e200;  // loss overflows immediately
        TrainConfig cfg;
        cfg.epochs = 10;
        CHECK_THROWS_AS(train(init_model({3, 4, 2}, 1), set, cfg), NonFiniteLoss);
    }
    SUBCASE("per-epoch validation history in raw units") {
        const TrainingSet set = random_batch(4, 3, 2, 8);
        const TrainingSet val = random_batch(5, 3, 2, 9, false);
        TrainConfig cfg;
        cfg.epochs = 5;
        TrainHistory history;
        train(init_model({3, 4, 2}, 4), set, cfg, &history, &val);
        CHECK(history.val_value_mse.size() == 5);
        for (double v : history.val_value_mse) CHECK(v >= 0.0);
    }
}

TEST_CASE("fit standardizes, times, and round-trips through raw units") {
    Rng rng(21);
    const Matrix map = Matrix::Random(2, 3);
    TrainingSet set;
    for (int i = 0; i < 8; ++i) {
        SensitivityRecord r;
        r.theta = random_vector(3, rng, 2.0);
        r.theta.array() += 3.0;  // off-center inputs exercise the standardization
        r.x = map * r.theta;
        r.jacobian = map;
        set.records.push_back(r);
    }
    TrainConfig cfg = si_config();
    cfg.epochs = 3000;
    cfg.learning_rate = 0.02;
    const FitResult fitted = fit(init_model({3, 2}, 1), set, cfg);
    CHECK(fitted.train_seconds > 0.0);
    for (const auto& r : set.records)
        CHECK((fitted.predictor.predict(r.theta) - r.x).cwiseAbs().maxCoeff() < 1e-3);
    // the raw-unit prediction Jacobian approaches the generating map
    CHECK((fitted.predictor.predict_jacobian(set.records[0].theta) - map).cwiseAbs().maxCoeff() < 1e-3);
}
