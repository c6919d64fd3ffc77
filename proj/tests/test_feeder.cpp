#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sensopf/feeder.hpp"

using namespace sensopf;
using namespace sensopf::testing;

TEST_CASE("five-bus reactance matrix matches the shared-path rule") {
    const Feeder f = five_bus_feeder();
    const GridMatrices gm = build_grid_matrices(f);
    const double x1 = 0.050, x2 = 0.040, x3 = 0.060, x4 = 0.030;
    Matrix expected(4, 4);
    expected << x1, x1, x1, x1,
                x1, x1 + x2, x1, x1,
                x1, x1, x1 + x3, x1 + x3,
                x1, x1, x1 + x3, x1 + x3 + x4;
    CHECK((gm.X - expected).cwiseAbs().maxCoeff() == doctest::Approx(0.0).epsilon(1e-15));

    const double r1 = 0.030, r3 = 0.035, r4 = 0.020;
    CHECK(gm.R(0, 3) == doctest::Approx(r1));
    CHECK(gm.R(3, 3) == doctest::Approx(r1 + r3 + r4));
}

TEST_CASE("single line gives a 1x1 matrix") {
    Feeder f;
    f.bus_count = 1;
    f.lines = {{0, 1, 0.01, 0.07}};
    const GridMatrices gm = build_grid_matrices(f);
    REQUIRE(gm.X.rows() == 1);
    CHECK(gm.X(0, 0) == doctest::Approx(0.07));
    CHECK(gm.R(0, 0) == doctest::Approx(0.01));
}

TEST_CASE("random trees match the path-enumeration oracle") {
    for (std::uint64_t seed : {11u, 22u, 33u, 44u}) {
        const Feeder f = random_tree_feeder(10, seed, 2, 3);
        const GridMatrices gm = build_grid_matrices(f);
        CHECK((gm.X - path_enumeration_matrix(f, true)).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((gm.R - path_enumeration_matrix(f, false)).cwiseAbs().maxCoeff() < 1e-14);
    }
}

TEST_CASE("grid matrices are symmetric positive definite with monotone diagonals") {
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        const Feeder f = random_tree_feeder(15, seed, 3, 5);
        const GridMatrices gm = build_grid_matrices(f);
        CHECK((gm.X - gm.X.transpose()).cwiseAbs().maxCoeff() < 1e-15);
        CHECK((gm.R - gm.R.transpose()).cwiseAbs().maxCoeff() < 1e-15);
        Eigen::LLT<Matrix> lx(gm.X), lr(gm.R);
        CHECK(lx.info() == Eigen::Success);
        CHECK(lr.info() == Eigen::Success);
        for (int m = 0; m < f.bus_count; ++m)
            for (int n = 0; n < f.bus_count; ++n) CHECK(gm.X(m, m) >= gm.X(m, n) - 1e-15);
        // placement matrices have a single 1 per column
        for (int c = 0; c < gm.Fi.cols(); ++c) CHECK(gm.Fi.col(c).sum() == doctest::Approx(1.0));
        for (int c = 0; c < gm.Fl.cols(); ++c) CHECK(gm.Fl.col(c).sum() == doctest::Approx(1.0));
    }
}

TEST_CASE("approx_voltages") {
    const Feeder f = five_bus_feeder();
    const GridMatrices gm = build_grid_matrices(f);
    const int n = f.bus_count;

    SUBCASE("flat profile at zero injections") {
        const Vector v = approx_voltages(gm, Vector::Zero(n), Vector::Zero(n), 1.0);
        CHECK((v - Vector::Ones(n)).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("unit reactive injection picks a column of X") {
        Vector q = Vector::Zero(n);
        q[0] = 1.0;
        const Vector v = approx_voltages(gm, Vector::Zero(n), q, 1.0);
        CHECK((v - (gm.X.col(0) + Vector::Ones(n))).cwiseAbs().maxCoeff() < 1e-15);
    }
    SUBCASE("random inputs match the mat-vec oracle") {
        Rng rng(7);
        for (int trial = 0; trial < 10; ++trial) {
            const Vector p = random_vector(n, rng), q = random_vector(n, rng);
            const Vector v = approx_voltages(gm, p, q, 1.0);
            const Vector expect = matvec_oracle(gm.R, p) + matvec_oracle(gm.X, q) + Vector::Ones(n);
            CHECK((v - expect).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(approx_voltages(gm, Vector::Zero(2), Vector::Zero(n), 1.0), DimensionMismatch);
    }
}

TEST_CASE("approx_losses") {
    const Feeder f = five_bus_feeder();
    const GridMatrices gm = build_grid_matrices(f);
    const int n = f.bus_count;

    CHECK(approx_losses(gm, Vector::Zero(n), Vector::Zero(n)) == 0.0);

    Vector p = Vector::Zero(n);
    p[0] = 1.0;  // basis vector at bus 1
    CHECK(approx_losses(gm, p, Vector::Zero(n)) == doctest::Approx(2.0 * 0.030));

    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector pr = random_vector(n, rng), qr = random_vector(n, rng);
        const double expect = 2.0 * quadform_oracle(gm.R, pr) + 2.0 * quadform_oracle(gm.R, qr);
        CHECK(approx_losses(gm, pr, qr) == doctest::Approx(expect).epsilon(1e-12));
        CHECK(approx_losses(gm, pr, qr) >= 0.0);
    }
}

TEST_CASE("feeder JSON round trip preserves the matrices") {
    const Feeder f = five_bus_feeder();
    const Feeder back = feeder_from_json(feeder_to_json(f));
    const GridMatrices a = build_grid_matrices(f);
    const GridMatrices b = build_grid_matrices(back);
    CHECK((a.X - b.X).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((a.R - b.R).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(back.inverter_buses == f.inverter_buses);
    CHECK(back.load_buses == f.load_buses);
    CHECK(back.voltage_band == f.voltage_band);
}

TEST_CASE("feeder JSON uses BFS indexing from the substation") {
    // String ids on purpose out of numeric order; "0" stays the substation.
    const std::string text = R"({
        "buses": [{"id": "0"}, {"id": "mid"}, {"id": "leaf"}],
        "lines": [{"from": "mid", "to": "leaf", "r": 0.02, "x": 0.03},
                  {"from": "0", "to": "mid", "r": 0.01, "x": 0.05}],
        "inverters": [{"bus": "leaf", "q_rating": 0.4}],
        "loads": [{"bus": "mid"}],
        "v0": 1.0,
        "voltage_band": 0.03
    })";
    const Feeder f = feeder_from_json(text);
    CHECK(f.bus_count == 2);
    CHECK(f.bus_id(1) == "mid");
    CHECK(f.bus_id(2) == "leaf");
    CHECK(f.inverter_buses == std::vector<int>{2});
    const GridMatrices gm = build_grid_matrices(f);
    CHECK(gm.X(1, 1) == doctest::Approx(0.08));
}

TEST_CASE("feeder validation errors") {
    SUBCASE("cycle / wrong line count") {
        Feeder f = five_bus_feeder();
        f.lines.push_back({2, 3, 0.01, 0.01});
        CHECK_THROWS_AS(build_grid_matrices(f), NotATree);
    }
    SUBCASE("disconnected bus") {
        Feeder f = five_bus_feeder();
        f.lines[3] = {3, 3, 0.01, 0.01};  // degenerate line
        CHECK_THROWS_AS(build_grid_matrices(f), InvalidFeeder);
        f.lines[3] = {0, 0, 0.01, 0.01};
        CHECK_THROWS_AS(build_grid_matrices(f), InvalidFeeder);
    }
    SUBCASE("cycle with right line count disconnects some bus") {
        Feeder f = five_bus_feeder();
        f.lines[3] = {1, 2, 0.01, 0.01};  // duplicates an edge, bus 4 unreachable
        CHECK_THROWS_AS(build_grid_matrices(f), NotATree);
    }
    SUBCASE("nonpositive impedance") {
        Feeder f = five_bus_feeder();
        f.lines[0].x = 0.0;
        CHECK_THROWS_AS(build_grid_matrices(f), NonPositiveImpedance);
    }
    SUBCASE("duplicate inverter bus") {
        Feeder f = five_bus_feeder();
        f.inverter_buses = {1, 1};
        CHECK_THROWS_AS(build_grid_matrices(f), InvalidFeeder);
    }
    SUBCASE("nonpositive rating") {
        Feeder f = five_bus_feeder();
        f.inverter_ratings[0] = 0.0;
        CHECK_THROWS_AS(build_grid_matrices(f), InvalidFeeder);
    }
    SUBCASE("schema errors") {
        CHECK_THROWS_AS(feeder_from_json("not json"), SchemaError);
        CHECK_THROWS_AS(feeder_from_json(R"({"buses": [{"id":"0"},{"id":"1"}], "lines": []})"), NotATree);
        CHECK_THROWS_AS(feeder_from_json(R"({"buses": [{"id":"1"},{"id":"2"}],
            "lines": [{"from":"1","to":"2","r":0.1,"x":0.1}]})"), SchemaError);
    }
}
