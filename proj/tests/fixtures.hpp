#pragma once

// Shared feeders and scenario constructions for the unit and acceptance tests.

#include <vector>

#include "sensopf/mpqp.hpp"
#include "sensopf/rng.hpp"
#include "sensopf/scenarios.hpp"

namespace sensopf::testing {

/// The 5-bus feeder used throughout: lines 0->1 (x1), 1->2 (x2), 1->3 (x3),
/// 3->4 (x4); inverters at buses 1 and 2, a load at bus 3, bus 4 carries no
/// injection.
inline Feeder five_bus_feeder(double rating = 0.6) {
    Feeder f;
    f.bus_count = 4;
    f.lines = {{0, 1, 0.030, 0.050},
               {1, 2, 0.025, 0.040},
               {1, 3, 0.035, 0.060},
               {3, 4, 0.020, 0.030}};
    f.inverter_buses = {1, 2};
    f.load_buses = {3};
    f.inverter_ratings = Vector::Constant(2, rating);
    return f;
}

/// A loading scenario for the 5-bus feeder that drives the voltages at buses
/// 3 and 4 onto the lower band together, with both rows sharing one
/// constraint direction. `load` scales the withdrawal at bus 3.
inline Vector five_bus_licq_theta(double load = 0.6) {
    Vector theta = Vector::Zero(5);
    theta[2] = -load;        // net active injection at bus 3
    theta[4] = 0.3 * load;   // reactive load at bus 3
    return theta;
}

/// Deterministic random radial feeder for property tests. Every non-root bus
/// attaches to a uniformly drawn earlier bus.
inline Feeder random_tree_feeder(int buses, std::uint64_t seed, int inverters, int loads) {
    Rng rng(seed);
    Feeder f;
    f.bus_count = buses;
    for (int b = 1; b <= buses; ++b) {
        const int parent = b == 1 ? 0 : static_cast<int>(rng.below(static_cast<std::uint64_t>(b)));
        f.lines.push_back({parent, b, rng.uniform(0.01, 0.05), rng.uniform(0.02, 0.08)});
    }
    std::vector<int> order;
    for (int b = 1; b <= buses; ++b) order.push_back(b);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (int i = 0; i < inverters; ++i) f.inverter_buses.push_back(order[static_cast<std::size_t>(i)]);
    for (int i = 0; i < loads; ++i)
        f.load_buses.push_back(order[static_cast<std::size_t>(inverters + i)]);
    f.inverter_ratings = Vector::Constant(inverters, 0.5);
    return f;
}

/// Random parameter vector with net withdrawals at load buses; magnitudes
/// sized so that constraints activate on a fair share of draws.
inline Vector random_theta(const Feeder& feeder, Rng& rng, double scale) {
    Vector theta = Vector::Zero(feeder.bus_count + feeder.load_count());
    for (int i = 0; i < feeder.inverter_count(); ++i)
        theta[feeder.inverter_buses[i] - 1] += rng.uniform(0.0, scale);
    for (int l = 0; l < feeder.load_count(); ++l) {
        const double p = rng.uniform(0.0, scale);
        theta[feeder.load_buses[l] - 1] -= p;
        theta[feeder.bus_count + l] = 0.4 * p;
    }
    return theta;
}

/// The 36-bus acceptance feeder: a 12-bus spine, five 4-bus laterals, and
/// four zero-injection leaf buses (each ties its voltage to its parent, so a
/// binding parent reproduces the rank-deficient active sets).
inline Feeder acceptance_feeder(double rating = 0.30, double impedance_scale = 1.0) {
    Feeder f;
    f.bus_count = 36;
    Rng rng(90125);
    auto add = [&](int parent, int child) {
        f.lines.push_back({parent, child, impedance_scale * rng.uniform(0.006, 0.012),
                           impedance_scale * rng.uniform(0.012, 0.024)});
    };
    for (int b = 1; b <= 12; ++b) add(b - 1, b);            // spine
    const int lateral_roots[5] = {3, 6, 9, 12, 2};
    int next = 13;
    for (int lat = 0; lat < 5; ++lat) {
        add(lateral_roots[lat], next);
        add(next, next + 1);
        add(next + 1, next + 2);
        add(next + 2, next + 3);
        next += 4;
    }
    add(12, 33);
    add(10, 34);
    add(24, 35);
    add(28, 36);

    f.inverter_buses = {4, 15, 19, 23, 27};
    f.inverter_ratings = Vector::Constant(5, rating);
    f.load_buses = {2, 4, 5, 7, 8, 10, 11, 12,
                    13, 14, 15, 16,
                    17, 18, 20,
                    21, 22, 24,
                    25, 26, 28,
                    29, 30, 31, 32};
    return f;
}

/// Synthetic-day configuration shared by the acceptance criteria.
inline ProfileGenConfig acceptance_gen_config() {
    ProfileGenConfig gen;
    gen.base_load = 0.03;
    gen.load_noise = 0.05;
    gen.solar_noise = 0.12;
    return gen;
}

inline CalibConfig acceptance_calib_config() {
    CalibConfig calib;
    calib.nominal_total_load = 0.95;
    calib.solar_penetration = 0.75;
    return calib;
}

inline DayProfiles acceptance_day(const Feeder& feeder, std::uint64_t seed = 2024) {
    return calibrate_profiles(generate_profiles(feeder, acceptance_gen_config(), seed), feeder,
                              acceptance_calib_config());
}

/// Random dense strictly convex instances for solver cross-checks. e > 0
/// keeps x = 0 feasible, so every instance is solvable.
inline MpqpInstance random_instance(int vars, int params, int rows, std::uint64_t seed) {
    Rng rng(seed);
    Matrix root(vars, vars);
    for (int r = 0; r < vars; ++r)
        for (int c = 0; c < vars; ++c) root(r, c) = rng.normal();
    Matrix a = root * root.transpose() + 0.5 * static_cast<double>(vars) * Matrix::Identity(vars, vars);
    Matrix b(vars, params), cm(rows, vars), d(rows, params);
    for (int r = 0; r < vars; ++r)
        for (int c = 0; c < params; ++c) b(r, c) = rng.normal();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < vars; ++c) cm(r, c) = rng.normal();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < params; ++c) d(r, c) = 0.1 * rng.normal();
    Vector e(rows);
    for (int r = 0; r < rows; ++r) e[r] = rng.uniform(0.5, 1.5);
    return MpqpInstance(a, b, cm, d, e);
}

inline Vector random_vector(int n, Rng& rng, double scale = 1.0) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
    return v;
}

}  // namespace sensopf::testing
