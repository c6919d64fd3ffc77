#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "sensopf/errors.hpp"

namespace sensopf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// One feeder line joining parent -> child, impedance in pu.
struct Line {
    int parent = 0;
    int child = 0;
    double r = 0.0;
    double x = 0.0;
};

/// Single-phase radial feeder. Bus 0 is the substation; buses 1..N are dense
/// indices assigned in BFS order from the substation.
struct Feeder {
    int bus_count = 0;                 // N, excludes the substation
    std::vector<Line> lines;           // exactly N lines, spanning tree rooted at bus 0
    std::vector<int> inverter_buses;   // I distinct buses in 1..N
    std::vector<int> load_buses;       // L distinct buses in 1..N
    Vector inverter_ratings;           // q̄, pu, strictly positive, one per inverter
    double substation_voltage = 1.0;   // v0, pu
    double voltage_band = 0.03;        // ε, pu
    std::vector<std::string> bus_ids;  // external ids, size N+1; empty means "0","1",...

    int inverter_count() const { return static_cast<int>(inverter_buses.size()); }
    int load_count() const { return static_cast<int>(load_buses.size()); }

    std::string bus_id(int index) const;

    /// Throws NotATree / NonPositiveImpedance / InvalidFeeder when a
    /// structural invariant is violated.
    void validate() const;
};

/// Linearized voltage sensitivities around the flat profile plus the bus
/// placement matrices for inverters and loads.
struct GridMatrices {
    Matrix R;   // N x N, symmetric positive definite
    Matrix X;   // N x N, symmetric positive definite
    Matrix Fi;  // N x I, one 1 per column
    Matrix Fl;  // N x L, one 1 per column
};

/// Builds R, X, Fi, Fl. Entry (m, n) of X is the sum of reactances on the
/// common root path of buses m and n; same rule for R with resistances.
GridMatrices build_grid_matrices(const Feeder& feeder);

/// v = R p + X q + v0 * 1
Vector approx_voltages(const GridMatrices& gm, const Vector& p, const Vector& q, double v0);

/// Second-order loss model: 2 p'Rp + 2 q'Rq. Nonnegative since R is PD.
double approx_losses(const GridMatrices& gm, const Vector& p, const Vector& q);

/// Feeder JSON I/O. Bus ids are arbitrary strings; id "0" must be present and
/// is the substation. Dense indices follow BFS order over the file's line
/// order, so a given file always yields the same matrix layout.
Feeder feeder_from_json(const std::string& text);
std::string feeder_to_json(const Feeder& feeder);
Feeder load_feeder(const std::string& path);
void save_feeder(const Feeder& feeder, const std::string& path);

}  // namespace sensopf
