#include "sensopf/sensitivity.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sensopf {

ActivePartition partition_constraints(const MpqpInstance& inst, const OpfSolution& sol, double tol) {
    if (sol.status != SolveStatus::Optimal)
        throw Error("partition_constraints requires an optimal solution");
    if (tol < 0.0) tol = inst.activity_tolerance(sol.theta);

    const Vector bound = inst.constraint_bound(sol.theta);
    const Vector slack = bound - inst.C() * sol.x;
    const int m = inst.num_constraints();
    const double dual_floor = 1e-7 * (1.0 + sol.lambda.cwiseAbs().maxCoeff());

    ActivePartition part;
    part.theta = sol.theta;
    for (int row = 0; row < m; ++row) {
        if (sol.lambda[row] < -dual_floor)
            throw AmbiguousActivity("row " + std::to_string(row) + " carries a negative dual");
        if (std::abs(slack[row]) <= tol) {
            part.active.push_back(row);
        } else {
            if (slack[row] > tol && sol.lambda[row] > dual_floor)
                throw AmbiguousActivity("row " + std::to_string(row) +
                                        " has positive dual but slack beyond the activity tolerance");
            part.inactive.push_back(row);
        }
    }

    const int a = static_cast<int>(part.active.size());
    const int b = static_cast<int>(part.inactive.size());
    const int p = inst.num_params();
    part.Ct.resize(a, inst.num_vars());
    part.Dt.resize(a, p);
    part.et.resize(a);
    part.lambda_t.resize(a);
    for (int i = 0; i < a; ++i) {
        part.Ct.row(i) = inst.C().row(part.active[i]);
        part.Dt.row(i) = inst.D().row(part.active[i]);
        part.et[i] = inst.e()[part.active[i]];
        part.lambda_t[i] = sol.lambda[part.active[i]];
    }
    part.Cbar.resize(b, inst.num_vars());
    part.Dbar.resize(b, p);
    part.ebar.resize(b);
    for (int i = 0; i < b; ++i) {
        part.Cbar.row(i) = inst.C().row(part.inactive[i]);
        part.Dbar.row(i) = inst.D().row(part.inactive[i]);
        part.ebar[i] = inst.e()[part.inactive[i]];
    }
    return part;
}

std::pair<Matrix, int> pseudo_inverse(const Matrix& sym, double cutoff_rel) {
    const int n = static_cast<int>(sym.rows());
    if (n == 0) return {Matrix(0, 0), 0};
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    if (eig.info() != Eigen::Success) throw Error("eigendecomposition failed");
    const Vector values = eig.eigenvalues();
    const double largest = values.cwiseAbs().maxCoeff();
    const double cutoff = cutoff_rel * largest;
    Vector inv = Vector::Zero(n);
    int rank = 0;
    for (int i = 0; i < n; ++i) {
        if (values[i] > cutoff && values[i] > 0.0) {
            inv[i] = 1.0 / values[i];
            ++rank;
        }
    }
    return {eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose(), rank};
}

namespace {

// Everything the MPP formulas need about one active set, computed once.
struct ActiveSystem {
    Matrix AinvCt;           // A⁻¹C̃', num_vars x a
    Matrix G;                // C̃A⁻¹C̃'
    Matrix Gp;               // G⁺
    int rank = 0;
    Matrix S;                // C̃A⁻¹B - D̃, a x num_params
    Vector lambda_min_norm;  // G⁺(Sθ - ẽ) at the partition's θ
};

ActiveSystem analyze(const MpqpInstance& inst, const ActivePartition& part, const SensitivityOptions& opts) {
    ActiveSystem sys;
    const int a = part.active_count();
    sys.AinvCt.resize(inst.num_vars(), a);
    for (int i = 0; i < a; ++i) sys.AinvCt.col(i) = inst.A_inv_Ct().col(part.active[i]);
    sys.G.resize(a, a);
    for (int i = 0; i < a; ++i)
        for (int k = 0; k < a; ++k) sys.G(i, k) = inst.C_Ainv_Ct()(part.active[i], part.active[k]);
    auto [gp, rank] = pseudo_inverse(sys.G, opts.pinv_cutoff);
    sys.Gp = std::move(gp);
    sys.rank = rank;
    sys.S = part.Ct * inst.A_inv_B() - part.Dt;
    sys.lambda_min_norm = a > 0 ? Vector(sys.Gp * (sys.S * part.theta - part.et)) : Vector(0);
    return sys;
}

bool is_degenerate(const ActiveSystem& sys, const SensitivityOptions& opts) {
    return sys.lambda_min_norm.size() > 0 && sys.lambda_min_norm.minCoeff() <= opts.dual_tol;
}

Matrix jacobian_from(const MpqpInstance& inst, const ActiveSystem& sys) {
    if (sys.G.rows() == 0) return inst.A_inv_B();
    return inst.A_inv_B() - sys.AinvCt * (sys.Gp * sys.S);
}

}  // namespace

JacobianResult jacobian(const MpqpInstance& inst, const ActivePartition& part, const SensitivityOptions& opts) {
    const ActiveSystem sys = analyze(inst, part, opts);
    if (is_degenerate(sys, opts))
        throw DegenerateDuals("an active constraint carries a (min-norm) dual at or below dual_tol");
    return {jacobian_from(inst, sys), sys.rank == part.active_count()};
}

Vector affine_offset(const MpqpInstance& inst, const ActivePartition& part, const SensitivityOptions& opts) {
    const ActiveSystem sys = analyze(inst, part, opts);
    if (is_degenerate(sys, opts))
        throw DegenerateDuals("an active constraint carries a (min-norm) dual at or below dual_tol");
    if (part.active_count() == 0) return Vector::Zero(inst.num_vars());
    return sys.AinvCt * (sys.Gp * part.et);
}

bool in_critical_region(const MpqpInstance& inst, const ActivePartition& part,
                        const Vector& theta_prime, const SensitivityOptions& opts) {
    if (theta_prime.size() != inst.num_params()) throw DimensionMismatch("theta' has wrong length");
    const ActiveSystem sys = analyze(inst, part, opts);
    const Matrix J = jacobian_from(inst, sys);

    if (part.active_count() > 0) {
        const Vector rhs = sys.S * theta_prime - part.et;
        // Multipliers for the working active set must stay strictly positive.
        const Vector lam = sys.Gp * rhs;
        if (lam.minCoeff() <= opts.region_margin) return false;
        // When C̃ is rank deficient the active equalities are solvable only on
        // an affine subspace of parameters; leaving it changes the active set.
        const Vector residual = rhs - sys.G * lam;
        if (residual.cwiseAbs().maxCoeff() > opts.consistency_rel * (1.0 + rhs.cwiseAbs().maxCoeff()))
            return false;
    }

    if (part.inactive.empty()) return true;
    const Vector offset = part.active_count() > 0 ? Vector(sys.AinvCt * (sys.Gp * part.et))
                                                  : Vector(Vector::Zero(inst.num_vars()));
    const Vector x_pred = J * theta_prime + offset;
    const Vector slack = part.Dbar * theta_prime + part.ebar - part.Cbar * x_pred;
    return slack.minCoeff() > opts.region_margin;
}

SensitivityRecord build_record(const MpqpInstance& inst, const Vector& theta, const SensitivityOptions& opts) {
    const OpfSolution sol = solve_qp(inst, theta);
    if (sol.status == SolveStatus::Infeasible)
        throw InfeasibleQp("no feasible dispatch for this parameter vector");
    if (sol.status == SolveStatus::IterationLimit)
        throw Error("QP solver hit the iteration cap");

    const ActivePartition part = partition_constraints(inst, sol);
    const ActiveSystem sys = analyze(inst, part, opts);

    SensitivityRecord rec;
    rec.theta = theta;
    rec.x = sol.x;
    rec.active_set = part.active;
    rec.licq_holds = sys.rank == part.active_count();
    rec.degenerate = is_degenerate(sys, opts);
    if (!rec.degenerate) rec.jacobian = jacobian_from(inst, sys);
    return rec;
}

namespace {

using nlohmann::json;

json vector_to_json(const Vector& v) {
    std::vector<double> data(v.data(), v.data() + v.size());
    return json(data);
}

Vector vector_from_json(const json& j) {
    const auto data = j.get<std::vector<double>>();
    Vector v(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) v[static_cast<Eigen::Index>(i)] = data[i];
    return v;
}

}  // namespace

std::string record_to_json(const SensitivityRecord& rec) {
    json j;
    j["theta"] = vector_to_json(rec.theta);
    j["x"] = vector_to_json(rec.x);
    if (rec.jacobian) {
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(rec.jacobian->size()));
        for (Eigen::Index r = 0; r < rec.jacobian->rows(); ++r)
            for (Eigen::Index c = 0; c < rec.jacobian->cols(); ++c) data.push_back((*rec.jacobian)(r, c));
        j["jacobian"] = data;
    } else {
        j["jacobian"] = nullptr;
    }
    j["degenerate"] = rec.degenerate;
    j["active_set"] = rec.active_set;
    j["licq"] = rec.licq_holds;
    return j.dump();
}

SensitivityRecord record_from_json(const std::string& line) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw SchemaError("record line is not valid JSON");
    SensitivityRecord rec;
    rec.theta = vector_from_json(j.at("theta"));
    rec.x = vector_from_json(j.at("x"));
    if (j.contains("jacobian") && !j.at("jacobian").is_null()) {
        const auto data = j.at("jacobian").get<std::vector<double>>();
        const Eigen::Index rows = rec.x.size();
        const Eigen::Index cols = rec.theta.size();
        if (static_cast<Eigen::Index>(data.size()) != rows * cols)
            throw SchemaError("jacobian length does not match theta/x dimensions");
        Matrix m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
        rec.jacobian = std::move(m);
    }
    rec.degenerate = j.value("degenerate", false);
    if (j.contains("active_set")) rec.active_set = j.at("active_set").get<std::vector<int>>();
    rec.licq_holds = j.value("licq", true);
    return rec;
}

void save_records(const std::vector<SensitivityRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw SchemaError("cannot write records file: " + path);
    for (const SensitivityRecord& rec : records) out << record_to_json(rec) << "\n";
}

std::vector<SensitivityRecord> load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open records file: " + path);
    std::vector<SensitivityRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json(line));
    }
    return records;
}

}  // namespace sensopf
