#include "sensopf/mpqp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

namespace sensopf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

MpqpInstance::MpqpInstance(Matrix A, Matrix B, Matrix C, Matrix D, Vector e)
    : A_(std::move(A)), B_(std::move(B)), C_(std::move(C)), D_(std::move(D)), e_(std::move(e)) {
    const int nv = static_cast<int>(A_.rows());
    if (A_.cols() != nv) throw DimensionMismatch("A must be square");
    if (B_.rows() != nv) throw DimensionMismatch("B must have one row per variable");
    if (C_.cols() != nv) throw DimensionMismatch("C must have one column per variable");
    if (D_.rows() != C_.rows() || e_.size() != C_.rows())
        throw DimensionMismatch("C, D, e must agree on the number of constraint rows");
    if (D_.cols() != B_.cols()) throw DimensionMismatch("B and D must agree on the parameter dimension");

    A_llt_.compute(A_);
    if (A_llt_.info() != Eigen::Success)
        throw NotPositiveDefinite("objective matrix A is not positive definite");
    const Vector diag = A_llt_.matrixLLT().diagonal();
    if (diag.minCoeff() <= 1e-12 * std::max(1.0, diag.maxCoeff()))
        throw NotPositiveDefinite("objective matrix A is numerically singular");

    A_inv_B_ = A_llt_.solve(B_);
    A_inv_Ct_ = A_llt_.solve(Matrix(C_.transpose()));
    C_Ainv_Ct_ = C_ * A_inv_Ct_;
}

Vector MpqpInstance::constraint_bound(const Vector& theta) const {
    if (theta.size() != num_params()) throw DimensionMismatch("theta has wrong length");
    return D_ * theta + e_;
}

double MpqpInstance::objective(const Vector& x, const Vector& theta) const {
    return 0.5 * x.dot(A_ * x) - x.dot(B_ * theta);
}

double MpqpInstance::activity_tolerance(const Vector& theta) const {
    return 1e-7 * (1.0 + constraint_bound(theta).cwiseAbs().maxCoeff());
}

MpqpInstance assemble_mpqp(const GridMatrices& gm, const Feeder& feeder) {
    const int n = static_cast<int>(gm.R.rows());
    const int ni = static_cast<int>(gm.Fi.cols());
    const int nl = static_cast<int>(gm.Fl.cols());
    if (n != feeder.bus_count || ni != feeder.inverter_count() || nl != feeder.load_count())
        throw DimensionMismatch("grid matrices do not match the feeder");

    const Matrix A = 2.0 * gm.Fi.transpose() * gm.R * gm.Fi;

    Matrix B = Matrix::Zero(ni, n + nl);
    B.rightCols(nl) = 2.0 * gm.Fi.transpose() * gm.R * gm.Fl;

    const Matrix XFi = gm.X * gm.Fi;
    const Matrix XFl = gm.X * gm.Fl;
    const int m = 2 * n + 2 * ni;
    Matrix C = Matrix::Zero(m, ni);
    C.topRows(n) = -XFi;
    C.middleRows(n, n) = XFi;
    C.middleRows(2 * n, ni) = -Matrix::Identity(ni, ni);
    C.bottomRows(ni) = Matrix::Identity(ni, ni);

    Matrix D = Matrix::Zero(m, n + nl);
    D.topLeftCorner(n, n) = gm.R;
    D.topRightCorner(n, nl) = -XFl;
    D.block(n, 0, n, n) = -gm.R;
    D.block(n, n, n, nl) = XFl;

    Vector e(m);
    e.head(n).setConstant(feeder.voltage_band);
    e.segment(n, n).setConstant(feeder.voltage_band);
    e.segment(2 * n, ni) = feeder.inverter_ratings;
    e.tail(ni) = feeder.inverter_ratings;
    if (e.minCoeff() <= 0.0) throw InvalidFeeder("voltage band and ratings must make e strictly positive");

    return MpqpInstance(A, B, C, D, e);
}

const char* to_string(SolveStatus status) {
    switch (status) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::IterationLimit: return "iteration_limit";
    }
    return "unknown";
}

namespace {

// Working-set state of the dual active-set method. Rows in `rows` stay
// linearly independent, so G = C_W A⁻¹ C_W' is positive definite.
struct WorkingSet {
    std::vector<int> rows;
    std::vector<double> lambda;
};

// Solves G_W r = rhs over the working set via LLT of the cached Gram block.
Vector solve_working_gram(const MpqpInstance& inst, const std::vector<int>& rows, const Vector& rhs) {
    const int a = static_cast<int>(rows.size());
    Matrix g(a, a);
    for (int i = 0; i < a; ++i)
        for (int k = 0; k < a; ++k) g(i, k) = inst.C_Ainv_Ct()(rows[i], rows[k]);
    Eigen::LLT<Matrix> llt(g);
    if (llt.info() != Eigen::Success)
        throw NotPositiveDefinite("working-set Gram matrix lost positive definiteness");
    return llt.solve(rhs);
}

// Re-solves the equality-constrained problem on the final working set. This
// removes the drift of the incremental updates; the returned pair satisfies
// stationarity and working-row tightness to factorization accuracy.
void polish(const MpqpInstance& inst, const Vector& theta, const Vector& d, WorkingSet& ws, Vector& x) {
    const Vector h_unconstrained = inst.A_inv_B() * theta;
    if (ws.rows.empty()) {
        x = h_unconstrained;
        return;
    }
    const int a = static_cast<int>(ws.rows.size());
    Vector rhs(a);
    for (int i = 0; i < a; ++i)
        rhs[i] = inst.C().row(ws.rows[i]).dot(h_unconstrained) - d[ws.rows[i]];
    const Vector lam = solve_working_gram(inst, ws.rows, rhs);
    x = h_unconstrained;
    for (int i = 0; i < a; ++i) {
        x -= inst.A_inv_Ct().col(ws.rows[i]) * lam[i];
        ws.lambda[static_cast<std::size_t>(i)] = lam[i];
    }
}

}  // namespace

OpfSolution solve_qp(const MpqpInstance& inst, const Vector& theta, const SolveOptions& options) {
    if (theta.size() != inst.num_params()) throw DimensionMismatch("theta has wrong length");
    const int m = inst.num_constraints();
    const int nv = inst.num_vars();
    const int max_iter = options.max_iterations > 0 ? options.max_iterations : 50 * (m + nv);

    const Vector d = inst.constraint_bound(theta);
    const double feas_tol = 1e-10 * (1.0 + d.cwiseAbs().maxCoeff());

    Vector x = inst.A_inv_B() * theta;
    WorkingSet ws;

    if (options.warm_start && !options.warm_start->empty()) {
        // Accept the hinted rows only if they form an independent set with
        // nonnegative multipliers after an equality solve; otherwise restart cold.
        WorkingSet hint;
        hint.rows = *options.warm_start;
        std::sort(hint.rows.begin(), hint.rows.end());
        hint.rows.erase(std::unique(hint.rows.begin(), hint.rows.end()), hint.rows.end());
        hint.lambda.assign(hint.rows.size(), 0.0);
        try {
            Vector xw;
            for (;;) {
                polish(inst, theta, d, hint, xw);
                int worst = -1;
                double worst_val = -1e-12;
                for (std::size_t i = 0; i < hint.lambda.size(); ++i)
                    if (hint.lambda[i] < worst_val) { worst_val = hint.lambda[i]; worst = static_cast<int>(i); }
                if (worst < 0) break;
                hint.rows.erase(hint.rows.begin() + worst);
                hint.lambda.erase(hint.lambda.begin() + worst);
            }
            ws = hint;
            polish(inst, theta, d, ws, x);
        } catch (const NotPositiveDefinite&) {
            ws = WorkingSet{};
            x = inst.A_inv_B() * theta;
        }
    }

    OpfSolution sol;
    sol.theta = theta;
    sol.status = SolveStatus::Optimal;

    int iterations = 0;
    for (;;) {
        // Most violated row; ties resolved toward the smallest index.
        int j = -1;
        double worst = feas_tol;
        for (int row = 0; row < m; ++row) {
            const double v = inst.C().row(row).dot(x) - d[row];
            if (v > worst) { worst = v; j = row; }
        }
        if (j < 0) break;  // primal feasible => optimal

        double lambda_j = 0.0;
        bool enforced = false;
        while (!enforced) {
            if (++iterations > max_iter) {
                sol.status = SolveStatus::IterationLimit;
                break;
            }
            const int a = static_cast<int>(ws.rows.size());
            const double self_gram = inst.C_Ainv_Ct()(j, j);

            // Step direction: z = A⁻¹(c_j + C_W' r), C_W z = 0.
            Vector r(a);
            Vector z = inst.A_inv_Ct().col(j);
            if (a > 0) {
                Vector gj(a);
                for (int i = 0; i < a; ++i) gj[i] = inst.C_Ainv_Ct()(ws.rows[i], j);
                r = solve_working_gram(inst, ws.rows, Vector(-gj));
                for (int i = 0; i < a; ++i) z += inst.A_inv_Ct().col(ws.rows[i]) * r[i];
            }
            const double decay = inst.C().row(j).dot(z);
            const bool zero_direction = decay <= 1e-13 * (1.0 + self_gram);

            const double violation = inst.C().row(j).dot(x) - d[j];
            const double tau_full = zero_direction ? kInf : violation / decay;

            double tau_partial = kInf;
            int blocking = -1;
            for (int i = 0; i < a; ++i) {
                if (r[i] < -1e-300) {
                    const double t = ws.lambda[static_cast<std::size_t>(i)] / (-r[i]);
                    if (t < tau_partial) { tau_partial = t; blocking = i; }
                }
            }

            if (tau_full == kInf && tau_partial == kInf) {
                sol.status = SolveStatus::Infeasible;
                break;
            }

            const double tau = std::min(tau_full, tau_partial);
            if (tau > 0.0) {
                x -= tau * z;
                for (int i = 0; i < a; ++i) ws.lambda[static_cast<std::size_t>(i)] += tau * r[i];
                lambda_j += tau;
            }

            if (tau_full <= tau_partial) {
                ws.rows.push_back(j);
                ws.lambda.push_back(lambda_j);
                enforced = true;
            } else {
                ws.rows.erase(ws.rows.begin() + blocking);
                ws.lambda.erase(ws.lambda.begin() + blocking);
            }
        }
        if (sol.status != SolveStatus::Optimal) break;
    }

    if (sol.status == SolveStatus::Optimal) polish(inst, theta, d, ws, x);

    sol.x = x;
    sol.lambda = Vector::Zero(m);
    for (std::size_t i = 0; i < ws.rows.size(); ++i)
        sol.lambda[ws.rows[i]] = std::max(0.0, ws.lambda[i]);

    if (sol.status == SolveStatus::Optimal) {
        const double act_tol = inst.activity_tolerance(theta);
        const Vector bound = d;
        for (int row = 0; row < m; ++row) {
            const double slack = bound[row] - inst.C().row(row).dot(x);
            if (std::abs(slack) <= act_tol) sol.active_set.push_back(row);
        }
        sol.kkt_residual = kkt_residual(inst, theta, sol.x, sol.lambda);
    } else {
        sol.kkt_residual = kkt_residual(inst, theta, sol.x, sol.lambda);
    }
    return sol;
}

double kkt_residual(const MpqpInstance& inst, const Vector& theta, const Vector& x, const Vector& lambda) {
    if (x.size() != inst.num_vars() || lambda.size() != inst.num_constraints() || theta.size() != inst.num_params())
        throw DimensionMismatch("kkt_residual inputs have wrong dimensions");
    const Vector stationarity = inst.A() * x - inst.B() * theta + inst.C().transpose() * lambda;
    const Vector slack = inst.constraint_bound(theta) - inst.C() * x;

    double res = stationarity.cwiseAbs().maxCoeff();
    res = std::max(res, (-slack).maxCoeff());              // primal violation
    res = std::max(res, (-lambda).maxCoeff());             // dual negativity
    res = std::max(res, (lambda.array() * slack.array()).abs().maxCoeff());
    return std::max(res, 0.0);
}

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    j["data"] = data;
    return j;
}

Matrix matrix_from_json(const json& j) {
    const Eigen::Index rows = j.at("rows").get<Eigen::Index>();
    const Eigen::Index cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw SchemaError("matrix data length does not match dimensions");
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
    return m;
}

}  // namespace

std::string instance_to_json(const MpqpInstance& inst) {
    json j;
    j["format_version"] = 1;
    j["num_vars"] = inst.num_vars();
    j["num_params"] = inst.num_params();
    j["num_constraints"] = inst.num_constraints();
    j["A"] = matrix_to_json(inst.A());
    j["B"] = matrix_to_json(inst.B());
    j["C"] = matrix_to_json(inst.C());
    j["D"] = matrix_to_json(inst.D());
    std::vector<double> e(inst.e().data(), inst.e().data() + inst.e().size());
    j["e"] = e;
    return j.dump(2);
}

MpqpInstance instance_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw SchemaError("instance bundle is not valid JSON");
    const auto evec = j.at("e").get<std::vector<double>>();
    Vector e(static_cast<Eigen::Index>(evec.size()));
    for (std::size_t i = 0; i < evec.size(); ++i) e[static_cast<Eigen::Index>(i)] = evec[i];
    return MpqpInstance(matrix_from_json(j.at("A")), matrix_from_json(j.at("B")),
                        matrix_from_json(j.at("C")), matrix_from_json(j.at("D")), e);
}

}  // namespace sensopf
