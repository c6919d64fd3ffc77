#pragma once

#include <optional>
#include <vector>

#include "sensopf/feeder.hpp"

namespace sensopf {

/// Parametric QP  min_x 1/2 x'Ax - x'B θ  s.t.  C x <= D θ + e.
/// For the inverter dispatch instantiation the M = 2N + 2I rows are ordered
/// lower-voltage block, upper-voltage block, lower-rating block, upper-rating
/// block. Immutable after construction; the A factorization and the products
/// A⁻¹B, A⁻¹C', CA⁻¹C' are cached here and shared by all solves.
class MpqpInstance {
public:
    MpqpInstance(Matrix A, Matrix B, Matrix C, Matrix D, Vector e);

    const Matrix& A() const { return A_; }
    const Matrix& B() const { return B_; }
    const Matrix& C() const { return C_; }
    const Matrix& D() const { return D_; }
    const Vector& e() const { return e_; }

    int num_vars() const { return static_cast<int>(A_.rows()); }
    int num_params() const { return static_cast<int>(B_.cols()); }
    int num_constraints() const { return static_cast<int>(C_.rows()); }

    Vector solve_A(const Vector& rhs) const { return A_llt_.solve(rhs); }
    Matrix solve_A(const Matrix& rhs) const { return A_llt_.solve(rhs); }
    const Matrix& A_inv_B() const { return A_inv_B_; }
    const Matrix& A_inv_Ct() const { return A_inv_Ct_; }
    const Matrix& C_Ainv_Ct() const { return C_Ainv_Ct_; }

    /// Right-hand side D θ + e of the constraint block.
    Vector constraint_bound(const Vector& theta) const;

    /// 1/2 x'Ax - x'Bθ
    double objective(const Vector& x, const Vector& theta) const;

    /// Scale-aware activity tolerance: 1e-7 * (1 + ||Dθ+e||_inf).
    double activity_tolerance(const Vector& theta) const;

private:
    Matrix A_, B_, C_, D_;
    Vector e_;
    Eigen::LLT<Matrix> A_llt_;
    Matrix A_inv_B_;
    Matrix A_inv_Ct_;
    Matrix C_Ainv_Ct_;
};

/// Instantiates the dispatch MPQP from the linearized grid model:
///   A = 2 Fi'RFi,  B = 2 Fi'RFl [0 I],  C = [-XFi; XFi; -I; I],
///   D = [[R, -XFl]; [-R, XFl]; 0; 0],  e = [ε1; ε1; q̄; q̄].
MpqpInstance assemble_mpqp(const GridMatrices& gm, const Feeder& feeder);

enum class SolveStatus { Optimal, Infeasible, IterationLimit };

const char* to_string(SolveStatus status);

struct SolveOptions {
    int max_iterations = 0;  // 0 means the default cap 50 * (M + I)
    std::optional<std::vector<int>> warm_start;  // previous active set; off by default
};

struct OpfSolution {
    Vector theta;
    Vector x;                     // inverter reactive setpoints, pu
    Vector lambda;                // dual multipliers, one per constraint row
    std::vector<int> active_set;  // sorted row indices with |slack| <= activity tolerance
    double kkt_residual = 0.0;
    SolveStatus status = SolveStatus::Optimal;
};

/// Dual active-set solve. Starts from the unconstrained minimizer A⁻¹Bθ and
/// enforces the most violated row per iteration, dropping blocking rows as
/// their multipliers hit zero. Returns exact primal/dual/active-set output;
/// reentrant, all mutable state is per call.
OpfSolution solve_qp(const MpqpInstance& inst, const Vector& theta, const SolveOptions& options = {});

/// Max over the four KKT condition residuals (stationarity, primal
/// feasibility, dual nonnegativity, complementarity). Zero at an exact
/// KKT point.
double kkt_residual(const MpqpInstance& inst, const Vector& theta, const Vector& x, const Vector& lambda);

/// Debug bundle: all five matrices as row-major arrays with dimensions.
std::string instance_to_json(const MpqpInstance& inst);
MpqpInstance instance_from_json(const std::string& text);

}  // namespace sensopf
