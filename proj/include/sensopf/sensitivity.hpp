#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sensopf/mpqp.hpp"

namespace sensopf {

/// Row partition of (C, D, e, λ) into active (tilde) and inactive (bar)
/// blocks for one solved instance.
struct ActivePartition {
    std::vector<int> active;    // sorted row indices
    std::vector<int> inactive;
    Matrix Ct, Dt;              // active rows of C and D
    Vector et, lambda_t;        // active rows of e and the solver duals
    Matrix Cbar, Dbar;
    Vector ebar;
    Vector theta;               // parameter the partition belongs to

    int active_count() const { return static_cast<int>(active.size()); }
};

/// Classifies rows by slack. A row is active iff |slack| <= tol, with
/// tol = 1e-7 * (1 + ||Dθ+e||_inf) when none is given. A positive dual on a
/// row whose slack says inactive is reported as AmbiguousActivity.
ActivePartition partition_constraints(const MpqpInstance& inst, const OpfSolution& sol, double tol = -1.0);

struct SensitivityOptions {
    double dual_tol = 1e-7;          // weakly-active classification threshold
    double pinv_cutoff = 1e-10;      // eigenvalue cutoff relative to the largest
    double region_margin = 1e-10;    // margin on the strict region inequalities
    double consistency_rel = 1e-12;  // range-consistency tolerance (rank-deficient case)
};

struct JacobianResult {
    Matrix J;          // dx/dθ, num_vars x num_params
    bool licq_holds;   // active rows linearly independent
};

/// Closed-form minimizer sensitivity J = A⁻¹B - A⁻¹C̃'G⁺(C̃A⁻¹B - D̃) with
/// G = C̃A⁻¹C̃'. Valid whether or not C̃ has full row rank; with an empty
/// active set J = A⁻¹B. Throws DegenerateDuals when the minimum-norm dual of
/// the active rows has an entry at or below dual_tol.
JacobianResult jacobian(const MpqpInstance& inst, const ActivePartition& part,
                        const SensitivityOptions& opts = {});

/// Affine offset A⁻¹C̃'G⁺ẽ so that x = J θ + offset on the critical region.
Vector affine_offset(const MpqpInstance& inst, const ActivePartition& part,
                     const SensitivityOptions& opts = {});

/// Tests whether θ' shares the base point's active set: the minimum-norm dual
/// at θ' stays strictly positive, the inactive rows stay strictly slack, and
/// (when C̃ is rank deficient) the active equality system stays consistent.
bool in_critical_region(const MpqpInstance& inst, const ActivePartition& part,
                        const Vector& theta_prime, const SensitivityOptions& opts = {});

/// One labeled training sample.
struct SensitivityRecord {
    Vector theta;
    Vector x;
    std::optional<Matrix> jacobian;  // absent for degenerate or value-only samples
    bool degenerate = false;
    std::vector<int> active_set;
    bool licq_holds = true;
};

/// Solves, partitions, and attaches J unless the sample is dual-degenerate
/// (then the record is value-only). Throws InfeasibleQp when no dispatch
/// satisfies the constraints.
SensitivityRecord build_record(const MpqpInstance& inst, const Vector& theta,
                               const SensitivityOptions& opts = {});

// Line-delimited JSON: {"theta":[...],"x":[...],"jacobian":[...]|null,
//  "degenerate":bool,"active_set":[...],"licq":bool}
std::string record_to_json(const SensitivityRecord& rec);
SensitivityRecord record_from_json(const std::string& line);
void save_records(const std::vector<SensitivityRecord>& records, const std::string& path);
std::vector<SensitivityRecord> load_records(const std::string& path);

/// Symmetric PSD pseudo-inverse via eigendecomposition; eigenvalues at or
/// below cutoff_rel * λ_max count as zero. Returns the rank alongside.
std::pair<Matrix, int> pseudo_inverse(const Matrix& sym, double cutoff_rel);

}  // namespace sensopf
