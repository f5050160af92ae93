#pragma once

#include <functional>
#include <string>
#include <tuple>
#include <vector>

#include "ldtcc/types.hpp"

namespace ldtcc {

/// One block of constraints c(x) = 0 (equality) or c(x) <= 0 (inequality).
/// A missing jacobian callback means finite differences; fd_jacobian forces
/// finite differences even when an analytic callback is present (the two
/// are then cross-checked once at the start point). row_scaling, when set,
/// divides each row so residuals are judged in comparable units.
struct ConstraintBlock {
    int size = 0;
    std::function<Vector(const Vector&)> value;
    std::function<Matrix(const Vector&)> jacobian;
    bool fd_jacobian = false;
    Vector row_scaling;  // empty -> ones
};

/// Small dense smooth program
///   min f(x)  s.t.  c_E(x) = 0,  c_I(x) <= 0,  lower <= x <= upper.
/// variable_scaling, when set, declares the natural magnitude of each
/// variable; the solver works in the scaled coordinates internally.
struct NlpProblem {
    int dim = 0;
    std::function<double(const Vector&)> objective;
    std::function<Vector(const Vector&)> objective_grad;  // null -> FD
    std::vector<ConstraintBlock> equalities;
    std::vector<ConstraintBlock> inequalities;
    Vector lower, upper;      // empty -> unbounded
    Vector variable_scaling;  // empty -> ones; must be positive

    int num_eq() const;
    int num_ineq() const;
};

enum class SolveStatus { Optimal, MaxIter, Infeasible, NumericFailure };

const char* to_string(SolveStatus s);

struct NlpResult {
    Vector x;
    Vector eq_multipliers;
    Vector ineq_multipliers;  // >= 0
    SolveStatus status = SolveStatus::NumericFailure;
    double stationarity = kInf;
    double feasibility = kInf;
    double complementarity = kInf;
    int iterations = 0;        // outer
    int inner_iterations = 0;  // total quasi-Newton steps
    std::string message;
};

struct SolverOptions {
    double tol_stationarity = 1e-6;
    double tol_feasibility = 1e-8;
    int max_outer = 100;
    int max_inner = 500;
    double initial_penalty = 10.0;
    double penalty_growth = 10.0;
    double fd_step = 1e-6;  // relative step for FD gradients/Jacobians
    bool verbose = false;
    /// Called once per outer iteration with (outer, stationarity, feasibility).
    std::function<void(int, double, double)> monitor;
};

/// Augmented-Lagrangian outer loop over a projected limited-memory
/// quasi-Newton inner minimization. Deterministic: identical problem,
/// start and options give an identical iterate sequence.
NlpResult solve(const NlpProblem& problem, const Vector& x0, const SolverOptions& opts = {});

/// (stationarity, feasibility, complementarity) residuals at (x, multipliers),
/// with bound multipliers folded in through the projection.
std::tuple<double, double, double> kkt_residual(const NlpProblem& problem, const Vector& x,
                                                const Vector& eq_mult, const Vector& ineq_mult);

}  // namespace ldtcc
