#pragma once

#include <cstdint>
#include <vector>

#include "ldtcc/distributions.hpp"
#include "ldtcc/ldt.hpp"
#include "ldtcc/limit_state.hpp"
#include "ldtcc/nlp.hpp"

namespace ldtcc {

struct Objective {
    std::function<double(const Vector&)> value;
    std::function<Vector(const Vector&)> grad;
};

/// Deterministic constraints on the decision u: a box plus optional linear
/// equalities A u = b (e.g. the allocation simplex).
struct DecisionDomain {
    Vector lower, upper;
    Matrix eq_a;  // 0 x m when absent
    Vector eq_b;
};

enum class Sense {
    MinObjective,  // min J(u) with a fixed threshold z
    MaxThreshold   // max z with the event F(u, xi) >= -z (return-level form)
};

struct ChanceSpec {
    const LimitStateModel* model = nullptr;
    MixtureSpec dist;
    double z = 0.0;  // fixed threshold, used when sense == MinObjective
    double alpha = 0.0;
    Objective objective;  // ignored when sense == MaxThreshold
    DecisionDomain domain;
    Sense sense = Sense::MinObjective;
};

/// Offsets of the named solution parts inside the stacked solver vector.
struct VariableLayout {
    int dim = 0;
    int n = 0;             // xi dimension
    int num_components = 0;
    int u_offset = 0, u_size = 0;
    int xi_offset = -1;
    int eta_offset = -1;
    int lambda_offset = -1;
    int z_offset = -1;  // MaxThreshold decision variable
    std::vector<int> xi_tilde_offsets;
    std::vector<int> lambda_tilde_offsets;
    int p_offset = -1, p_size = 0;
    int t_offset = -1;
};

struct RecoveredPoint {
    Vector u;
    Vector xi_star, eta_star;
    double lambda = std::numeric_limits<double>::quiet_NaN();
    double z = std::numeric_limits<double>::quiet_NaN();  // decision z (MaxThreshold)
    double threshold = std::numeric_limits<double>::quiet_NaN();  // event threshold
    std::vector<Vector> xi_tilde;
    std::vector<double> lambda_tilde;
    Vector p;
    double t = std::numeric_limits<double>::quiet_NaN();
};

struct BuiltProblem {
    NlpProblem problem;
    VariableLayout layout;
    Sense sense = Sense::MinObjective;
    double fixed_z = 0.0;
    double alpha = 0.0;

    RecoveredPoint recover(const Vector& x) const;
    Vector pack(const RecoveredPoint& point) const;
    double threshold_of(const Vector& x) const;
};

/// Single-level chance-constrained program for a single Gaussian.
/// Variables (u, xi*, lambda); constraints F(u, xi*) = z and
/// Sigma^{-1}(xi* - mu) = lambda grad F; probability constraint in the
/// algebraic form -sqrt(2 I) <= PhiInv(alpha) for order 1, log-space with
/// the orthogonal-determinant correction (FD gradients) for order 2.
BuiltProblem build_gaussian_cc(const ChanceSpec& spec, int order);

/// Single-level first-order mixture program: variables (u, xi*, eta*,
/// lambda), the cumulant-generating-function fixed point, and the weighted
/// half-space tail sum in log space.
BuiltProblem build_mixture_cc_first(const ChanceSpec& spec);

/// Single-level second-order mixture program with per-component tangency
/// points (xi~_i, lambda~_i); tangency and probability blocks use FD
/// gradients. The curvature condition is verified post-solve, not imposed.
BuiltProblem build_mixture_cc_second(const ChanceSpec& spec);

/// Sigmoidal sample-average approximation with N auxiliary variables p.
BuiltProblem build_saa(const ChanceSpec& spec, const Matrix& samples, double nu, double tau);

/// CVaR outer approximation with auxiliary (p, t).
BuiltProblem build_cvar(const ChanceSpec& spec, const Matrix& samples);

enum class CcMethod { Ldt1, Ldt2, Saa, Cvar };

const char* to_string(CcMethod m);

struct MethodSpec {
    CcMethod method = CcMethod::Ldt1;
    Matrix samples;  // SAA / CVaR
    double nu = 200.0;
    double tau = 200.0;
};

/// Dispatches on the method and on M (Gaussian vs mixture builders).
BuiltProblem build_chance_problem(const ChanceSpec& spec, const MethodSpec& method);

/// Threshold-maximization variant (the value-at-risk problem): flips the
/// sense so z becomes a decision variable with event threshold -z, then
/// dispatches to the selected chance-constraint machinery.
BuiltProblem build_var_max(const ChanceSpec& spec, const MethodSpec& method);

/// Initial stack: u at the domain midpoint (uniform simplex point when the
/// simplex is present) unless u0_override is given, dominating-point
/// variables from a standalone solve_ldt_minimizer at u0, tangency
/// variables from tangency_first.
Vector initial_point(const ChanceSpec& spec, const BuiltProblem& built,
                     const LdtOptions& ldt_opts = {}, const Vector& u0_override = {});

struct SweepOptions {
    SolverOptions nlp;
    LdtOptions ldt;
    Vector u0_override;  // cold-start decision, when the midpoint is unusable
    bool use_warm_start = true;
    long long mc_cap = 10000000;  // feasibility-check sample budget
    std::uint64_t mc_seed = 777;
    std::function<void(int, double)> on_step;  // (index, alpha)
};

struct SweepRecord {
    double alpha = 0.0;
    NlpResult result;
    RecoveredPoint point;
    double objective = std::numeric_limits<double>::quiet_NaN();
    double prob_estimate = std::numeric_limits<double>::quiet_NaN();
    double correction = std::numeric_limits<double>::quiet_NaN();
    double mc_prob = std::numeric_limits<double>::quiet_NaN();
    double mc_se = std::numeric_limits<double>::quiet_NaN();
    bool mc_checked = false;
    bool warm_started = false;
    double wall_seconds = 0.0;
    double min_curvature_eig = std::numeric_limits<double>::quiet_NaN();  // order-2 check
    std::string error;
};

/// Solves the problem for each alpha in (strictly decreasing) order,
/// warm-starting every step from the previous optimal stack. Failed steps
/// are recorded and the sweep continues with a cold start.
std::vector<SweepRecord> alpha_sweep(const ChanceSpec& spec, const std::vector<double>& alphas,
                                     const MethodSpec& method, const SweepOptions& opts = {});

}  // namespace ldtcc
