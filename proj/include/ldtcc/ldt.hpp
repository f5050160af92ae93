#pragma once

#include <cstdint>
#include <vector>

#include "ldtcc/distributions.hpp"
#include "ldtcc/limit_state.hpp"
#include "ldtcc/nlp.hpp"

namespace ldtcc {

/// Dominating point of the rare event {F(u, xi) >= z} together with the
/// dual vector eta* = grad I(xi*), the constraint multiplier lambda and
/// residual diagnostics.
struct LdtSolution {
    Vector xi_star;
    Vector eta_star;
    double lambda = 0.0;
    double rate_value = 0.0;
    double kkt_residual = kInf;
    double constraint_gap = kInf;  // F(u, xi*) - z
};

struct LdtOptions {
    SolverOptions nlp;
    int multistarts = 5;           // extra perturbed starts when curvature is Unknown
    std::uint64_t seed = 0x1d7cc;  // drives multistart perturbations only
};

/// Solves min { I(xi) : F(u, xi) = z }. Gaussian inputs use the quadratic
/// rate function directly; mixtures solve the coupled (xi, eta) system with
/// the cumulant-generating-function fixed point. Initialization walks the
/// scaled-gradient ray from the mean and bisects onto the level set; the
/// NLP solve is followed by a Newton polish of the KKT system.
LdtSolution solve_ldt_minimizer(const MixtureSpec& dist, const LimitStateModel& model,
                                const Vector& u, double z, const LdtOptions& opts = {});

struct ComponentEstimate {
    double log_prob = -kInf;  // log of this component's weighted contribution
    double distance = 0.0;    // Phi argument magnitude
    double correction = 1.0;
    bool curvature_ok = true;
};

/// Probability estimate carried in log space; `value` is exponentiated at
/// the boundary and `correction` is the multiplicative second-order factor.
struct ProbEstimate {
    double value = 0.0;
    double log_value = -kInf;  // natural log
    int order = 1;
    double correction = 1.0;
    bool curvature_ok = true;
    std::vector<ComponentEstimate> components;
};

/// Determinant of SPD-expected H restricted to the hyperplane orthogonal to
/// the unit vector n_hat: (n_hat' H^{-1} n_hat) det H. Signed; the caller
/// validates positivity.
double det_perp(const Matrix& h, const Vector& n_hat);

/// First-order Gaussian estimate Phi(-sqrt(2 I(xi*))).
ProbEstimate p1_gaussian(const GaussianSpec& g, const LimitStateModel& model, const Vector& u,
                         double z, const LdtSolution& sol);

/// Second-order Gaussian estimate with the orthogonal-determinant
/// curvature correction. Throws CurvatureError when the correction is
/// undefined; callers may fall back to order 1.
ProbEstimate p2_gaussian(const GaussianSpec& g, const LimitStateModel& model, const Vector& u,
                         double z, const LdtSolution& sol);

/// Point where a Gaussian component's rate contour is tangent to the
/// first- or second-order Taylor level set.
struct TangencyPoint {
    Vector xi;
    double lambda = 0.0;
    int component = -1;
    double level_gap = 0.0;          // defining level-set residual
    double stationarity = 0.0;       // defining stationarity residual
    double min_curvature_eig = 0.0;  // smallest eig of I - lambda S B S (order 2)
};

/// Closed-form tangency onto the hyperplane through xi_star with normal
/// `grad`.
TangencyPoint tangency_first(const GaussianSpec& comp, const Vector& grad,
                             const Vector& xi_star, int component_index = -1);

/// Tangency onto the quadratic Taylor level set; solved as an
/// equality-constrained program started from tangency_first, then Newton
/// polished and verified against its optimality system.
TangencyPoint tangency_second(const GaussianSpec& comp, const LimitStateModel& model,
                              const Vector& u, const Vector& xi_star, int component_index = -1,
                              const SolverOptions& opts = {});

/// First-order mixture estimate: weighted sum of per-component half-space
/// tails.
ProbEstimate p1_mixture(const MixtureSpec& dist, const LimitStateModel& model, const Vector& u,
                        double z, const LdtSolution& sol);

/// Second-order mixture estimate with per-component tangency points and
/// determinant corrections.
ProbEstimate p2_mixture(const MixtureSpec& dist, const LimitStateModel& model, const Vector& u,
                        double z, const LdtSolution& sol);

}  // namespace ldtcc
