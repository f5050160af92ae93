#pragma once

#include <cstdint>
#include <vector>

#include "ldtcc/types.hpp"

namespace ldtcc {

// ---------------------------------------------------------------------------
// Scalar normal utilities
// ---------------------------------------------------------------------------

/// Standard normal CDF. Accurate in the far tail (relative error holds down
/// to Phi(-37) and below), so log-probabilities of extremely rare events
/// keep their significant digits.
double normal_cdf(double x);

/// Natural log of the standard normal CDF, stable for arbitrarily negative x.
double log_normal_cdf(double x);

/// Inverse of normal_cdf on (0,1). Rational initial guess polished by
/// Newton steps against normal_cdf, so the round trip holds to ~1e-15.
double normal_cdf_inv(double p);

/// Standard normal density.
double normal_pdf(double x);

/// phi(x)/Phi(x), the derivative of log Phi. Stable for x << 0.
double inverse_mills(double x);

/// Scaled complementary error function exp(x^2) erfc(x) for x >= 0.
double erfcx(double x);

/// log(sum exp(v_i)) without overflow.
double log_sum_exp(const Vector& v);

// ---------------------------------------------------------------------------
// Distribution types
// ---------------------------------------------------------------------------

struct GaussianSpec {
    Vector mean;
    Matrix cov;

    int dim() const { return static_cast<int>(mean.size()); }

    /// Checks symmetry and strict positive definiteness; throws
    /// std::invalid_argument on violation.
    void validate() const;
};

struct MixtureComponent {
    double weight = 1.0;
    GaussianSpec gaussian;
};

struct MixtureSpec {
    std::vector<MixtureComponent> components;

    int dim() const { return components.empty() ? 0 : components.front().gaussian.dim(); }
    int size() const { return static_cast<int>(components.size()); }

    /// Weights positive and summing to 1, all components same dimension and SPD.
    void validate() const;

    Vector mean() const;

    /// Single Gaussian with the mixture's mean and covariance.
    GaussianSpec moment_match() const;

    static MixtureSpec single(GaussianSpec g);
};

/// Per-component Cholesky factor L (cov = L L^T), the symmetric square root
/// cov^{1/2}, and inverse applications. The square root is computed by
/// eigendecomposition because the second-order probability formulas use
/// cov^{1/2} on both sides of the Hessian.
class CholeskyCache {
public:
    explicit CholeskyCache(const GaussianSpec& g);

    const Matrix& lower() const { return lower_; }
    const Matrix& sqrt() const { return sqrt_; }
    double log_det() const { return log_det_; }

    /// cov^{-1} x
    Vector solve(const Vector& x) const;
    /// Dense cov^{-1}.
    Matrix inverse() const;
    /// L^{-1} x, so that |whiten(d)|_2 = |d|_{cov^{-1}}.
    Vector whiten(const Vector& d) const;
    /// d^T cov^{-1} d
    double mahalanobis2(const Vector& d) const;

private:
    Matrix lower_;
    Matrix sqrt_;
    double log_det_ = 0.0;
};

// ---------------------------------------------------------------------------
// Cumulant generating function and rate functions
// ---------------------------------------------------------------------------

/// S(eta) = log sum_i w_i exp(eta'mu_i + eta'Sigma_i eta / 2), evaluated in
/// the log domain so it survives exponents far beyond 700.
double cgf(const MixtureSpec& dist, const Vector& eta);

/// Gradient of the cumulant generating function: the softmax-weighted
/// combination of mu_i + Sigma_i eta.
Vector cgf_grad(const MixtureSpec& dist, const Vector& eta);

/// Hessian of the cumulant generating function (positive definite).
Matrix cgf_hess(const MixtureSpec& dist, const Vector& eta);

/// Softmax weights of the components at eta (sums to 1).
Vector cgf_component_weights(const MixtureSpec& dist, const Vector& eta);

/// Gaussian rate function |xi - mu|^2_{cov^{-1}} / 2 via triangular solve.
double rate_gaussian(const GaussianSpec& g, const Vector& xi);
double rate_gaussian(const CholeskyCache& chol, const Vector& mean, const Vector& xi);

struct RateResult {
    double value = 0.0;
    Vector eta;  // argmax of <eta,xi> - S(eta)
};

/// Legendre transform I(xi) = max_eta { <eta,xi> - S(eta) } by damped Newton
/// iteration; the maximizer satisfies grad S(eta) = xi on return.
RateResult rate_mixture(const MixtureSpec& dist, const Vector& xi);

// ---------------------------------------------------------------------------
// Sampling and fitting
// ---------------------------------------------------------------------------

/// count x n matrix of draws; deterministic for a given seed.
Matrix sample(const MixtureSpec& dist, long long count, std::uint64_t seed);

/// Expectation-maximization fit of an M-component mixture to N x n data.
/// Seeding is k-means++ style on the data rows; every M-step floors the
/// covariance eigenvalues at 1e-8 * trace(sample cov)/n. When provided,
/// `loglik_trace` receives the per-iteration log-likelihoods.
MixtureSpec fit_em(const Matrix& data, int M, std::uint64_t seed,
                   std::vector<double>* loglik_trace = nullptr);

}  // namespace ldtcc
