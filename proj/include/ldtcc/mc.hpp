#pragma once

#include <cstdint>

#include "ldtcc/distributions.hpp"
#include "ldtcc/limit_state.hpp"

namespace ldtcc {

class PortfolioModel;

struct McEstimate {
    double p_hat = 0.0;
    long long n = 0;
    double standard_error = 0.0;  // sqrt(p(1-p)/N)
    std::uint64_t seed = 0;
    long long hit_count = 0;
};

/// Tail probability P(F(u, xi) >= z) by plain Monte Carlo. Samples are
/// drawn in fixed-size chunks whose seeds derive from `seed`, so the result
/// is independent of chunking and deterministic per seed.
McEstimate mc_probability(const MixtureSpec& dist, const LimitStateModel& model,
                          const Vector& u, double z, long long n, std::uint64_t seed);

/// log10(estimate) - log10(reference p_hat); +inf when the reference
/// recorded no hits (rendered as the usual divergent-cell convention).
double log_error(double estimate, const McEstimate& reference);

/// Empirical alpha-quantile of the portfolio return sum_i v_i(xi_i) u_i.
/// Requires n * alpha >= 100 so the order statistic is meaningful.
double var_quantile(const MixtureSpec& dist, const PortfolioModel& model, const Vector& u,
                    double alpha, long long n, std::uint64_t seed);

}  // namespace ldtcc
