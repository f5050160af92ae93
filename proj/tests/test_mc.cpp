#include <cmath>

#include "doctest.h"
#include "ldtcc/mc.hpp"
#include "ldtcc/rng.hpp"
#include "test_helpers.hpp"

using namespace ldtcc;
using namespace ldtcc::testing;

TEST_CASE("median and tail probabilities") {
    LinearModel model(Vector::Ones(1));
    MixtureSpec std1 = standard_normal(1);
    Vector u = Vector::Zero(1);

    McEstimate mid = mc_probability(std1, model, u, 0.0, 1000000, 5);
    CHECK(std::fabs(mid.p_hat - 0.5) <= 5.0 * mid.standard_error);

    McEstimate tail = mc_probability(std1, model, u, 3.0, 10000000, 6);
    double truth = normal_cdf(-3.0);
    CHECK(std::fabs(tail.p_hat - truth) <= 5.0 * tail.standard_error);

    McEstimate again = mc_probability(std1, model, u, 3.0, 1000000, 6);
    McEstimate again2 = mc_probability(std1, model, u, 3.0, 1000000, 6);
    CHECK(again.hit_count == again2.hit_count);

    McEstimate other_seed = mc_probability(std1, model, u, 0.0, 100000, 7);
    McEstimate this_seed = mc_probability(std1, model, u, 0.0, 100000, 8);
    CHECK(other_seed.hit_count != this_seed.hit_count);

    CHECK_THROWS_AS(mc_probability(std1, model, u, 0.0, 0, 1), std::invalid_argument);
}

TEST_CASE("interval coverage at a known tail") {
    LinearModel model(Vector::Ones(1));
    MixtureSpec std1 = standard_normal(1);
    Vector u = Vector::Zero(1);
    double truth = normal_cdf(-3.0);
    int covered = 0;
    const int reps = 200;
    for (int r = 0; r < reps; ++r) {
        McEstimate est = mc_probability(std1, model, u, 3.0, 200000, 1000 + r);
        if (std::fabs(est.p_hat - truth) <= 3.0 * est.standard_error) ++covered;
    }
    CHECK(covered >= 0.99 * reps);
}

TEST_CASE("log_error conventions") {
    McEstimate ref;
    ref.p_hat = 1e-4;
    ref.hit_count = 10;
    CHECK(log_error(1e-4, ref) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(log_error(1e-3, ref) == doctest::Approx(1.0).epsilon(1e-12));
    McEstimate empty;
    empty.p_hat = 0.0;
    CHECK(std::isinf(log_error(1e-4, empty)));
    CHECK(log_error(1e-4, empty) > 0);
    CHECK_THROWS_AS(log_error(0.0, ref), std::invalid_argument);
}

TEST_CASE("portfolio quantile estimation") {
    // Single stock: the alpha-quantile of v(xi) is exp((theta - sigma^2/2) T
    // + sqrt(T) Phi^{-1}(alpha) sd).
    double theta = 0.05, sigma = 0.3, horizon = 4.0, sd = 0.2, alpha = 0.025;
    PortfolioModel model(Vector::Constant(1, theta), Vector::Constant(1, sigma), horizon);
    MixtureSpec dist = MixtureSpec::single(
        GaussianSpec{Vector::Zero(1), Matrix::Constant(1, 1, sd * sd)});
    Vector u = Vector::Ones(1);

    double exact = std::exp((theta - 0.5 * sigma * sigma) * horizon +
                            std::sqrt(horizon) * normal_cdf_inv(alpha) * sd);
    double est = var_quantile(dist, model, u, alpha, 1000000, 13);
    CHECK(std::fabs(est - exact) <= 0.01 * exact);

    // alpha = 1/2 is the empirical median; scaling u scales the quantile.
    double med = var_quantile(dist, model, u, 0.5, 200000, 14);
    double med_exact = std::exp((theta - 0.5 * sigma * sigma) * horizon);
    CHECK(std::fabs(med - med_exact) <= 0.01 * med_exact);
    double scaled = var_quantile(dist, model, 2.0 * u, 0.5, 200000, 14);
    CHECK(scaled == doctest::Approx(2.0 * med).epsilon(1e-12));

    CHECK_THROWS_AS(var_quantile(dist, model, u, 1e-4, 100000, 1), std::invalid_argument);
}
