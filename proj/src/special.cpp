#include <cmath>

#include "ldtcc/distributions.hpp"

namespace ldtcc {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kSqrt2Pi = 2.5066282746310002;
constexpr double kLogSqrt2Pi = 0.9189385332046727;
constexpr double kInvSqrtPi = 0.5641895835477563;
}  // namespace

double erfcx(double x) {
    if (x < 2.0) return std::exp(x * x) * std::erfc(x);
    // Laplace continued fraction, evaluated bottom-up. Converges quickly
    // for x >= 2 and never over/underflows.
    double t = 0.0;
    for (int k = 60; k >= 1; --k) t = (0.5 * k) / (x + t);
    return kInvSqrtPi / (x + t);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / kSqrt2); }

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / kSqrt2Pi; }

double log_normal_cdf(double x) {
    if (x > -1.0) {
        double p = normal_cdf(x);
        return std::log(p);
    }
    // Phi(x) = erfcx(-x/sqrt2) exp(-x^2/2) / 2 for x < 0.
    return std::log(0.5 * erfcx(-x / kSqrt2)) - 0.5 * x * x;
}

double inverse_mills(double x) {
    if (x > -1.0) return normal_pdf(x) / normal_cdf(x);
    // phi/Phi = sqrt(2/pi) / erfcx(-x/sqrt2); the exp(-x^2/2) factors cancel.
    return (2.0 * kInvSqrtPi / kSqrt2) / erfcx(-x / kSqrt2);
}

namespace {

// Rational lower-region/central approximation (Acklam). Gives ~1e-9
// relative error, then Newton against normal_cdf finishes the job.
double inv_cdf_seed(double p) {
    static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                -2.759285104469687e+02, 1.383577518672690e+02,
                                -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double p_low = 0.02425;
    if (p < p_low) {
        double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    if (p > 1.0 - p_low) {
        double q = std::sqrt(-2.0 * std::log(1.0 - p));
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    double q = p - 0.5;
    double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double normal_cdf_inv(double p) {
    require(p > 0.0 && p < 1.0, "normal_cdf_inv: p must lie strictly inside (0,1)");
    double x = inv_cdf_seed(p);
    // Two Newton polishes. The residual-over-density ratio is formed in log
    // space so the far tail (density below DBL_MIN range) stays usable.
    for (int it = 0; it < 2; ++it) {
        double e = normal_cdf(x) - p;
        if (e == 0.0) break;
        double log_ratio = std::log(std::fabs(e)) + 0.5 * x * x + kLogSqrt2Pi;
        double step = (e > 0 ? 1.0 : -1.0) * std::exp(log_ratio);
        x -= step;
    }
    return x;
}

double log_sum_exp(const Vector& v) {
    double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (int i = 0; i < v.size(); ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

}  // namespace ldtcc
