#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace ldtcc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Runtime failure of a numerical procedure (non-convergence, singular
/// system, callback blow-up). Carries a human-readable diagnostic.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Second-order curvature correction is undefined (H singular or
/// orthogonal determinant nonpositive). Callers may fall back to order 1.
class CurvatureError : public NumericError {
public:
    CurvatureError(const std::string& what, int component = -1)
        : NumericError(what), component_(component) {}
    int component() const { return component_; }

private:
    int component_;
};

/// The requested threshold has no crossing reachable from the mean, so the
/// dominating-point problem cannot be initialized.
class InfeasibleThreshold : public NumericError {
public:
    explicit InfeasibleThreshold(const std::string& what) : NumericError(what) {}
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw std::invalid_argument(what);
}

}  // namespace ldtcc
