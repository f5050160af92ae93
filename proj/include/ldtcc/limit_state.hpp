#pragma once

#include "ldtcc/types.hpp"

namespace ldtcc {

enum class Curvature { Concave, Convex, Unknown };

/// Limit-state map F(u, xi) with derivatives. Default derivative
/// implementations fall back to central finite differences of value();
/// models with closed-form derivatives override them and report
/// analytic_derivatives() = true. Models are immutable and reentrant.
class LimitStateModel {
public:
    virtual ~LimitStateModel() = default;

    virtual int dim_u() const = 0;
    virtual int dim_xi() const = 0;
    virtual double value(const Vector& u, const Vector& xi) const = 0;

    virtual Vector grad_xi(const Vector& u, const Vector& xi) const;
    virtual Matrix hess_xi(const Vector& u, const Vector& xi) const;
    virtual Vector grad_u(const Vector& u, const Vector& xi) const;
    /// Mixed second derivatives, entry (k,l) = d^2F / du_k dxi_l.
    virtual Matrix grad_u_xi(const Vector& u, const Vector& xi) const;

    /// Curvature of F(u, .) set by construction, not auto-detected.
    virtual Curvature xi_curvature() const { return Curvature::Unknown; }
    virtual bool analytic_derivatives() const { return false; }

    /// Relative step used by the finite-difference fallbacks.
    virtual double fd_step() const { return 1e-6; }
};

/// Log-normal stock model: component i is worth
/// v_i(xi_i) = exp((theta_i - sigma_i^2/2) T + sqrt(T) xi_i) at the horizon,
/// and F(u, xi) = -sum v_i(xi_i) u_i is the negated portfolio value.
/// Concave in xi for u >= 0.
class PortfolioModel : public LimitStateModel {
public:
    PortfolioModel(Vector theta, Vector sigma, double horizon);

    int dim_u() const override { return static_cast<int>(theta_.size()); }
    int dim_xi() const override { return static_cast<int>(theta_.size()); }
    double value(const Vector& u, const Vector& xi) const override;
    Vector grad_xi(const Vector& u, const Vector& xi) const override;
    Matrix hess_xi(const Vector& u, const Vector& xi) const override;
    Vector grad_u(const Vector& u, const Vector& xi) const override;
    Matrix grad_u_xi(const Vector& u, const Vector& xi) const override;
    Curvature xi_curvature() const override { return Curvature::Concave; }
    bool analytic_derivatives() const override { return true; }

    /// Stock values v_i(xi_i).
    Vector stock_values(const Vector& xi) const;
    double horizon() const { return horizon_; }
    const Vector& theta() const { return theta_; }
    const Vector& sigma() const { return sigma_; }

private:
    Vector theta_, sigma_;
    double horizon_;
};

/// Rectangular short column under axial load xi_F, bending moment xi_M and
/// log yield stress xi_Y:
///   F(u, xi) = 4 xi_M / (w h^2 e^{xi_Y}) + xi_F^2 / (w^2 h^2 e^{2 xi_Y}),
/// with design u = (w, h) inside a positive box.
class ShortColumnModel : public LimitStateModel {
public:
    ShortColumnModel(double lw = 5.0, double uw = 15.0, double lh = 15.0, double uh = 25.0);

    int dim_u() const override { return 2; }
    int dim_xi() const override { return 3; }
    double value(const Vector& u, const Vector& xi) const override;
    Vector grad_xi(const Vector& u, const Vector& xi) const override;
    Matrix hess_xi(const Vector& u, const Vector& xi) const override;
    Vector grad_u(const Vector& u, const Vector& xi) const override;
    Matrix grad_u_xi(const Vector& u, const Vector& xi) const override;
    bool analytic_derivatives() const override { return true; }

    Vector lower_bounds() const { return (Vector(2) << lw_, lh_).finished(); }
    Vector upper_bounds() const { return (Vector(2) << uw_, uh_).finished(); }

private:
    double lw_, uw_, lh_, uh_;
};

struct DerivativeReport {
    double grad_xi_err = 0.0;
    double hess_xi_err = 0.0;
    double grad_u_err = 0.0;
    double threshold = 0.0;
    bool pass = false;
};

/// Compares the model's derivative callbacks against central finite
/// differences of value(). Analytic models are held to 1e-6, FD-backed
/// models to 1e-4.
DerivativeReport check_derivatives(const LimitStateModel& model, const Vector& u,
                                   const Vector& xi);

}  // namespace ldtcc
