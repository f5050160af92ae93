#pragma once

#include <Eigen/SparseCore>

#include "ldtcc/limit_state.hpp"

namespace ldtcc {

/// Steady advection-diffusion on the unit square, Robin-penalized boundary
/// control on the x1=0 edge and zero flux elsewhere:
///   -div(kappa grad y) + w . grad y = f,   w = (1, 0),
///   kappa = 0.8 above x2 = 0.6 and exp(xi_1) below,
///   f = amplitude * exp(-(x1-xi_2)^2/0.1) * exp(-(x2-0.5)^2/0.1).
/// F(u, xi) is the average of y over the window [0.4,0.6]^2. Discretized
/// with a 5-point stencil, harmonic face coefficients across the kappa
/// jump and first-order upwinding of the advection term.
///
/// xi-derivatives come from the finite-difference fallback (n = 2);
/// u-derivatives from one adjoint solve since F is affine in u.
class AdvectionDiffusionModel : public LimitStateModel {
public:
    explicit AdvectionDiffusionModel(int mesh, double forcing_amplitude = 20.0,
                                     double robin_penalty = 1e-4);

    int dim_u() const override { return mesh_; }
    int dim_xi() const override { return 2; }
    double value(const Vector& u, const Vector& xi) const override;
    Vector grad_u(const Vector& u, const Vector& xi) const override;
    Matrix grad_u_xi(const Vector& u, const Vector& xi) const override;
    double fd_step() const override { return 1e-4; }

    /// Full state field as an (mesh*mesh)-vector, index = i*mesh + j for
    /// node (x1, x2) = (i h, j h).
    Vector solve_state(const Vector& u, const Vector& xi) const;

    /// True when the discrete operator at xi factorizes.
    bool factorization_ok(const Vector& xi) const;

    int mesh() const { return mesh_; }
    double spacing() const { return h_; }

    /// Quadrature weights of the boundary objective (1/2) int_{Gamma_c} u^2.
    Vector boundary_quadrature() const;

private:
    Eigen::SparseMatrix<double> assemble(const Vector& xi, bool transpose) const;
    Vector assemble_rhs(const Vector& u, const Vector& xi) const;

    int mesh_;
    double h_;
    double amplitude_;
    double eps0_;
    Vector obs_weights_;  // sums to 1 over the observation window
};

}  // namespace ldtcc
