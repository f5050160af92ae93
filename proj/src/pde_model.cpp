#include "ldtcc/pde_model.hpp"

#include <Eigen/SparseLU>
#include <cmath>
#include <vector>

namespace ldtcc {

namespace {

double overlap(double lo, double hi, double a, double b) {
    return std::max(0.0, std::min(hi, b) - std::max(lo, a));
}

double harmonic(double a, double b) { return 2.0 * a * b / (a + b); }

}  // namespace

AdvectionDiffusionModel::AdvectionDiffusionModel(int mesh, double forcing_amplitude,
                                                 double robin_penalty)
    : mesh_(mesh), amplitude_(forcing_amplitude), eps0_(robin_penalty) {
    require(mesh_ >= 4, "AdvectionDiffusionModel: mesh must be at least 4");
    require(eps0_ > 0.0, "AdvectionDiffusionModel: penalty must be positive");
    h_ = 1.0 / (mesh_ - 1);

    // Cell-overlap quadrature of the observation window [0.4,0.6]^2,
    // normalized so a constant field averages to itself.
    obs_weights_ = Vector::Zero(mesh_ * mesh_);
    double total = 0.0;
    for (int i = 0; i < mesh_; ++i) {
        double x = i * h_;
        double wx = overlap(std::max(0.0, x - 0.5 * h_), std::min(1.0, x + 0.5 * h_), 0.4, 0.6);
        if (wx <= 0.0) continue;
        for (int j = 0; j < mesh_; ++j) {
            double y = j * h_;
            double wy =
                overlap(std::max(0.0, y - 0.5 * h_), std::min(1.0, y + 0.5 * h_), 0.4, 0.6);
            if (wy <= 0.0) continue;
            obs_weights_[i * mesh_ + j] = wx * wy;
            total += wx * wy;
        }
    }
    obs_weights_ /= total;
}

Eigen::SparseMatrix<double> AdvectionDiffusionModel::assemble(const Vector& xi,
                                                              bool transpose) const {
    const int m = mesh_;
    const int N = m * m;
    const double kappa_low = std::exp(xi[0]);
    auto kappa_at = [&](int j) { return (j * h_ >= 0.6 - 1e-12) ? 0.8 : kappa_low; };
    auto idx = [m](int i, int j) { return i * m + j; };

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(5 * N);
    auto add = [&](int r, int c, double v) {
        if (transpose)
            trip.emplace_back(c, r, v);
        else
            trip.emplace_back(r, c, v);
    };

    const double inv_h2 = 1.0 / (h_ * h_);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            int r = idx(i, j);
            if (i == 0) {
                // Robin control edge: (kappa/h + 1/eps0) y0 - (kappa/h) y1 = u/eps0
                double kf = kappa_at(j);
                add(r, r, kf / h_ + 1.0 / eps0_);
                add(r, idx(1, j), -kf / h_);
                continue;
            }
            if (i == m - 1) {
                add(r, r, 1.0);
                add(r, idx(m - 2, j), -1.0);  // zero flux, one-sided
                continue;
            }
            if (j == 0) {
                add(r, r, 1.0);
                add(r, idx(i, 1), -1.0);
                continue;
            }
            if (j == m - 1) {
                add(r, r, 1.0);
                add(r, idx(i, m - 2), -1.0);
                continue;
            }
            double kc = kappa_at(j);
            double ke = kc, kw = kc;                    // kappa constant in x1
            double kn = harmonic(kc, kappa_at(j + 1));  // jump handled here
            double ks = harmonic(kc, kappa_at(j - 1));
            double diag = (ke + kw + kn + ks) * inv_h2;
            // upwind advection for w = (1, 0)
            diag += 1.0 / h_;
            add(r, r, diag);
            add(r, idx(i + 1, j), -ke * inv_h2);
            add(r, idx(i - 1, j), -kw * inv_h2 - 1.0 / h_);
            add(r, idx(i, j + 1), -kn * inv_h2);
            add(r, idx(i, j - 1), -ks * inv_h2);
        }
    }
    Eigen::SparseMatrix<double> A(N, N);
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
}

Vector AdvectionDiffusionModel::assemble_rhs(const Vector& u, const Vector& xi) const {
    const int m = mesh_;
    Vector b = Vector::Zero(m * m);
    for (int j = 0; j < m; ++j) b[0 * m + j] = u[j] / eps0_;
    if (amplitude_ != 0.0) {
        for (int i = 1; i < m - 1; ++i) {
            double x1 = i * h_;
            double fx = std::exp(-(x1 - xi[1]) * (x1 - xi[1]) / 0.1);
            for (int j = 1; j < m - 1; ++j) {
                double x2 = j * h_;
                b[i * m + j] =
                    amplitude_ * fx * std::exp(-(x2 - 0.5) * (x2 - 0.5) / 0.1);
            }
        }
    }
    return b;
}

Vector AdvectionDiffusionModel::solve_state(const Vector& u, const Vector& xi) const {
    require(u.size() == mesh_, "AdvectionDiffusionModel: u must have one entry per edge node");
    require(xi.size() == 2, "AdvectionDiffusionModel: xi must be 2-dimensional");
    Eigen::SparseMatrix<double> A = assemble(xi, /*transpose=*/false);
    Vector b = assemble_rhs(u, xi);
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    if (lu.info() != Eigen::Success)
        throw NumericError("AdvectionDiffusionModel: singular discrete system");
    Vector y = lu.solve(b);
    // Backward-error criterion: |Ay-b| <= tol (|A| |y| + |b|).
    double scale = A.coeffs().abs().maxCoeff() * y.norm() + b.norm();
    double resid = (A * y - b).norm();
    if (resid > 1e-10 * std::max(scale, 1.0))
        throw NumericError("AdvectionDiffusionModel: linear solve residual too large");
    return y;
}

double AdvectionDiffusionModel::value(const Vector& u, const Vector& xi) const {
    return obs_weights_.dot(solve_state(u, xi));
}

Vector AdvectionDiffusionModel::grad_u(const Vector& u, const Vector& xi) const {
    require(u.size() == mesh_, "AdvectionDiffusionModel: u must have one entry per edge node");
    Eigen::SparseMatrix<double> At = assemble(xi, /*transpose=*/true);
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(At);
    if (lu.info() != Eigen::Success)
        throw NumericError("AdvectionDiffusionModel: singular adjoint system");
    Vector psi = lu.solve(obs_weights_);
    Vector g(mesh_);
    for (int j = 0; j < mesh_; ++j) g[j] = psi[j] / eps0_;  // rows 0..m-1 are the control edge
    return g;
}

Matrix AdvectionDiffusionModel::grad_u_xi(const Vector& u, const Vector& xi) const {
    // F is affine in u, so the mixed block only needs grad_u at shifted xi.
    Matrix out(mesh_, 2);
    Vector x = xi;
    for (int l = 0; l < 2; ++l) {
        double h = fd_step() * (1.0 + std::fabs(xi[l]));
        x[l] = xi[l] + h;
        Vector gp = grad_u(u, x);
        x[l] = xi[l] - h;
        Vector gm = grad_u(u, x);
        x[l] = xi[l];
        out.col(l) = (gp - gm) / (2.0 * h);
    }
    return out;
}

bool AdvectionDiffusionModel::factorization_ok(const Vector& xi) const {
    Eigen::SparseMatrix<double> A = assemble(xi, false);
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(A);
    return lu.info() == Eigen::Success;
}

Vector AdvectionDiffusionModel::boundary_quadrature() const {
    Vector w = Vector::Constant(mesh_, h_);
    w[0] = 0.5 * h_;
    w[mesh_ - 1] = 0.5 * h_;
    return w;
}

}  // namespace ldtcc
