#include "ldtcc/limit_state.hpp"

#include <cmath>

namespace ldtcc {

// ---------------------------------------------------------------------------
// Finite-difference fallbacks
// ---------------------------------------------------------------------------

Vector LimitStateModel::grad_xi(const Vector& u, const Vector& xi) const {
    int n = dim_xi();
    Vector g(n);
    Vector x = xi;
    for (int i = 0; i < n; ++i) {
        double h = fd_step() * (1.0 + std::fabs(xi[i]));
        x[i] = xi[i] + h;
        double fp = value(u, x);
        x[i] = xi[i] - h;
        double fm = value(u, x);
        x[i] = xi[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Matrix LimitStateModel::hess_xi(const Vector& u, const Vector& xi) const {
    int n = dim_xi();
    Matrix h(n, n);
    double f0 = value(u, xi);
    Vector x = xi;
    Vector step(n);
    for (int i = 0; i < n; ++i) step[i] = fd_step() * (1.0 + std::fabs(xi[i]));
    for (int i = 0; i < n; ++i) {
        x[i] = xi[i] + step[i];
        double fp = value(u, x);
        x[i] = xi[i] - step[i];
        double fm = value(u, x);
        x[i] = xi[i];
        h(i, i) = (fp - 2.0 * f0 + fm) / (step[i] * step[i]);
        for (int j = i + 1; j < n; ++j) {
            x[i] = xi[i] + step[i];
            x[j] = xi[j] + step[j];
            double fpp = value(u, x);
            x[j] = xi[j] - step[j];
            double fpm = value(u, x);
            x[i] = xi[i] - step[i];
            double fmm = value(u, x);
            x[j] = xi[j] + step[j];
            double fmp = value(u, x);
            x[i] = xi[i];
            x[j] = xi[j];
            h(i, j) = h(j, i) = (fpp - fpm - fmp + fmm) / (4.0 * step[i] * step[j]);
        }
    }
    return h;
}

Vector LimitStateModel::grad_u(const Vector& u, const Vector& xi) const {
    int m = dim_u();
    Vector g(m);
    Vector x = u;
    for (int i = 0; i < m; ++i) {
        double h = fd_step() * (1.0 + std::fabs(u[i]));
        x[i] = u[i] + h;
        double fp = value(x, xi);
        x[i] = u[i] - h;
        double fm = value(x, xi);
        x[i] = u[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

Matrix LimitStateModel::grad_u_xi(const Vector& u, const Vector& xi) const {
    int m = dim_u();
    Matrix out(m, dim_xi());
    Vector x = u;
    for (int k = 0; k < m; ++k) {
        double h = fd_step() * (1.0 + std::fabs(u[k]));
        x[k] = u[k] + h;
        Vector gp = grad_xi(x, xi);
        x[k] = u[k] - h;
        Vector gm = grad_xi(x, xi);
        x[k] = u[k];
        out.row(k) = ((gp - gm) / (2.0 * h)).transpose();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Portfolio
// ---------------------------------------------------------------------------

PortfolioModel::PortfolioModel(Vector theta, Vector sigma, double horizon)
    : theta_(std::move(theta)), sigma_(std::move(sigma)), horizon_(horizon) {
    require(theta_.size() == sigma_.size(), "PortfolioModel: theta/sigma size mismatch");
    require(sigma_.minCoeff() > 0.0, "PortfolioModel: sigma must be componentwise positive");
    require(horizon_ > 0.0, "PortfolioModel: horizon must be positive");
}

Vector PortfolioModel::stock_values(const Vector& xi) const {
    require(xi.size() == theta_.size(), "PortfolioModel: xi has wrong dimension");
    double sqT = std::sqrt(horizon_);
    Vector v(theta_.size());
    for (int i = 0; i < v.size(); ++i) {
        double drift = (theta_[i] - 0.5 * sigma_[i] * sigma_[i]) * horizon_;
        v[i] = std::exp(drift + sqT * xi[i]);
    }
    return v;
}

double PortfolioModel::value(const Vector& u, const Vector& xi) const {
    require(u.size() == theta_.size(), "PortfolioModel: u has wrong dimension");
    return -stock_values(xi).dot(u);
}

Vector PortfolioModel::grad_xi(const Vector& u, const Vector& xi) const {
    return -std::sqrt(horizon_) * stock_values(xi).cwiseProduct(u);
}

Matrix PortfolioModel::hess_xi(const Vector& u, const Vector& xi) const {
    Vector d = -horizon_ * stock_values(xi).cwiseProduct(u);
    return d.asDiagonal();
}

Vector PortfolioModel::grad_u(const Vector& /*u*/, const Vector& xi) const {
    return -stock_values(xi);
}

Matrix PortfolioModel::grad_u_xi(const Vector& /*u*/, const Vector& xi) const {
    Vector d = -std::sqrt(horizon_) * stock_values(xi);
    return Matrix(d.asDiagonal());
}

// ---------------------------------------------------------------------------
// Short column
// ---------------------------------------------------------------------------

ShortColumnModel::ShortColumnModel(double lw, double uw, double lh, double uh)
    : lw_(lw), uw_(uw), lh_(lh), uh_(uh) {
    require(lw_ > 0.0 && lh_ > 0.0, "ShortColumnModel: bounds must be positive");
    require(lw_ < uw_ && lh_ < uh_, "ShortColumnModel: lower bounds must be below upper");
}

namespace {
void check_design(const Vector& u) {
    require(u.size() == 2, "ShortColumnModel: u must be (w, h)");
    require(u[0] > 0.0 && u[1] > 0.0, "ShortColumnModel: w and h must be positive");
}
}  // namespace

double ShortColumnModel::value(const Vector& u, const Vector& xi) const {
    check_design(u);
    require(xi.size() == 3, "ShortColumnModel: xi must be (F, M, Y)");
    double w = u[0], h = u[1];
    double ey = std::exp(xi[2]);
    return 4.0 * xi[1] / (w * h * h * ey) + xi[0] * xi[0] / (w * w * h * h * ey * ey);
}

Vector ShortColumnModel::grad_xi(const Vector& u, const Vector& xi) const {
    check_design(u);
    double w = u[0], h = u[1];
    double a = 4.0 / (w * h * h);
    double b = 1.0 / (w * w * h * h);
    double e1 = std::exp(-xi[2]), e2 = e1 * e1;
    Vector g(3);
    g[0] = 2.0 * b * xi[0] * e2;
    g[1] = a * e1;
    g[2] = -a * xi[1] * e1 - 2.0 * b * xi[0] * xi[0] * e2;
    return g;
}

Matrix ShortColumnModel::hess_xi(const Vector& u, const Vector& xi) const {
    check_design(u);
    double w = u[0], h = u[1];
    double a = 4.0 / (w * h * h);
    double b = 1.0 / (w * w * h * h);
    double e1 = std::exp(-xi[2]), e2 = e1 * e1;
    Matrix hm = Matrix::Zero(3, 3);
    hm(0, 0) = 2.0 * b * e2;
    hm(0, 2) = hm(2, 0) = -4.0 * b * xi[0] * e2;
    hm(1, 2) = hm(2, 1) = -a * e1;
    hm(2, 2) = a * xi[1] * e1 + 4.0 * b * xi[0] * xi[0] * e2;
    return hm;
}

Vector ShortColumnModel::grad_u(const Vector& u, const Vector& xi) const {
    check_design(u);
    double w = u[0], h = u[1];
    double e1 = std::exp(-xi[2]), e2 = e1 * e1;
    double term_a = 4.0 * xi[1] * e1 / (w * h * h);
    double term_b = xi[0] * xi[0] * e2 / (w * w * h * h);
    Vector g(2);
    g[0] = -(term_a + 2.0 * term_b) / w;
    g[1] = -2.0 * (term_a + term_b) / h;
    return g;
}

Matrix ShortColumnModel::grad_u_xi(const Vector& u, const Vector& xi) const {
    check_design(u);
    double w = u[0], h = u[1];
    double a = 4.0 / (w * h * h);
    double b = 1.0 / (w * w * h * h);
    double e1 = std::exp(-xi[2]), e2 = e1 * e1;
    // d(grad_xi)/dw and d(grad_xi)/dh via da/dw = -a/w, db/dw = -2b/w,
    // da/dh = -2a/h, db/dh = -2b/h.
    Matrix out(2, 3);
    out(0, 0) = 2.0 * (-2.0 * b / w) * xi[0] * e2;
    out(0, 1) = (-a / w) * e1;
    out(0, 2) = (a / w) * xi[1] * e1 + 2.0 * (2.0 * b / w) * xi[0] * xi[0] * e2;
    out(1, 0) = 2.0 * (-2.0 * b / h) * xi[0] * e2;
    out(1, 1) = (-2.0 * a / h) * e1;
    out(1, 2) = (2.0 * a / h) * xi[1] * e1 + 2.0 * (2.0 * b / h) * xi[0] * xi[0] * e2;
    return out;
}

// ---------------------------------------------------------------------------
// Derivative check
// ---------------------------------------------------------------------------

namespace {

double rel_err(double got, double ref) {
    return std::fabs(got - ref) / (1.0 + std::fabs(ref));
}

}  // namespace

DerivativeReport check_derivatives(const LimitStateModel& model, const Vector& u,
                                   const Vector& xi) {
    DerivativeReport rep;
    rep.threshold = model.analytic_derivatives() ? 1e-6 : 1e-4;

    // Reference finite differences with a step independent of the model's own.
    const double hs = 1e-5;
    auto fd_grad_xi = [&](const Vector& p) {
        Vector g(model.dim_xi());
        Vector x = p;
        for (int i = 0; i < g.size(); ++i) {
            double h = hs * (1.0 + std::fabs(p[i]));
            x[i] = p[i] + h;
            double fp = model.value(u, x);
            x[i] = p[i] - h;
            double fm = model.value(u, x);
            x[i] = p[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        return g;
    };

    Vector g_ref = fd_grad_xi(xi);
    Vector g_got = model.grad_xi(u, xi);
    for (int i = 0; i < g_ref.size(); ++i)
        rep.grad_xi_err = std::max(rep.grad_xi_err, rel_err(g_got[i], g_ref[i]));

    // Hessian reference: central differences of the model gradient.
    Matrix h_got = model.hess_xi(u, xi);
    Vector x = xi;
    for (int j = 0; j < model.dim_xi(); ++j) {
        double h = hs * (1.0 + std::fabs(xi[j]));
        x[j] = xi[j] + h;
        Vector gp = model.grad_xi(u, x);
        x[j] = xi[j] - h;
        Vector gm = model.grad_xi(u, x);
        x[j] = xi[j];
        Vector col = (gp - gm) / (2.0 * h);
        for (int i = 0; i < col.size(); ++i)
            rep.hess_xi_err = std::max(rep.hess_xi_err, rel_err(h_got(i, j), col[i]));
    }

    Vector gu_got = model.grad_u(u, xi);
    Vector ux = u;
    for (int k = 0; k < model.dim_u(); ++k) {
        double h = hs * (1.0 + std::fabs(u[k]));
        ux[k] = u[k] + h;
        double fp = model.value(ux, xi);
        ux[k] = u[k] - h;
        double fm = model.value(ux, xi);
        ux[k] = u[k];
        rep.grad_u_err = std::max(rep.grad_u_err, rel_err(gu_got[k], (fp - fm) / (2.0 * h)));
    }

    rep.pass = rep.grad_xi_err <= rep.threshold && rep.hess_xi_err <= rep.threshold &&
               rep.grad_u_err <= rep.threshold;
    return rep;
}

}  // namespace ldtcc
