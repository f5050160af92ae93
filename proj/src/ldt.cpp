#include "ldtcc/ldt.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <cmath>
#include <sstream>

#include "ldtcc/rng.hpp"

namespace ldtcc {

namespace {

// ---------------------------------------------------------------------------
// Level-set bracketing
// ---------------------------------------------------------------------------

struct Crossing {
    Vector point;
    bool found = false;
};

// Walks xi(t) = mean + t * dir until F >= z, then bisects onto the level
// set. t is measured in covariance-standard-deviation units of dir.
Crossing bracket_on_ray(const LimitStateModel& model, const Vector& u, double z,
                        const Vector& mean, const Vector& dir, double unit) {
    Crossing out;
    if (!(unit > 0.0) || !std::isfinite(unit)) return out;
    double lo = 0.0, hi = 0.0;
    double f_hi = model.value(u, mean);
    for (double t = 1.0; t <= 65.0; t *= 2.0) {
        double f;
        try {
            f = model.value(u, mean + (t / unit) * dir);
        } catch (const std::exception&) {
            break;  // ray left the model's usable domain
        }
        if (std::isfinite(f) && f >= z) {
            hi = t;
            f_hi = f;
            break;
        }
        lo = t;
    }
    if (hi == 0.0) return out;
    const double tol = 1e-10 * (1.0 + std::fabs(z));
    for (int it = 0; it < 200 && std::fabs(f_hi - z) > tol; ++it) {
        double mid = 0.5 * (lo + hi);
        double f = model.value(u, mean + (mid / unit) * dir);
        if (f >= z) {
            hi = mid;
            f_hi = f;
        } else {
            lo = mid;
        }
    }
    out.point = mean + (hi / unit) * dir;
    out.found = true;
    return out;
}

Vector initial_crossing(const MixtureSpec& dist, const LimitStateModel& model, const Vector& u,
                        double z, const Matrix& cov, const Matrix& cov_lower,
                        std::uint64_t seed) {
    Vector mean = dist.mean();
    Vector g0 = model.grad_xi(u, mean);
    Vector dir = cov * g0;
    double unit = std::sqrt(std::max(0.0, g0.dot(dir)));
    Crossing c = bracket_on_ray(model, u, z, mean, dir, unit);
    if (c.found) return c.point;

    Rng rng(seed);
    for (int k = 0; k < 50; ++k) {
        Vector d = cov_lower * rng.normal_vector(static_cast<int>(mean.size()));
        double un = std::sqrt(CholeskyCache(GaussianSpec{Vector::Zero(mean.size()), cov})
                                  .mahalanobis2(d));
        c = bracket_on_ray(model, u, z, mean, d, un);
        if (c.found) return c.point;
    }
    throw InfeasibleThreshold(
        "solve_ldt_minimizer: no crossing of the threshold found from the mean");
}

// ---------------------------------------------------------------------------
// Newton polish of the dominating-point KKT systems
// ---------------------------------------------------------------------------

// Gaussian system in (xi, lambda):
//   Sigma^{-1}(xi - mu) - lambda grad F = 0,   F - z = 0.
void polish_gaussian(const LimitStateModel& model, const Vector& u, double z,
                     const CholeskyCache& chol, const Vector& mean, Vector& xi,
                     double& lambda) {
    const int n = static_cast<int>(xi.size());
    auto residual = [&](const Vector& p, double lam, Vector& r) {
        Vector g = model.grad_xi(u, p);
        r.resize(n + 1);
        r.head(n) = chol.solve(p - mean) - lam * g;
        r[n] = model.value(u, p) - z;
    };
    Vector r;
    residual(xi, lambda, r);
    double merit = r.norm();
    for (int it = 0; it < 40 && merit > 1e-13; ++it) {
        Vector g = model.grad_xi(u, xi);
        Matrix b = model.hess_xi(u, xi);
        Matrix jac = Matrix::Zero(n + 1, n + 1);
        jac.topLeftCorner(n, n) = chol.inverse() - lambda * b;
        jac.block(0, n, n, 1) = -g;
        jac.block(n, 0, 1, n) = g.transpose();
        Vector step = jac.fullPivLu().solve(-r);
        double t = 1.0;
        bool ok = false;
        while (t >= 1e-8) {
            Vector xc = xi + t * step.head(n);
            double lc = lambda + t * step[n];
            Vector rc;
            residual(xc, lc, rc);
            if (rc.norm() < (1.0 - 1e-4 * t) * merit) {
                xi = xc;
                lambda = lc;
                r = rc;
                merit = rc.norm();
                ok = true;
                break;
            }
            t *= 0.5;
        }
        if (!ok) break;
    }
}

// Mixture system in (xi, eta, lambda):
//   eta - lambda grad F = 0,  xi - grad S(eta) = 0,  F - z = 0.
void polish_mixture(const MixtureSpec& dist, const LimitStateModel& model, const Vector& u,
                    double z, Vector& xi, Vector& eta, double& lambda) {
    const int n = static_cast<int>(xi.size());
    auto residual = [&](const Vector& p, const Vector& e, double lam, Vector& r) {
        r.resize(2 * n + 1);
        r.head(n) = e - lam * model.grad_xi(u, p);
        r.segment(n, n) = p - cgf_grad(dist, e);
        r[2 * n] = model.value(u, p) - z;
    };
    Vector r;
    residual(xi, eta, lambda, r);
    double merit = r.norm();
    for (int it = 0; it < 40 && merit > 1e-13; ++it) {
        Vector g = model.grad_xi(u, xi);
        Matrix b = model.hess_xi(u, xi);
        Matrix hs = cgf_hess(dist, eta);
        Matrix jac = Matrix::Zero(2 * n + 1, 2 * n + 1);
        jac.topLeftCorner(n, n) = -lambda * b;
        jac.block(0, n, n, n) = Matrix::Identity(n, n);
        jac.block(0, 2 * n, n, 1) = -g;
        jac.block(n, 0, n, n) = Matrix::Identity(n, n);
        jac.block(n, n, n, n) = -hs;
        jac.block(2 * n, 0, 1, n) = g.transpose();
        Vector step = jac.fullPivLu().solve(-r);
        double t = 1.0;
        bool ok = false;
        while (t >= 1e-8) {
            Vector xc = xi + t * step.head(n);
            Vector ec = eta + t * step.segment(n, n);
            double lc = lambda + t * step[2 * n];
            Vector rc;
            residual(xc, ec, lc, rc);
            if (rc.norm() < (1.0 - 1e-4 * t) * merit) {
                xi = xc;
                eta = ec;
                lambda = lc;
                r = rc;
                merit = rc.norm();
                ok = true;
                break;
            }
            t *= 0.5;
        }
        if (!ok) break;
    }
}

LdtSolution gaussian_path(const GaussianSpec& g, const LimitStateModel& model, const Vector& u,
                          double z, const Vector& xi0, const SolverOptions& nlp_opts) {
    CholeskyCache chol(g);
    NlpProblem prob;
    prob.dim = g.dim();
    prob.objective = [&](const Vector& x) { return 0.5 * chol.mahalanobis2(x - g.mean); };
    prob.objective_grad = [&](const Vector& x) { return chol.solve(x - g.mean); };
    ConstraintBlock eq;
    eq.size = 1;
    eq.value = [&](const Vector& x) {
        return Vector::Constant(1, model.value(u, x) - z);
    };
    eq.jacobian = [&](const Vector& x) {
        Matrix j(1, x.size());
        j.row(0) = model.grad_xi(u, x).transpose();
        return j;
    };
    prob.equalities.push_back(eq);

    NlpResult res = solve(prob, xi0, nlp_opts);
    Vector xi = res.x;
    double lambda = res.eq_multipliers.size() > 0 ? -res.eq_multipliers[0] : 0.0;
    polish_gaussian(model, u, z, chol, g.mean, xi, lambda);

    LdtSolution sol;
    sol.xi_star = xi;
    sol.eta_star = chol.solve(xi - g.mean);
    sol.lambda = std::max(0.0, lambda);
    sol.rate_value = 0.5 * chol.mahalanobis2(xi - g.mean);
    Vector grad = model.grad_xi(u, xi);
    sol.kkt_residual = (sol.eta_star - lambda * grad).cwiseAbs().maxCoeff();
    sol.constraint_gap = model.value(u, xi) - z;
    return sol;
}

LdtSolution mixture_path(const MixtureSpec& dist, const LimitStateModel& model, const Vector& u,
                         double z, const Vector& xi0, const SolverOptions& nlp_opts) {
    const int n = dist.dim();
    Vector eta0;
    try {
        eta0 = rate_mixture(dist, xi0).eta;
    } catch (const NumericError&) {
        GaussianSpec mm = dist.moment_match();
        eta0 = CholeskyCache(mm).solve(xi0 - mm.mean);
    }

    NlpProblem prob;
    prob.dim = 2 * n;
    prob.objective = [&, n](const Vector& x) {
        return x.head(n).dot(x.tail(n)) - cgf(dist, x.tail(n));
    };
    prob.objective_grad = [&, n](const Vector& x) {
        Vector g(2 * n);
        g.head(n) = x.tail(n);
        g.tail(n) = x.head(n) - cgf_grad(dist, x.tail(n));
        return g;
    };
    ConstraintBlock levelset;
    levelset.size = 1;
    levelset.value = [&, n](const Vector& x) {
        return Vector::Constant(1, model.value(u, x.head(n)) - z);
    };
    levelset.jacobian = [&, n](const Vector& x) {
        Matrix j = Matrix::Zero(1, 2 * n);
        j.row(0).head(n) = model.grad_xi(u, x.head(n)).transpose();
        return j;
    };
    prob.equalities.push_back(levelset);
    ConstraintBlock fixed_point;
    fixed_point.size = n;
    fixed_point.value = [&, n](const Vector& x) {
        return Vector(x.head(n) - cgf_grad(dist, x.tail(n)));
    };
    fixed_point.jacobian = [&, n](const Vector& x) {
        Matrix j(n, 2 * n);
        j.leftCols(n) = Matrix::Identity(n, n);
        j.rightCols(n) = -cgf_hess(dist, x.tail(n));
        return j;
    };
    prob.equalities.push_back(fixed_point);

    Vector x0(2 * n);
    x0.head(n) = xi0;
    x0.tail(n) = eta0;
    NlpResult res = solve(prob, x0, nlp_opts);
    Vector xi = res.x.head(n);
    Vector eta = res.x.tail(n);
    double lambda = res.eq_multipliers.size() > 0 ? -res.eq_multipliers[0] : 0.0;
    polish_mixture(dist, model, u, z, xi, eta, lambda);

    LdtSolution sol;
    sol.xi_star = xi;
    sol.eta_star = eta;
    sol.lambda = std::max(0.0, lambda);
    sol.rate_value = eta.dot(xi) - cgf(dist, eta);
    Vector grad = model.grad_xi(u, xi);
    double r1 = (eta - lambda * grad).cwiseAbs().maxCoeff();
    double r2 = (xi - cgf_grad(dist, eta)).cwiseAbs().maxCoeff();
    sol.kkt_residual = std::max(r1, r2);
    sol.constraint_gap = model.value(u, xi) - z;
    return sol;
}

bool acceptable(const LdtSolution& sol, const LimitStateModel& model, const Vector& u,
                double z) {
    Vector g = model.grad_xi(u, sol.xi_star);
    return sol.kkt_residual <= 1e-6 * (1.0 + g.norm()) &&
           std::fabs(sol.constraint_gap) <= 1e-8 * (1.0 + std::fabs(z));
}

}  // namespace

LdtSolution solve_ldt_minimizer(const MixtureSpec& dist, const LimitStateModel& model,
                                const Vector& u, double z, const LdtOptions& opts) {
    require(dist.dim() == model.dim_xi(), "solve_ldt_minimizer: dimension mismatch");
    Vector mean = dist.mean();
    double f_mean = model.value(u, mean);
    require(f_mean < z,
            "solve_ldt_minimizer: F(u, mean) must be below z (rare-event side)");

    const bool gaussian = dist.size() == 1;
    GaussianSpec mm = gaussian ? dist.components.front().gaussian : dist.moment_match();
    CholeskyCache mm_chol(mm);

    Vector xi0 = initial_crossing(dist, model, u, z, mm.cov, mm_chol.lower(), opts.seed);

    auto run = [&](const Vector& start) {
        if (gaussian)
            return gaussian_path(dist.components.front().gaussian, model, u, z, start,
                                 opts.nlp);
        // Mixtures start from the dominating point of the moment-matched
        // Gaussian, itself started on the level set.
        LdtSolution gsol = gaussian_path(mm, model, u, z, start, opts.nlp);
        return mixture_path(dist, model, u, z, gsol.xi_star, opts.nlp);
    };

    LdtSolution best = run(xi0);
    bool best_ok = acceptable(best, model, u, z);

    int extra = model.xi_curvature() == Curvature::Unknown ? opts.multistarts : 0;
    if (extra > 0) {
        Rng rng(Rng::derive(opts.seed, 7));
        double scale = 0.5 * (xi0 - mean).norm();
        for (int k = 0; k < extra; ++k) {
            Vector d = rng.normal_vector(dist.dim());
            Vector perturbed = xi0 + scale * d / std::max(d.norm(), 1e-300);
            try {
                // re-project the perturbed start onto the level set from the mean
                Vector dir = perturbed - mean;
                Crossing c = bracket_on_ray(model, u, z, mean, dir,
                                            std::sqrt(mm_chol.mahalanobis2(dir)));
                if (!c.found) continue;
                LdtSolution cand = run(c.point);
                bool cand_ok = acceptable(cand, model, u, z);
                if ((cand_ok && !best_ok) ||
                    (cand_ok == best_ok && cand.rate_value < best.rate_value)) {
                    best = cand;
                    best_ok = cand_ok;
                }
            } catch (const NumericError&) {
                continue;
            }
        }
    }

    if (!best_ok) {
        std::ostringstream msg;
        msg << "solve_ldt_minimizer: no acceptable KKT point (residual " << best.kkt_residual
            << ", gap " << best.constraint_gap << ")";
        throw NumericError(msg.str());
    }
    return best;
}

// ---------------------------------------------------------------------------
// Probability estimates
// ---------------------------------------------------------------------------

double det_perp(const Matrix& h, const Vector& n_hat) {
    require(h.rows() == h.cols() && h.rows() == n_hat.size(), "det_perp: shape mismatch");
    require(std::fabs(n_hat.norm() - 1.0) <= 1e-10, "det_perp: n_hat must be a unit vector");
    Eigen::FullPivLU<Matrix> lu(h);
    if (!lu.isInvertible()) throw NumericError("det_perp: H is singular");
    Vector x = lu.solve(n_hat);
    return n_hat.dot(x) * lu.determinant();
}

ProbEstimate p1_gaussian(const GaussianSpec& g, const LimitStateModel& model, const Vector& u,
                         double z, const LdtSolution& sol) {
    (void)model;
    (void)u;
    (void)z;
    double d = std::sqrt(2.0 * std::max(0.0, sol.rate_value));
    ProbEstimate est;
    est.order = 1;
    est.log_value = log_normal_cdf(-d);
    est.value = std::exp(est.log_value);
    est.components.push_back({est.log_value, d, 1.0, true});
    (void)g;
    return est;
}

ProbEstimate p2_gaussian(const GaussianSpec& g, const LimitStateModel& model, const Vector& u,
                         double z, const LdtSolution& sol) {
    CholeskyCache chol(g);
    const Matrix& s = chol.sqrt();
    Vector grad = model.grad_xi(u, sol.xi_star);
    Matrix b = model.hess_xi(u, sol.xi_star);
    Matrix h = Matrix::Identity(g.dim(), g.dim()) - sol.lambda * (s * b * s);
    h = 0.5 * (h + h.transpose()).eval();
    Vector sg = s * grad;
    double sgn = sg.norm();
    if (sgn <= 0.0) throw NumericError("p2_gaussian: vanishing preconditioned gradient");
    Vector n_hat = sg / sgn;

    double dp = det_perp(h, n_hat);
    if (!(dp > 0.0))
        throw CurvatureError("p2_gaussian: orthogonal determinant is not positive");
    Eigen::SelfAdjointEigenSolver<Matrix> es(h);

    double d = std::sqrt(2.0 * std::max(0.0, sol.rate_value));
    ProbEstimate est;
    est.order = 2;
    est.correction = 1.0 / std::sqrt(dp);
    est.curvature_ok = es.eigenvalues().minCoeff() > 1e-10;
    est.log_value = log_normal_cdf(-d) - 0.5 * std::log(dp);
    est.value = std::exp(est.log_value);
    est.components.push_back({est.log_value, d, est.correction, est.curvature_ok});
    (void)z;
    return est;
}

TangencyPoint tangency_first(const GaussianSpec& comp, const Vector& grad,
                             const Vector& xi_star, int component_index) {
    require(grad.size() == comp.dim() && xi_star.size() == comp.dim(),
            "tangency_first: dimension mismatch");
    require(grad.norm() > 0.0, "tangency_first: zero gradient");
    Vector sg = comp.cov * grad;
    double denom = grad.dot(sg);
    TangencyPoint t;
    t.component = component_index;
    t.lambda = grad.dot(xi_star - comp.mean) / denom;
    t.xi = comp.mean + t.lambda * sg;
    t.level_gap = grad.dot(t.xi - xi_star);
    CholeskyCache chol(comp);
    t.stationarity = (chol.solve(t.xi - comp.mean) - t.lambda * grad).cwiseAbs().maxCoeff();
    return t;
}

TangencyPoint tangency_second(const GaussianSpec& comp, const LimitStateModel& model,
                              const Vector& u, const Vector& xi_star, int component_index,
                              const SolverOptions& opts) {
    Vector grad = model.grad_xi(u, xi_star);
    Matrix b = model.hess_xi(u, xi_star);
    CholeskyCache chol(comp);

    auto taylor_gap = [&](const Vector& xi) {
        Vector d = xi - xi_star;
        return grad.dot(d) + 0.5 * d.dot(b * d);
    };
    auto taylor_grad = [&](const Vector& xi) { return Vector(grad + b * (xi - xi_star)); };

    TangencyPoint start = tangency_first(comp, grad, xi_star, component_index);

    NlpProblem prob;
    prob.dim = comp.dim();
    prob.objective = [&](const Vector& x) { return 0.5 * chol.mahalanobis2(x - comp.mean); };
    prob.objective_grad = [&](const Vector& x) { return chol.solve(x - comp.mean); };
    ConstraintBlock eq;
    eq.size = 1;
    eq.value = [&](const Vector& x) { return Vector::Constant(1, taylor_gap(x)); };
    eq.jacobian = [&](const Vector& x) {
        Matrix j(1, x.size());
        j.row(0) = taylor_grad(x).transpose();
        return j;
    };
    prob.equalities.push_back(eq);

    NlpResult res = solve(prob, start.xi, opts);
    Vector xi = res.x;
    double lambda = res.eq_multipliers.size() > 0 ? -res.eq_multipliers[0] : start.lambda;

    // Newton polish of the tangency system.
    const int n = comp.dim();
    auto residual = [&](const Vector& p, double lam, Vector& r) {
        r.resize(n + 1);
        r.head(n) = chol.solve(p - comp.mean) - lam * taylor_grad(p);
        r[n] = taylor_gap(p);
    };
    Vector r;
    residual(xi, lambda, r);
    double merit = r.norm();
    for (int it = 0; it < 40 && merit > 1e-13; ++it) {
        Matrix jac = Matrix::Zero(n + 1, n + 1);
        jac.topLeftCorner(n, n) = chol.inverse() - lambda * b;
        jac.block(0, n, n, 1) = -taylor_grad(xi);
        jac.block(n, 0, 1, n) = taylor_grad(xi).transpose();
        Vector step = jac.fullPivLu().solve(-r);
        double t = 1.0;
        bool ok = false;
        while (t >= 1e-8) {
            Vector xc = xi + t * step.head(n);
            double lc = lambda + t * step[n];
            Vector rc;
            residual(xc, lc, rc);
            if (rc.norm() < (1.0 - 1e-4 * t) * merit) {
                xi = xc;
                lambda = lc;
                r = rc;
                merit = rc.norm();
                ok = true;
                break;
            }
            t *= 0.5;
        }
        if (!ok) break;
    }

    TangencyPoint out;
    out.component = component_index;
    out.xi = xi;
    out.lambda = lambda;
    out.level_gap = taylor_gap(xi);
    out.stationarity =
        (chol.solve(xi - comp.mean) - lambda * taylor_grad(xi)).cwiseAbs().maxCoeff();
    if (std::fabs(out.level_gap) > 1e-8 * (1.0 + grad.norm()) ||
        out.stationarity > 1e-8 * (1.0 + grad.norm()))
        throw NumericError("tangency_second: optimality system not satisfied");

    const Matrix& s = chol.sqrt();
    Matrix hmat = Matrix::Identity(n, n) - lambda * (s * b * s);
    hmat = 0.5 * (hmat + hmat.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Matrix> es(hmat);
    out.min_curvature_eig = es.eigenvalues().minCoeff();
    return out;
}

ProbEstimate p1_mixture(const MixtureSpec& dist, const LimitStateModel& model, const Vector& u,
                        double z, const LdtSolution& sol) {
    (void)z;
    Vector grad = model.grad_xi(u, sol.xi_star);
    const int m = dist.size();
    Vector log_terms(m);
    ProbEstimate est;
    est.order = 1;
    for (int i = 0; i < m; ++i) {
        const auto& c = dist.components[i];
        double denom = std::sqrt(grad.dot(c.gaussian.cov * grad));
        double d = grad.dot(sol.xi_star - c.gaussian.mean) / denom;
        log_terms[i] = std::log(c.weight) + log_normal_cdf(-d);
        est.components.push_back({log_terms[i], d, 1.0, true});
    }
    est.log_value = log_sum_exp(log_terms);
    est.value = std::exp(est.log_value);
    return est;
}

ProbEstimate p2_mixture(const MixtureSpec& dist, const LimitStateModel& model, const Vector& u,
                        double z, const LdtSolution& sol) {
    Vector grad = model.grad_xi(u, sol.xi_star);
    Matrix b = model.hess_xi(u, sol.xi_star);
    const int m = dist.size();
    const int n = dist.dim();
    Vector log_terms(m), log_first(m);
    ProbEstimate est;
    est.order = 2;
    est.curvature_ok = true;
    for (int i = 0; i < m; ++i) {
        const auto& c = dist.components[i];
        TangencyPoint tp = tangency_second(c.gaussian, model, u, sol.xi_star, i);
        if (tp.min_curvature_eig < -1e-6) {
            std::ostringstream msg;
            msg << "p2_mixture: curvature condition violated for component " << i
                << " (min eigenvalue " << tp.min_curvature_eig << ")";
            throw CurvatureError(msg.str(), i);
        }
        CholeskyCache chol(c.gaussian);
        double d = std::sqrt(chol.mahalanobis2(tp.xi - c.gaussian.mean));
        Vector taylor_grad = grad + b * (tp.xi - sol.xi_star);
        Vector sg = chol.sqrt() * taylor_grad;
        double sgn = sg.norm();
        if (sgn <= 0.0)
            throw CurvatureError("p2_mixture: vanishing preconditioned Taylor gradient", i);
        Matrix h = Matrix::Identity(n, n) - (d / sgn) * (chol.sqrt() * b * chol.sqrt());
        h = 0.5 * (h + h.transpose()).eval();
        double dp = det_perp(h, sg / sgn);
        if (!(dp > 0.0)) {
            std::ostringstream msg;
            msg << "p2_mixture: orthogonal determinant not positive for component " << i;
            throw CurvatureError(msg.str(), i);
        }
        bool comp_ok = tp.min_curvature_eig > 1e-10;
        est.curvature_ok = est.curvature_ok && comp_ok;
        log_first[i] = std::log(c.weight) + log_normal_cdf(-d);
        log_terms[i] = log_first[i] - 0.5 * std::log(dp);
        est.components.push_back({log_terms[i], d, 1.0 / std::sqrt(dp), comp_ok});
    }
    est.log_value = log_sum_exp(log_terms);
    est.value = std::exp(est.log_value);
    est.correction = std::exp(est.log_value - log_sum_exp(log_first));
    (void)z;
    return est;
}

}  // namespace ldtcc
