#include "ldtcc/formulations.hpp"

#include <Eigen/Eigenvalues>
#include <chrono>
#include <cmath>
#include <memory>
#include <sstream>

#include "ldtcc/mc.hpp"
#include "ldtcc/rng.hpp"

namespace ldtcc {

namespace {

constexpr double kDetFloor = 1e-300;

struct Ctx {
    const LimitStateModel* model = nullptr;
    MixtureSpec dist;
    std::vector<CholeskyCache> chols;
    VariableLayout lay;
    Sense sense = Sense::MinObjective;
    double fixed_z = 0.0;
    double alpha = 0.0;
    Matrix samples;  // SAA / CVaR scenarios, one row per sample
    double nu = 0.0, tau = 0.0;

    // Scale metadata shared by the blocks (see compute_scales).
    Vector sigma_scale;                 // per-coordinate mixture std dev
    std::vector<Vector> stat_scales;    // per component, sqrt(diag(Sigma^-1))
    double spread = 1.0;                // |Sigma^{1/2} grad F| at the midpoint
    double fmid = 0.0;
    double lam_scale = 1.0;
    double f_scale = 1.0;

    // Last-point cache for grad/hess of F: the FD-differentiated blocks
    // evaluate at unchanged (u, xi) for most coordinate perturbations.
    mutable bool cache_valid = false;
    mutable Vector cache_u, cache_xi, cache_g;
    mutable Matrix cache_b;

    double thr(const Vector& x) const {
        return sense == Sense::MaxThreshold ? -x[lay.z_offset] : fixed_z;
    }
    Vector u_of(const Vector& x) const { return x.segment(lay.u_offset, lay.u_size); }
    Vector xi_of(const Vector& x) const { return x.segment(lay.xi_offset, lay.n); }
    Vector eta_of(const Vector& x) const { return x.segment(lay.eta_offset, lay.n); }
    double lambda_of(const Vector& x) const { return x[lay.lambda_offset]; }
    Vector xi_tilde_of(const Vector& x, int i) const {
        return x.segment(lay.xi_tilde_offsets[i], lay.n);
    }
    double lambda_tilde_of(const Vector& x, int i) const {
        return x[lay.lambda_tilde_offsets[i]];
    }

    void grad_hess(const Vector& u, const Vector& xi, Vector& g, Matrix& b) const {
        if (cache_valid && cache_u.size() == u.size() &&
            (cache_u.array() == u.array()).all() &&
            (cache_xi.array() == xi.array()).all()) {
            g = cache_g;
            b = cache_b;
            return;
        }
        cache_g = model->grad_xi(u, xi);
        cache_b = model->hess_xi(u, xi);
        cache_u = u;
        cache_xi = xi;
        cache_valid = true;
        g = cache_g;
        b = cache_b;
    }
};

using CtxPtr = std::shared_ptr<Ctx>;

// Domain midpoint (uniform simplex point when that equality is present).
Vector domain_midpoint(const ChanceSpec& spec, int m_u) {
    Vector u = Vector::Zero(m_u);
    bool simplex = spec.domain.eq_a.rows() == 1 && spec.domain.eq_b.size() == 1 &&
                   (spec.domain.eq_a.array() == 1.0).all() && spec.domain.eq_b[0] == 1.0;
    if (simplex) {
        u.setConstant(1.0 / m_u);
    } else if (spec.domain.lower.size() > 0) {
        for (int i = 0; i < m_u; ++i) {
            double lo = spec.domain.lower[i], hi = spec.domain.upper[i];
            u[i] = (std::isfinite(lo) && std::isfinite(hi)) ? 0.5 * (lo + hi)
                   : std::isfinite(lo)                      ? lo + 1.0
                   : std::isfinite(hi)                      ? hi - 1.0
                                                            : 0.0;
        }
    }
    return u;
}

void compute_scales(const ChanceSpec& spec, const CtxPtr& ctx) {
    GaussianSpec mm = ctx->dist.moment_match();
    ctx->sigma_scale = mm.cov.diagonal().cwiseSqrt().cwiseMax(1e-12);
    for (const auto& chol : ctx->chols)
        ctx->stat_scales.push_back(chol.inverse().diagonal().cwiseSqrt().cwiseMax(1e-12));
    try {
        Vector u0 = domain_midpoint(spec, ctx->lay.u_size);
        Vector g0 = ctx->model->grad_xi(u0, mm.mean);
        ctx->spread = std::max(1e-12, std::sqrt(g0.dot(mm.cov * g0)));
        ctx->fmid = ctx->model->value(u0, mm.mean);
    } catch (const std::exception&) {
        // keep neutral scales
    }
    ctx->lam_scale = std::max(
        1e-8, std::sqrt(2.0 * std::max(1.0, -std::log(ctx->alpha))) / ctx->spread);
    ctx->f_scale = std::max(1.0, std::fabs(ctx->fmid) + ctx->spread);
}

CtxPtr make_ctx(const ChanceSpec& spec) {
    require(spec.model != nullptr, "ChanceSpec: model is required");
    spec.dist.validate();
    require(spec.alpha > 0.0 && spec.alpha < 1.0, "ChanceSpec: alpha must lie in (0,1)");
    require(spec.dist.dim() == spec.model->dim_xi(), "ChanceSpec: distribution dimension");
    auto ctx = std::make_shared<Ctx>();
    ctx->model = spec.model;
    ctx->dist = spec.dist;
    for (const auto& c : spec.dist.components) ctx->chols.emplace_back(c.gaussian);
    ctx->sense = spec.sense;
    ctx->fixed_z = spec.z;
    ctx->alpha = spec.alpha;
    return ctx;
}

// Variable stack: u | xi | [eta] | lambda | [xi~_i lambda~_i]* | [p] | [t] | [z]
VariableLayout make_layout(const ChanceSpec& spec, bool ldt_vars, bool with_eta,
                           int tangency_components, int p_size, bool with_t) {
    VariableLayout lay;
    lay.n = spec.dist.dim();
    lay.num_components = spec.dist.size();
    lay.u_size = spec.model->dim_u();
    lay.u_offset = 0;
    int at = lay.u_size;
    if (ldt_vars) {
        lay.xi_offset = at;
        at += lay.n;
        if (with_eta) {
            lay.eta_offset = at;
            at += lay.n;
        }
        lay.lambda_offset = at;
        at += 1;
        for (int i = 0; i < tangency_components; ++i) {
            lay.xi_tilde_offsets.push_back(at);
            at += lay.n;
            lay.lambda_tilde_offsets.push_back(at);
            at += 1;
        }
    }
    if (p_size > 0) {
        lay.p_offset = at;
        lay.p_size = p_size;
        at += p_size;
    }
    if (with_t) {
        lay.t_offset = at;
        at += 1;
    }
    if (spec.sense == Sense::MaxThreshold) {
        lay.z_offset = at;
        at += 1;
    }
    lay.dim = at;
    return lay;
}

// Natural magnitudes for the stacked variables; the wildly different units
// of u, xi, eta and lambda otherwise cripple the quasi-Newton inner loop.
void apply_scaling(NlpProblem& p, const ChanceSpec& spec, const CtxPtr& ctx) {
    const VariableLayout& lay = ctx->lay;
    Vector s = Vector::Ones(lay.dim);
    for (int i = 0; i < lay.u_size; ++i) {
        if (spec.domain.lower.size() == 0) break;
        double lo = spec.domain.lower[i], hi = spec.domain.upper[i];
        if (std::isfinite(lo) && std::isfinite(hi)) s[lay.u_offset + i] = 0.5 * (hi - lo);
    }
    if (lay.xi_offset >= 0) {
        s.segment(lay.xi_offset, lay.n) = ctx->sigma_scale;
        if (lay.eta_offset >= 0)
            s.segment(lay.eta_offset, lay.n) =
                (ctx->lam_scale * ctx->spread) * ctx->sigma_scale.cwiseInverse();
        s[lay.lambda_offset] = ctx->lam_scale;
        for (std::size_t i = 0; i < lay.xi_tilde_offsets.size(); ++i) {
            s.segment(lay.xi_tilde_offsets[i], lay.n) = ctx->sigma_scale;
            s[lay.lambda_tilde_offsets[i]] = ctx->lam_scale;
        }
    }
    if (lay.z_offset >= 0) s[lay.z_offset] = ctx->f_scale;
    p.variable_scaling = s;
}

void set_bounds(NlpProblem& p, const ChanceSpec& spec, const VariableLayout& lay) {
    p.lower = Vector::Constant(lay.dim, -kInf);
    p.upper = Vector::Constant(lay.dim, kInf);
    if (spec.domain.lower.size() > 0) {
        require(spec.domain.lower.size() == lay.u_size &&
                    spec.domain.upper.size() == lay.u_size,
                "ChanceSpec: domain bounds must match dim_u");
        p.lower.segment(lay.u_offset, lay.u_size) = spec.domain.lower;
        p.upper.segment(lay.u_offset, lay.u_size) = spec.domain.upper;
    }
    if (lay.lambda_offset >= 0) p.lower[lay.lambda_offset] = 0.0;
    for (int off : lay.lambda_tilde_offsets) p.lower[off] = 0.0;
    if (lay.p_offset >= 0)
        p.lower.segment(lay.p_offset, lay.p_size) = Vector::Zero(lay.p_size);
}

void set_objective(NlpProblem& p, const CtxPtr& ctx, const Objective& obj) {
    if (ctx->sense == Sense::MaxThreshold) {
        int zo = ctx->lay.z_offset;
        int dim = ctx->lay.dim;
        p.objective = [zo](const Vector& x) { return -x[zo]; };
        p.objective_grad = [zo, dim](const Vector&) {
            Vector g = Vector::Zero(dim);
            g[zo] = -1.0;
            return g;
        };
        return;
    }
    require(static_cast<bool>(obj.value), "ChanceSpec: objective value callback is required");
    p.objective = [ctx, obj](const Vector& x) { return obj.value(ctx->u_of(x)); };
    if (obj.grad) {
        p.objective_grad = [ctx, obj](const Vector& x) {
            Vector g = Vector::Zero(ctx->lay.dim);
            g.segment(ctx->lay.u_offset, ctx->lay.u_size) = obj.grad(ctx->u_of(x));
            return g;
        };
    }
}

ConstraintBlock levelset_block(const CtxPtr& ctx) {
    ConstraintBlock b;
    b.size = 1;
    b.row_scaling = Vector::Constant(1, ctx->f_scale);
    b.value = [ctx](const Vector& x) {
        return Vector::Constant(
            1, ctx->model->value(ctx->u_of(x), ctx->xi_of(x)) - ctx->thr(x));
    };
    b.jacobian = [ctx](const Vector& x) {
        Matrix j = Matrix::Zero(1, ctx->lay.dim);
        Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
        j.row(0).segment(ctx->lay.u_offset, ctx->lay.u_size) =
            ctx->model->grad_u(u, xi).transpose();
        j.row(0).segment(ctx->lay.xi_offset, ctx->lay.n) =
            ctx->model->grad_xi(u, xi).transpose();
        if (ctx->sense == Sense::MaxThreshold) j(0, ctx->lay.z_offset) = 1.0;
        return j;
    };
    return b;
}

// Sigma^{-1}(xi - mu) = lambda grad F for the single-Gaussian program.
ConstraintBlock gaussian_stationarity_block(const CtxPtr& ctx) {
    ConstraintBlock b;
    b.size = ctx->lay.n;
    b.row_scaling = ctx->stat_scales[0];
    b.value = [ctx](const Vector& x) {
        Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
        const auto& g0 = ctx->dist.components[0].gaussian;
        return Vector(ctx->chols[0].solve(xi - g0.mean) -
                      ctx->lambda_of(x) * ctx->model->grad_xi(u, xi));
    };
    b.jacobian = [ctx](const Vector& x) {
        Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
        double lam = ctx->lambda_of(x);
        Vector g;
        Matrix bb;
        ctx->grad_hess(u, xi, g, bb);
        Matrix j = Matrix::Zero(ctx->lay.n, ctx->lay.dim);
        j.middleCols(ctx->lay.u_offset, ctx->lay.u_size) =
            -lam * ctx->model->grad_u_xi(u, xi).transpose();
        j.middleCols(ctx->lay.xi_offset, ctx->lay.n) = ctx->chols[0].inverse() - lam * bb;
        j.col(ctx->lay.lambda_offset) = -g;
        return j;
    };
    return b;
}

// eta = lambda grad F
ConstraintBlock mixture_dual_block(const CtxPtr& ctx) {
    ConstraintBlock b;
    b.size = ctx->lay.n;
    b.row_scaling =
        (ctx->lam_scale * ctx->spread) * ctx->sigma_scale.cwiseInverse();
    b.value = [ctx](const Vector& x) {
        return Vector(ctx->eta_of(x) -
                      ctx->lambda_of(x) * ctx->model->grad_xi(ctx->u_of(x), ctx->xi_of(x)));
    };
    b.jacobian = [ctx](const Vector& x) {
        Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
        double lam = ctx->lambda_of(x);
        Vector g;
        Matrix bb;
        ctx->grad_hess(u, xi, g, bb);
        Matrix j = Matrix::Zero(ctx->lay.n, ctx->lay.dim);
        j.middleCols(ctx->lay.u_offset, ctx->lay.u_size) =
            -lam * ctx->model->grad_u_xi(u, xi).transpose();
        j.middleCols(ctx->lay.xi_offset, ctx->lay.n) = -lam * bb;
        j.middleCols(ctx->lay.eta_offset, ctx->lay.n) =
            Matrix::Identity(ctx->lay.n, ctx->lay.n);
        j.col(ctx->lay.lambda_offset) = -g;
        return j;
    };
    return b;
}

// xi = grad S(eta)
ConstraintBlock fixed_point_block(const CtxPtr& ctx) {
    ConstraintBlock b;
    b.size = ctx->lay.n;
    b.row_scaling = ctx->sigma_scale;
    b.value = [ctx](const Vector& x) {
        return Vector(ctx->xi_of(x) - cgf_grad(ctx->dist, ctx->eta_of(x)));
    };
    b.jacobian = [ctx](const Vector& x) {
        Matrix j = Matrix::Zero(ctx->lay.n, ctx->lay.dim);
        j.middleCols(ctx->lay.xi_offset, ctx->lay.n) =
            Matrix::Identity(ctx->lay.n, ctx->lay.n);
        j.middleCols(ctx->lay.eta_offset, ctx->lay.n) = -cgf_hess(ctx->dist, ctx->eta_of(x));
        return j;
    };
    return b;
}

void add_linear_block(NlpProblem& p, const ChanceSpec& spec, const CtxPtr& ctx) {
    if (spec.domain.eq_a.rows() == 0) return;
    require(spec.domain.eq_a.cols() == ctx->lay.u_size,
            "ChanceSpec: linear equality width must match dim_u");
    Matrix a = spec.domain.eq_a;
    Vector rhs = spec.domain.eq_b;
    ConstraintBlock b;
    b.size = static_cast<int>(a.rows());
    b.value = [ctx, a, rhs](const Vector& x) { return Vector(a * ctx->u_of(x) - rhs); };
    b.jacobian = [ctx, a](const Vector&) {
        Matrix j = Matrix::Zero(a.rows(), ctx->lay.dim);
        j.middleCols(ctx->lay.u_offset, ctx->lay.u_size) = a;
        return j;
    };
    p.equalities.push_back(b);
}

// -sqrt(2 I(xi)) <= PhiInv(alpha): the algebraic first-order Gaussian form.
ConstraintBlock gaussian_prob_first_block(const CtxPtr& ctx) {
    double rhs = normal_cdf_inv(ctx->alpha);
    ConstraintBlock b;
    b.size = 1;
    b.value = [ctx, rhs](const Vector& x) {
        const auto& g0 = ctx->dist.components[0].gaussian;
        double rate = 0.5 * ctx->chols[0].mahalanobis2(ctx->xi_of(x) - g0.mean);
        return Vector::Constant(1, -std::sqrt(2.0 * rate) - rhs);
    };
    b.jacobian = [ctx](const Vector& x) {
        const auto& g0 = ctx->dist.components[0].gaussian;
        Vector diff = ctx->xi_of(x) - g0.mean;
        Vector sinv = ctx->chols[0].solve(diff);
        double r = std::sqrt(std::max(diff.dot(sinv), 1e-20));
        Matrix j = Matrix::Zero(1, ctx->lay.dim);
        j.row(0).segment(ctx->lay.xi_offset, ctx->lay.n) = (-sinv / r).transpose();
        return j;
    };
    return b;
}

double safe_log_det_perp(const Matrix& h, const Vector& n_hat) {
    if (!h.allFinite() || !n_hat.allFinite()) return -std::log(kDetFloor);
    try {
        double dp = det_perp(h, n_hat);
        return std::log(std::max(dp, kDetFloor));
    } catch (const std::exception&) {
        return std::log(kDetFloor);
    }
}

// log Phi(-sqrt(2I)) - log det_perp(H)/2 <= log alpha, order-2 Gaussian.
// The tail term has an analytic gradient; the determinant correction is
// finite-differenced.
ConstraintBlock gaussian_prob_second_block(const CtxPtr& ctx) {
    auto correction = [ctx](const Vector& x) {
        Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
        Vector g;
        Matrix bb;
        ctx->grad_hess(u, xi, g, bb);
        const Matrix& s = ctx->chols[0].sqrt();
        Matrix h = Matrix::Identity(ctx->lay.n, ctx->lay.n) -
                   ctx->lambda_of(x) * (s * bb * s);
        h = 0.5 * (h + h.transpose()).eval();
        Vector sg = s * g;
        double sgn = sg.norm();
        if (sgn <= 0.0) return -0.5 * std::log(kDetFloor);
        return -0.5 * safe_log_det_perp(h, Vector(sg / sgn));
    };
    double log_alpha = std::log(ctx->alpha);
    ConstraintBlock b;
    b.size = 1;
    b.value = [ctx, correction, log_alpha](const Vector& x) {
        const auto& g0 = ctx->dist.components[0].gaussian;
        double rate = 0.5 * ctx->chols[0].mahalanobis2(ctx->xi_of(x) - g0.mean);
        double c = log_normal_cdf(-std::sqrt(2.0 * rate)) + correction(x) - log_alpha;
        return Vector::Constant(1, c);
    };
    b.jacobian = [ctx, correction](const Vector& x) {
        Matrix j = Matrix::Zero(1, ctx->lay.dim);
        const auto& g0 = ctx->dist.components[0].gaussian;
        Vector diff = ctx->xi_of(x) - g0.mean;
        Vector sinv = ctx->chols[0].solve(diff);
        double r = std::sqrt(std::max(diff.dot(sinv), 1e-20));
        j.row(0).segment(ctx->lay.xi_offset, ctx->lay.n) =
            (-inverse_mills(-r) / r * sinv).transpose();
        // FD of the determinant correction over (u, xi, lambda).
        Vector xx = x;
        auto fd_into = [&](int idx) {
            double h = 1e-6 * (1.0 + std::fabs(x[idx]));
            xx[idx] = x[idx] + h;
            double fp = correction(xx);
            xx[idx] = x[idx] - h;
            double fm = correction(xx);
            xx[idx] = x[idx];
            j(0, idx) += (fp - fm) / (2.0 * h);
        };
        for (int k = 0; k < ctx->lay.u_size; ++k) fd_into(ctx->lay.u_offset + k);
        for (int k = 0; k < ctx->lay.n; ++k) fd_into(ctx->lay.xi_offset + k);
        fd_into(ctx->lay.lambda_offset);
        return j;
    };
    return b;
}

// Mixture first-order tail sum in log space, with analytic gradients via
// the model's Hessian and mixed-derivative callbacks.
ConstraintBlock mixture_prob_first_block(const CtxPtr& ctx) {
    double log_alpha = std::log(ctx->alpha);
    const int m = ctx->dist.size();
    ConstraintBlock b;
    b.size = 1;
    b.value = [ctx, m, log_alpha](const Vector& x) {
        Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
        Vector g = ctx->model->grad_xi(u, xi);
        Vector terms(m);
        for (int i = 0; i < m; ++i) {
            const auto& c = ctx->dist.components[i].gaussian;
            double s = std::sqrt(g.dot(c.cov * g));
            double d = g.dot(xi - c.mean) / s;
            terms[i] = std::log(ctx->dist.components[i].weight) + log_normal_cdf(-d);
        }
        return Vector::Constant(1, log_sum_exp(terms) - log_alpha);
    };
    b.jacobian = [ctx, m](const Vector& x) {
        Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
        Vector g;
        Matrix bb;
        ctx->grad_hess(u, xi, g, bb);
        Matrix mm = ctx->model->grad_u_xi(u, xi);  // dim_u x n
        Vector terms(m), dvals(m);
        for (int i = 0; i < m; ++i) {
            const auto& c = ctx->dist.components[i].gaussian;
            double s = std::sqrt(g.dot(c.cov * g));
            dvals[i] = g.dot(xi - c.mean) / s;
            terms[i] = std::log(ctx->dist.components[i].weight) + log_normal_cdf(-dvals[i]);
        }
        double lse = log_sum_exp(terms);
        Matrix j = Matrix::Zero(1, ctx->lay.dim);
        for (int i = 0; i < m; ++i) {
            const auto& c = ctx->dist.components[i].gaussian;
            double pi = std::exp(terms[i] - lse);
            Vector sg = c.cov * g;
            double s = std::sqrt(g.dot(sg));
            double a = g.dot(xi - c.mean);
            double coeff = -pi * inverse_mills(-dvals[i]);
            Vector ddxi = (bb * (xi - c.mean) + g) / s - (a / (s * s * s)) * (bb * sg);
            j.row(0).segment(ctx->lay.xi_offset, ctx->lay.n) += coeff * ddxi.transpose();
            Vector ddu = (mm * (xi - c.mean)) / s - (a / (s * s * s)) * (mm * sg);
            j.row(0).segment(ctx->lay.u_offset, ctx->lay.u_size) += coeff * ddu.transpose();
        }
        return j;
    };
    return b;
}

// Per-component tangency constraints of the second-order mixture program.
// Their exact Jacobians involve third derivatives of F through grad/hess
// at (u, xi), so these blocks are exposed with FD Jacobians.
void add_tangency_blocks(NlpProblem& p, const CtxPtr& ctx) {
    const int m = ctx->dist.size();
    for (int i = 0; i < m; ++i) {
        ConstraintBlock level;
        level.size = 1;
        level.row_scaling = Vector::Constant(1, ctx->f_scale);
        level.value = [ctx, i](const Vector& x) {
            Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
            Vector g;
            Matrix bb;
            ctx->grad_hess(u, xi, g, bb);
            Vector dxi = ctx->xi_tilde_of(x, i) - xi;
            return Vector::Constant(1, g.dot(dxi) + 0.5 * dxi.dot(bb * dxi));
        };
        p.equalities.push_back(level);

        ConstraintBlock stat;
        stat.size = ctx->lay.n;
        stat.row_scaling = ctx->stat_scales[i];
        stat.value = [ctx, i](const Vector& x) {
            Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
            Vector g;
            Matrix bb;
            ctx->grad_hess(u, xi, g, bb);
            Vector xt = ctx->xi_tilde_of(x, i);
            const auto& c = ctx->dist.components[i].gaussian;
            return Vector(ctx->chols[i].solve(xt - c.mean) -
                          ctx->lambda_tilde_of(x, i) * (g + bb * (xt - xi)));
        };
        p.equalities.push_back(stat);
    }
}

// Second-order mixture tail sum; FD gradients.
ConstraintBlock mixture_prob_second_block(const CtxPtr& ctx) {
    double log_alpha = std::log(ctx->alpha);
    const int m = ctx->dist.size();
    ConstraintBlock b;
    b.size = 1;
    b.value = [ctx, m, log_alpha](const Vector& x) {
        Vector u = ctx->u_of(x), xi = ctx->xi_of(x);
        Vector g;
        Matrix bb;
        ctx->grad_hess(u, xi, g, bb);
        Vector terms(m);
        for (int i = 0; i < m; ++i) {
            const auto& c = ctx->dist.components[i].gaussian;
            Vector xt = ctx->xi_tilde_of(x, i);
            double dtilde = std::sqrt(ctx->chols[i].mahalanobis2(xt - c.mean));
            const Matrix& s = ctx->chols[i].sqrt();
            Vector tg = g + bb * (xt - xi);
            Vector sg = s * tg;
            double sgn = sg.norm();
            double corr;
            if (sgn <= 0.0) {
                corr = -0.5 * std::log(kDetFloor);
            } else {
                Matrix h = Matrix::Identity(ctx->lay.n, ctx->lay.n) -
                           ctx->lambda_tilde_of(x, i) * (s * bb * s);
                h = 0.5 * (h + h.transpose()).eval();
                corr = -0.5 * safe_log_det_perp(h, Vector(sg / sgn));
            }
            terms[i] =
                std::log(ctx->dist.components[i].weight) + log_normal_cdf(-dtilde) + corr;
        }
        return Vector::Constant(1, log_sum_exp(terms) - log_alpha);
    };
    b.fd_jacobian = true;
    return b;
}

// Stable sigmoid bound value and slope: s(y) = 2(nu+1)/(nu+exp(-tau y)) - 1.
void sigmoid_bound(double y, double nu, double tau, double& s, double& slope) {
    double w = tau * y;
    if (w < -500.0) {
        s = -1.0;
        slope = 0.0;
        return;
    }
    double e = std::exp(-w);
    double denom = nu + e;
    s = 2.0 * (nu + 1.0) / denom - 1.0;
    slope = 2.0 * (nu + 1.0) * tau * e / (denom * denom);
}

BuiltProblem finish(const ChanceSpec& spec, const CtxPtr& ctx, NlpProblem problem) {
    BuiltProblem out;
    out.problem = std::move(problem);
    out.layout = ctx->lay;
    out.sense = spec.sense;
    out.fixed_z = spec.z;
    out.alpha = spec.alpha;
    return out;
}

}  // namespace

const char* to_string(CcMethod m) {
    switch (m) {
        case CcMethod::Ldt1: return "ldt1";
        case CcMethod::Ldt2: return "ldt2";
        case CcMethod::Saa: return "saa";
        case CcMethod::Cvar: return "cvar";
    }
    return "unknown";
}

double BuiltProblem::threshold_of(const Vector& x) const {
    return sense == Sense::MaxThreshold ? -x[layout.z_offset] : fixed_z;
}

RecoveredPoint BuiltProblem::recover(const Vector& x) const {
    require(x.size() == layout.dim, "BuiltProblem::recover: wrong vector size");
    RecoveredPoint p;
    p.u = x.segment(layout.u_offset, layout.u_size);
    if (layout.xi_offset >= 0) p.xi_star = x.segment(layout.xi_offset, layout.n);
    if (layout.eta_offset >= 0) p.eta_star = x.segment(layout.eta_offset, layout.n);
    if (layout.lambda_offset >= 0) p.lambda = x[layout.lambda_offset];
    p.threshold = threshold_of(x);
    p.z = sense == Sense::MaxThreshold ? x[layout.z_offset] : fixed_z;
    for (std::size_t i = 0; i < layout.xi_tilde_offsets.size(); ++i) {
        p.xi_tilde.push_back(x.segment(layout.xi_tilde_offsets[i], layout.n));
        p.lambda_tilde.push_back(x[layout.lambda_tilde_offsets[i]]);
    }
    if (layout.p_offset >= 0) p.p = x.segment(layout.p_offset, layout.p_size);
    if (layout.t_offset >= 0) p.t = x[layout.t_offset];
    return p;
}

Vector BuiltProblem::pack(const RecoveredPoint& point) const {
    Vector x = Vector::Zero(layout.dim);
    require(point.u.size() == layout.u_size, "BuiltProblem::pack: u size mismatch");
    x.segment(layout.u_offset, layout.u_size) = point.u;
    if (layout.xi_offset >= 0 && point.xi_star.size() == layout.n)
        x.segment(layout.xi_offset, layout.n) = point.xi_star;
    if (layout.eta_offset >= 0 && point.eta_star.size() == layout.n)
        x.segment(layout.eta_offset, layout.n) = point.eta_star;
    if (layout.lambda_offset >= 0 && std::isfinite(point.lambda))
        x[layout.lambda_offset] = point.lambda;
    if (layout.z_offset >= 0 && std::isfinite(point.z)) x[layout.z_offset] = point.z;
    for (std::size_t i = 0; i < layout.xi_tilde_offsets.size(); ++i) {
        if (i < point.xi_tilde.size() && point.xi_tilde[i].size() == layout.n)
            x.segment(layout.xi_tilde_offsets[i], layout.n) = point.xi_tilde[i];
        if (i < point.lambda_tilde.size())
            x[layout.lambda_tilde_offsets[i]] = point.lambda_tilde[i];
    }
    if (layout.p_offset >= 0 && point.p.size() == layout.p_size)
        x.segment(layout.p_offset, layout.p_size) = point.p;
    if (layout.t_offset >= 0 && std::isfinite(point.t)) x[layout.t_offset] = point.t;
    return x;
}

BuiltProblem build_gaussian_cc(const ChanceSpec& spec, int order) {
    require(spec.dist.size() == 1, "build_gaussian_cc: use the mixture builders for M > 1");
    require(order == 1 || order == 2, "build_gaussian_cc: order must be 1 or 2");
    CtxPtr ctx = make_ctx(spec);
    ctx->lay = make_layout(spec, /*ldt_vars=*/true, /*with_eta=*/false, 0, 0, false);
    compute_scales(spec, ctx);

    NlpProblem p;
    p.dim = ctx->lay.dim;
    set_objective(p, ctx, spec.objective);
    set_bounds(p, spec, ctx->lay);
    apply_scaling(p, spec, ctx);
    p.equalities.push_back(levelset_block(ctx));
    p.equalities.push_back(gaussian_stationarity_block(ctx));
    add_linear_block(p, spec, ctx);
    p.inequalities.push_back(order == 1 ? gaussian_prob_first_block(ctx)
                                        : gaussian_prob_second_block(ctx));
    return finish(spec, ctx, std::move(p));
}

BuiltProblem build_mixture_cc_first(const ChanceSpec& spec) {
    CtxPtr ctx = make_ctx(spec);
    ctx->lay = make_layout(spec, true, /*with_eta=*/true, 0, 0, false);
    compute_scales(spec, ctx);

    NlpProblem p;
    p.dim = ctx->lay.dim;
    set_objective(p, ctx, spec.objective);
    set_bounds(p, spec, ctx->lay);
    apply_scaling(p, spec, ctx);
    p.equalities.push_back(levelset_block(ctx));
    p.equalities.push_back(mixture_dual_block(ctx));
    p.equalities.push_back(fixed_point_block(ctx));
    add_linear_block(p, spec, ctx);
    p.inequalities.push_back(mixture_prob_first_block(ctx));
    return finish(spec, ctx, std::move(p));
}

BuiltProblem build_mixture_cc_second(const ChanceSpec& spec) {
    CtxPtr ctx = make_ctx(spec);
    ctx->lay = make_layout(spec, true, /*with_eta=*/true, spec.dist.size(), 0, false);
    compute_scales(spec, ctx);

    NlpProblem p;
    p.dim = ctx->lay.dim;
    set_objective(p, ctx, spec.objective);
    set_bounds(p, spec, ctx->lay);
    apply_scaling(p, spec, ctx);
    p.equalities.push_back(levelset_block(ctx));
    p.equalities.push_back(mixture_dual_block(ctx));
    p.equalities.push_back(fixed_point_block(ctx));
    add_tangency_blocks(p, ctx);
    add_linear_block(p, spec, ctx);
    p.inequalities.push_back(mixture_prob_second_block(ctx));
    return finish(spec, ctx, std::move(p));
}

BuiltProblem build_saa(const ChanceSpec& spec, const Matrix& samples, double nu, double tau) {
    require(samples.rows() >= 1, "build_saa: need at least one sample");
    require(nu > 0.0 && tau > 0.0, "build_saa: nu and tau must be positive");
    require(samples.cols() == spec.model->dim_xi(), "build_saa: sample dimension mismatch");
    CtxPtr ctx = make_ctx(spec);
    const int nsamp = static_cast<int>(samples.rows());
    ctx->lay = make_layout(spec, /*ldt_vars=*/false, false, 0, nsamp, false);
    compute_scales(spec, ctx);
    ctx->samples = samples;
    ctx->nu = nu;
    ctx->tau = tau;

    NlpProblem p;
    p.dim = ctx->lay.dim;
    set_objective(p, ctx, spec.objective);
    set_bounds(p, spec, ctx->lay);
    apply_scaling(p, spec, ctx);
    add_linear_block(p, spec, ctx);

    ConstraintBlock sig;
    sig.size = nsamp;
    sig.value = [ctx, nsamp](const Vector& x) {
        Vector u = ctx->u_of(x);
        double thr = ctx->thr(x);
        Vector out(nsamp);
        for (int i = 0; i < nsamp; ++i) {
            double s, slope;
            sigmoid_bound(ctx->model->value(u, ctx->samples.row(i).transpose()) - thr,
                          ctx->nu, ctx->tau, s, slope);
            out[i] = s - x[ctx->lay.p_offset + i];
        }
        return out;
    };
    sig.jacobian = [ctx, nsamp](const Vector& x) {
        Vector u = ctx->u_of(x);
        double thr = ctx->thr(x);
        Matrix j = Matrix::Zero(nsamp, ctx->lay.dim);
        for (int i = 0; i < nsamp; ++i) {
            Vector xi = ctx->samples.row(i).transpose();
            double s, slope;
            sigmoid_bound(ctx->model->value(u, xi) - thr, ctx->nu, ctx->tau, s, slope);
            if (slope != 0.0) {
                j.row(i).segment(ctx->lay.u_offset, ctx->lay.u_size) =
                    slope * ctx->model->grad_u(u, xi).transpose();
                if (ctx->sense == Sense::MaxThreshold) j(i, ctx->lay.z_offset) = slope;
            }
            j(i, ctx->lay.p_offset + i) = -1.0;
        }
        return j;
    };
    p.inequalities.push_back(sig);

    ConstraintBlock budget;
    budget.size = 1;
    budget.value = [ctx, nsamp](const Vector& x) {
        double mean = x.segment(ctx->lay.p_offset, nsamp).mean();
        return Vector::Constant(1, mean - ctx->alpha);
    };
    budget.jacobian = [ctx, nsamp](const Vector&) {
        Matrix j = Matrix::Zero(1, ctx->lay.dim);
        j.row(0).segment(ctx->lay.p_offset, nsamp).setConstant(1.0 / nsamp);
        return j;
    };
    p.inequalities.push_back(budget);
    return finish(spec, ctx, std::move(p));
}

BuiltProblem build_cvar(const ChanceSpec& spec, const Matrix& samples) {
    require(samples.rows() >= 1, "build_cvar: need at least one sample");
    require(samples.cols() == spec.model->dim_xi(), "build_cvar: sample dimension mismatch");
    CtxPtr ctx = make_ctx(spec);
    const int nsamp = static_cast<int>(samples.rows());
    ctx->lay = make_layout(spec, false, false, 0, nsamp, /*with_t=*/true);
    compute_scales(spec, ctx);
    ctx->samples = samples;

    NlpProblem p;
    p.dim = ctx->lay.dim;
    set_objective(p, ctx, spec.objective);
    set_bounds(p, spec, ctx->lay);
    apply_scaling(p, spec, ctx);
    add_linear_block(p, spec, ctx);

    ConstraintBlock excess;
    excess.size = nsamp;
    excess.row_scaling = Vector::Constant(nsamp, ctx->f_scale);
    excess.value = [ctx, nsamp](const Vector& x) {
        Vector u = ctx->u_of(x);
        double thr = ctx->thr(x);
        double t = x[ctx->lay.t_offset];
        Vector out(nsamp);
        for (int i = 0; i < nsamp; ++i)
            out[i] = ctx->model->value(u, ctx->samples.row(i).transpose()) - thr + t -
                     x[ctx->lay.p_offset + i];
        return out;
    };
    excess.jacobian = [ctx, nsamp](const Vector& x) {
        Vector u = ctx->u_of(x);
        Matrix j = Matrix::Zero(nsamp, ctx->lay.dim);
        for (int i = 0; i < nsamp; ++i) {
            Vector xi = ctx->samples.row(i).transpose();
            j.row(i).segment(ctx->lay.u_offset, ctx->lay.u_size) =
                ctx->model->grad_u(u, xi).transpose();
            j(i, ctx->lay.t_offset) = 1.0;
            j(i, ctx->lay.p_offset + i) = -1.0;
            if (ctx->sense == Sense::MaxThreshold) j(i, ctx->lay.z_offset) = 1.0;
        }
        return j;
    };
    p.inequalities.push_back(excess);

    ConstraintBlock budget;
    budget.size = 1;
    budget.value = [ctx, nsamp](const Vector& x) {
        double mean = x.segment(ctx->lay.p_offset, nsamp).mean();
        return Vector::Constant(1, mean - ctx->alpha * x[ctx->lay.t_offset]);
    };
    budget.jacobian = [ctx, nsamp](const Vector&) {
        Matrix j = Matrix::Zero(1, ctx->lay.dim);
        j.row(0).segment(ctx->lay.p_offset, nsamp).setConstant(1.0 / nsamp);
        j(0, ctx->lay.t_offset) = -ctx->alpha;
        return j;
    };
    p.inequalities.push_back(budget);
    return finish(spec, ctx, std::move(p));
}

BuiltProblem build_chance_problem(const ChanceSpec& spec, const MethodSpec& method) {
    switch (method.method) {
        case CcMethod::Ldt1:
            return spec.dist.size() == 1 ? build_gaussian_cc(spec, 1)
                                         : build_mixture_cc_first(spec);
        case CcMethod::Ldt2:
            return spec.dist.size() == 1 ? build_gaussian_cc(spec, 2)
                                         : build_mixture_cc_second(spec);
        case CcMethod::Saa:
            return build_saa(spec, method.samples, method.nu, method.tau);
        case CcMethod::Cvar:
            return build_cvar(spec, method.samples);
    }
    throw std::invalid_argument("build_chance_problem: unknown method");
}

BuiltProblem build_var_max(const ChanceSpec& spec, const MethodSpec& method) {
    ChanceSpec flipped = spec;
    flipped.sense = Sense::MaxThreshold;
    return build_chance_problem(flipped, method);
}

Vector initial_point(const ChanceSpec& spec, const BuiltProblem& built,
                     const LdtOptions& ldt_opts, const Vector& u0_override) {
    const VariableLayout& lay = built.layout;
    const LimitStateModel& model = *spec.model;
    RecoveredPoint pt;

    if (u0_override.size() > 0) {
        require(u0_override.size() == lay.u_size, "initial_point: u0 override size mismatch");
        pt.u = u0_override;
    } else {
        pt.u = domain_midpoint(spec, lay.u_size);
    }

    // Threshold: fixed, or probed on the scaled-gradient ray at the alpha
    // quantile distance so it is always attainable by F.
    Vector mean = spec.dist.mean();
    double thr;
    if (spec.sense == Sense::MaxThreshold) {
        Vector g0 = model.grad_xi(pt.u, mean);
        GaussianSpec mm = spec.dist.moment_match();
        Vector dir = mm.cov * g0;
        double unit = std::sqrt(std::max(g0.dot(dir), 1e-30));
        double d_target = std::max(0.5, -normal_cdf_inv(spec.alpha));
        thr = model.value(pt.u, mean + (d_target / unit) * dir);
        double f_mean = model.value(pt.u, mean);
        if (!(thr > f_mean)) thr = f_mean + d_target * unit;
        pt.z = -thr;
    } else {
        thr = spec.z;
        pt.z = spec.z;
    }
    pt.threshold = thr;

    if (lay.xi_offset >= 0) {
        LdtSolution sol = solve_ldt_minimizer(spec.dist, model, pt.u, thr, ldt_opts);
        pt.xi_star = sol.xi_star;
        pt.eta_star = sol.eta_star;
        pt.lambda = sol.lambda;
        if (!lay.xi_tilde_offsets.empty()) {
            Vector g = model.grad_xi(pt.u, sol.xi_star);
            for (int i = 0; i < spec.dist.size(); ++i) {
                TangencyPoint tp =
                    tangency_first(spec.dist.components[i].gaussian, g, sol.xi_star, i);
                pt.xi_tilde.push_back(tp.xi);
                pt.lambda_tilde.push_back(std::max(0.0, tp.lambda));
            }
        }
    }

    if (lay.p_offset >= 0) {
        pt.p = Vector::Zero(lay.p_size);
        if (lay.t_offset >= 0) pt.t = 1e-3;
    }
    return built.pack(pt);
}

std::vector<SweepRecord> alpha_sweep(const ChanceSpec& spec, const std::vector<double>& alphas,
                                     const MethodSpec& method, const SweepOptions& opts) {
    require(!alphas.empty(), "alpha_sweep: empty alpha list");
    require(alphas.front() < 1.0 && alphas.back() > 0.0, "alpha_sweep: alphas outside (0,1)");
    for (std::size_t i = 1; i < alphas.size(); ++i)
        require(alphas[i] < alphas[i - 1], "alpha_sweep: alphas must be strictly decreasing");

    std::vector<SweepRecord> records;
    Vector warm;
    bool have_warm = false;
    for (std::size_t step = 0; step < alphas.size(); ++step) {
        SweepRecord rec;
        rec.alpha = alphas[step];
        if (opts.on_step) opts.on_step(static_cast<int>(step), alphas[step]);
        auto t0 = std::chrono::steady_clock::now();
        try {
            ChanceSpec stepped = spec;
            stepped.alpha = alphas[step];
            BuiltProblem built = build_chance_problem(stepped, method);
            Vector x0;
            if (opts.use_warm_start && have_warm && warm.size() == built.layout.dim) {
                x0 = warm;
                rec.warm_started = true;
            } else {
                x0 = initial_point(stepped, built, opts.ldt, opts.u0_override);
            }
            rec.result = solve(built.problem, x0, opts.nlp);
            rec.point = built.recover(rec.result.x);
            rec.objective = spec.sense == Sense::MaxThreshold
                                ? rec.point.z
                                : spec.objective.value(rec.point.u);
            if (rec.result.status == SolveStatus::Optimal) {
                warm = rec.result.x;
                have_warm = true;
            } else {
                have_warm = false;
            }

            // Feasibility check: Monte Carlo when alpha is within budget, an
            // LDT re-estimate cross-check otherwise.
            double thr = rec.point.threshold;
            long long want = static_cast<long long>(std::ceil(10.0 / alphas[step]));
            if (alphas[step] >= 1e-5 && want <= opts.mc_cap) {
                McEstimate mc = mc_probability(spec.dist, *spec.model, rec.point.u, thr,
                                               want, opts.mc_seed);
                rec.mc_prob = mc.p_hat;
                rec.mc_se = mc.standard_error;
                rec.mc_checked = true;
            }
            try {
                LdtSolution sol =
                    solve_ldt_minimizer(spec.dist, *spec.model, rec.point.u, thr, opts.ldt);
                ProbEstimate est =
                    method.method == CcMethod::Ldt2
                        ? p2_mixture(spec.dist, *spec.model, rec.point.u, thr, sol)
                        : p1_mixture(spec.dist, *spec.model, rec.point.u, thr, sol);
                rec.prob_estimate = est.value;
                rec.correction = est.correction;
            } catch (const std::exception&) {
                // cross-check unavailable; the MC column still reports
            }

            // Post-solve curvature verification of the relaxed condition.
            if (method.method == CcMethod::Ldt2 && !rec.point.xi_tilde.empty()) {
                double min_eig = kInf;
                Matrix bb = spec.model->hess_xi(rec.point.u, rec.point.xi_star);
                for (int i = 0; i < spec.dist.size(); ++i) {
                    CholeskyCache chol(spec.dist.components[i].gaussian);
                    const Matrix& s = chol.sqrt();
                    Matrix h = Matrix::Identity(spec.dist.dim(), spec.dist.dim()) -
                               rec.point.lambda_tilde[i] * (s * bb * s);
                    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (h + h.transpose()));
                    min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
                }
                rec.min_curvature_eig = min_eig;
            }
        } catch (const std::exception& e) {
            rec.error = e.what();
            have_warm = false;
        }
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace ldtcc
