#include "ldtcc/nlp.hpp"

#include <cmath>
#include <deque>
#include <iostream>
#include <sstream>

namespace ldtcc {

int NlpProblem::num_eq() const {
    int n = 0;
    for (const auto& b : equalities) n += b.size;
    return n;
}

int NlpProblem::num_ineq() const {
    int n = 0;
    for (const auto& b : inequalities) n += b.size;
    return n;
}

const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::Optimal: return "optimal";
        case SolveStatus::MaxIter: return "max-iter";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::NumericFailure: return "numeric-failure";
    }
    return "unknown";
}

namespace {

Vector clamp_to_bounds(const Vector& x, const Vector& lo, const Vector& hi) {
    if (lo.size() == 0) return x;
    return x.cwiseMax(lo).cwiseMin(hi);
}

// |x - P(x - g)|_inf evaluated componentwise so the gradient is not
// absorbed by rounding when |x| is large.
double projected_gradient_norm(const Vector& x, const Vector& g, const Vector& lo,
                               const Vector& hi) {
    double m = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        double step;
        if (lo.size() == 0) {
            step = g[i];
        } else {
            double target = x[i] - g[i];
            if (target < lo[i])
                step = x[i] - lo[i];
            else if (target > hi[i])
                step = x[i] - hi[i];
            else
                step = g[i];
        }
        m = std::max(m, std::fabs(step));
    }
    return m;
}

class Evaluator {
public:
    Evaluator(const NlpProblem& p, const SolverOptions& o) : p_(p), o_(o) {}

    double objective(const Vector& x) const { return p_.objective(x); }

    Vector objective_grad(const Vector& x) const {
        if (p_.objective_grad) return p_.objective_grad(x);
        return fd_grad([this](const Vector& v) { return p_.objective(v); }, x);
    }

    Vector stacked(const std::vector<ConstraintBlock>& blocks, const Vector& x) const {
        Vector out(total(blocks));
        int at = 0;
        for (const auto& b : blocks) {
            out.segment(at, b.size) = b.value(x);
            at += b.size;
        }
        return out;
    }

    Matrix stacked_jac(const std::vector<ConstraintBlock>& blocks, const Vector& x) const {
        Matrix out(total(blocks), p_.dim);
        int at = 0;
        for (const auto& b : blocks) {
            if (b.jacobian && !b.fd_jacobian)
                out.middleRows(at, b.size) = b.jacobian(x);
            else
                out.middleRows(at, b.size) = fd_jac(b, x);
            at += b.size;
        }
        return out;
    }

    /// Cross-check analytic Jacobians against finite differences where a
    /// block carries both.
    void verify_jacobians(const Vector& x0) const {
        for (const auto* blocks : {&p_.equalities, &p_.inequalities}) {
            for (const auto& b : *blocks) {
                if (!(b.jacobian && b.fd_jacobian)) continue;
                Matrix ja = b.jacobian(x0);
                Matrix jf = fd_jac(b, x0);
                double scale = 1.0 + ja.cwiseAbs().maxCoeff();
                if ((ja - jf).cwiseAbs().maxCoeff() > 1e-4 * scale)
                    throw std::invalid_argument(
                        "NlpProblem: analytic and FD Jacobians disagree at the start point");
            }
        }
    }

    static int total(const std::vector<ConstraintBlock>& blocks) {
        int n = 0;
        for (const auto& b : blocks) n += b.size;
        return n;
    }

private:
    template <class F>
    Vector fd_grad(F&& f, const Vector& x) const {
        Vector g(x.size());
        Vector xx = x;
        for (int i = 0; i < x.size(); ++i) {
            double h = o_.fd_step * (1.0 + std::fabs(x[i]));
            xx[i] = x[i] + h;
            double fp = f(xx);
            xx[i] = x[i] - h;
            double fm = f(xx);
            xx[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        return g;
    }

    Matrix fd_jac(const ConstraintBlock& b, const Vector& x) const {
        Matrix j(b.size, x.size());
        Vector xx = x;
        for (int i = 0; i < x.size(); ++i) {
            double h = o_.fd_step * (1.0 + std::fabs(x[i]));
            xx[i] = x[i] + h;
            Vector fp = b.value(xx);
            xx[i] = x[i] - h;
            Vector fm = b.value(xx);
            xx[i] = x[i];
            j.col(i) = (fp - fm) / (2.0 * h);
        }
        return j;
    }

    const NlpProblem& p_;
    const SolverOptions& o_;
};

/// Limited-memory BFGS pairs with two-loop recursion.
class LbfgsMemory {
public:
    explicit LbfgsMemory(int capacity) : capacity_(capacity) {}

    void clear() { pairs_.clear(); }

    bool empty() const { return pairs_.empty(); }

    void push(const Vector& s, const Vector& y) {
        double sy = s.dot(y);
        if (sy <= 1e-12 * s.norm() * y.norm()) return;  // curvature guard
        pairs_.push_back({s, y, 1.0 / sy});
        if (static_cast<int>(pairs_.size()) > capacity_) pairs_.pop_front();
    }

    // h0_diag, when nonempty, seeds the recursion with H0 = diag(1/h0_diag)
    // instead of the usual scalar secant scaling.
    Vector direction(const Vector& g, const Vector& h0_diag) const {
        Vector q = -g;
        if (pairs_.empty()) {
            if (h0_diag.size() > 0) return q.cwiseQuotient(h0_diag);
            return q;
        }
        std::vector<double> alpha(pairs_.size());
        for (int i = static_cast<int>(pairs_.size()) - 1; i >= 0; --i) {
            alpha[i] = pairs_[i].rho * pairs_[i].s.dot(q);
            q -= alpha[i] * pairs_[i].y;
        }
        if (h0_diag.size() > 0) {
            q = q.cwiseQuotient(h0_diag);
        } else {
            const auto& last = pairs_.back();
            q *= last.s.dot(last.y) / last.y.squaredNorm();
        }
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            double beta = pairs_[i].rho * pairs_[i].y.dot(q);
            q += (alpha[i] - beta) * pairs_[i].s;
        }
        return q;
    }

private:
    struct Pair {
        Vector s, y;
        double rho;
    };
    int capacity_;
    std::deque<Pair> pairs_;
};

struct InnerResult {
    Vector x;
    double projected_grad_norm = kInf;
    int iterations = 0;
    bool stalled = false;
};

/// Projected-line-search L-BFGS on a box.
template <class ValueFn, class GradFn, class PrecondFn>
InnerResult minimize_box(ValueFn&& value, GradFn&& grad, PrecondFn&& precond, Vector x,
                         const Vector& lo, const Vector& hi, double tol, int max_iter) {
    InnerResult out;
    LbfgsMemory mem(10);
    double f = value(x);
    Vector g = grad(x);
    double grad_step = 1.0;  // adaptive trial step for plain gradient moves
    double window_best = f;
    double window_pg = kInf;
    int since_progress = 0;
    for (int it = 0; it < max_iter; ++it) {
        double pg_now = projected_gradient_norm(x, g, lo, hi);
        // Give up when a long stretch of iterations improves neither the
        // function nor the projected gradient; the outer loop is better
        // served by a multiplier update.
        if (f < window_best - 1e-14 * (1.0 + std::fabs(window_best)) ||
            pg_now < 0.9 * window_pg) {
            window_best = std::min(window_best, f);
            window_pg = std::min(window_pg, pg_now);
            since_progress = 0;
        } else if (++since_progress > 60) {
            out.x = x;
            out.projected_grad_norm = pg_now;
            out.iterations = it;
            out.stalled = true;
            return out;
        }
        double pg = projected_gradient_norm(x, g, lo, hi);
        if (pg <= tol) {
            out.projected_grad_norm = pg;
            out.x = x;
            out.iterations = it;
            return out;
        }
        Vector d = mem.direction(g, precond());
        // Suppress movement along actively binding bounds.
        if (lo.size() > 0) {
            for (int i = 0; i < x.size(); ++i) {
                if ((x[i] <= lo[i] && d[i] < 0) || (x[i] >= hi[i] && d[i] > 0)) d[i] = 0.0;
            }
        }
        bool gradient_move = mem.empty();
        if (g.dot(d) > -1e-14 * g.norm() * (d.norm() + 1e-300)) {
            mem.clear();
            d = -g;
            gradient_move = true;
            if (lo.size() > 0) {
                for (int i = 0; i < x.size(); ++i) {
                    if ((x[i] <= lo[i] && d[i] < 0) || (x[i] >= hi[i] && d[i] > 0)) d[i] = 0.0;
                }
            }
        }
        double t_start = gradient_move ? grad_step : 1.0;
        double t = t_start;
        bool accepted = false;
        Vector xn;
        double fn = 0.0;
        while (t >= 1e-18) {
            xn = clamp_to_bounds(x + t * d, lo, hi);
            fn = value(xn);
            if (std::isfinite(fn) && fn <= f + 1e-4 * g.dot(xn - x)) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (gradient_move && accepted) grad_step = (t == t_start) ? 2.0 * t : t;
        if (!accepted) {
            out.x = x;
            out.projected_grad_norm = pg;
            out.iterations = it;
            out.stalled = true;
            return out;
        }
        Vector gn = grad(xn);
        mem.push(xn - x, gn - g);
        x = xn;
        f = fn;
        g = gn;
    }
    out.x = x;
    out.projected_grad_norm = projected_gradient_norm(x, g, lo, hi);
    out.iterations = max_iter;
    return out;
}

}  // namespace

std::tuple<double, double, double> kkt_residual(const NlpProblem& problem, const Vector& x,
                                                const Vector& eq_mult, const Vector& ineq_mult) {
    SolverOptions opts;
    Evaluator ev(problem, opts);
    Vector g = ev.objective_grad(x);
    double feas = 0.0, comp = 0.0;
    if (!problem.equalities.empty()) {
        Vector ce = ev.stacked(problem.equalities, x);
        Matrix je = ev.stacked_jac(problem.equalities, x);
        g += je.transpose() * eq_mult;
        feas = std::max(feas, ce.cwiseAbs().maxCoeff());
    }
    if (!problem.inequalities.empty()) {
        Vector ci = ev.stacked(problem.inequalities, x);
        Matrix ji = ev.stacked_jac(problem.inequalities, x);
        g += ji.transpose() * ineq_mult;
        feas = std::max(feas, ci.cwiseMax(0.0).maxCoeff());
        comp = (ineq_mult.array() * ci.array()).abs().maxCoeff();
    }
    double stat = projected_gradient_norm(x, g, problem.lower, problem.upper);
    return {stat, feas, comp};
}

namespace {

NlpResult solve_unscaled(const NlpProblem& problem, const Vector& x0,
                         const SolverOptions& opts) {
    NlpResult res;
    res.x = clamp_to_bounds(x0, problem.lower, problem.upper);
    res.eq_multipliers = Vector::Zero(problem.num_eq());
    res.ineq_multipliers = Vector::Zero(problem.num_ineq());

    Evaluator ev(problem, opts);
    try {
        ev.verify_jacobians(res.x);

        // Objective scaling: balance the objective gradient against the
        // (row-scaled) constraint gradients at the start point.
        double obj_scale = 1.0;
        {
            Vector g0 = ev.objective_grad(res.x);
            double gn = g0.cwiseAbs().maxCoeff();
            if (std::isfinite(gn) && gn > 1.0) obj_scale = 1.0 / gn;
        }

        double rho = opts.initial_penalty;
        Vector lam_e = res.eq_multipliers;
        Vector lam_i = res.ineq_multipliers;
        Vector x = res.x;
        double prev_viol = kInf;
        double inner_tol = 1e-2;
        const int ne = problem.num_eq();
        const int ni = problem.num_ineq();

        auto augmented = [&](const Vector& v) {
            double raw = ev.objective(v);
            if (raw < -1e30) throw NumericError("nlp: objective unbounded below");
            double val = obj_scale * raw;
            if (ne > 0) {
                Vector ce = ev.stacked(problem.equalities, v);
                val += lam_e.dot(ce) + 0.5 * rho * ce.squaredNorm();
            }
            if (ni > 0) {
                Vector ci = ev.stacked(problem.inequalities, v);
                for (int i = 0; i < ni; ++i) {
                    double t = std::max(0.0, lam_i[i] + rho * ci[i]);
                    val += (t * t - lam_i[i] * lam_i[i]) / (2.0 * rho);
                }
            }
            return val;
        };
        Vector al_diag = Vector::Ones(problem.dim);
        auto augmented_grad = [&](const Vector& v) {
            Vector g = obj_scale * ev.objective_grad(v);
            Vector diag = Vector::Ones(problem.dim);
            if (ne > 0) {
                Vector ce = ev.stacked(problem.equalities, v);
                Matrix je = ev.stacked_jac(problem.equalities, v);
                g += je.transpose() * (lam_e + rho * ce);
                diag += rho * je.colwise().squaredNorm().transpose();
            }
            if (ni > 0) {
                Vector ci = ev.stacked(problem.inequalities, v);
                Matrix ji = ev.stacked_jac(problem.inequalities, v);
                Vector t = (lam_i + rho * ci).cwiseMax(0.0);
                g += ji.transpose() * t;
                for (int r = 0; r < ni; ++r)
                    if (t[r] > 0.0) diag += rho * ji.row(r).cwiseAbs2().transpose();
            }
            al_diag = diag.cwiseMax(1e-8);
            return g;
        };
        auto al_precond = [&]() -> const Vector& { return al_diag; };

        for (int outer = 0; outer < opts.max_outer; ++outer) {
            InnerResult inner = minimize_box(augmented, augmented_grad, al_precond, x,
                                             problem.lower, problem.upper, inner_tol,
                                             opts.max_inner);
            x = inner.x;
            res.inner_iterations += inner.iterations;
            res.iterations = outer + 1;

            Vector ce = ne > 0 ? ev.stacked(problem.equalities, x) : Vector();
            Vector ci = ni > 0 ? ev.stacked(problem.inequalities, x) : Vector();
            double viol = 0.0;
            if (ne > 0) viol = std::max(viol, ce.cwiseAbs().maxCoeff());
            if (ni > 0) viol = std::max(viol, ci.maxCoeff());
            viol = std::max(viol, 0.0);

            // First-order multiplier update.
            if (ne > 0) lam_e += rho * ce;
            if (ni > 0) lam_i = (lam_i + rho * ci).cwiseMax(0.0);

            // Least-squares multiplier refinement over the free coordinates
            // and the active rows; first-order updates alone converge slowly
            // for degenerate (LP-like) active sets.
            {
                std::vector<int> free_idx;
                for (int k = 0; k < problem.dim; ++k) {
                    bool at_bound = problem.lower.size() > 0 &&
                                    (x[k] <= problem.lower[k] + 1e-12 * (1.0 + std::fabs(x[k])) ||
                                     x[k] >= problem.upper[k] - 1e-12 * (1.0 + std::fabs(x[k])));
                    if (!at_bound) free_idx.push_back(k);
                }
                std::vector<int> act_idx;  // active inequality rows
                if (ni > 0)
                    for (int r = 0; r < ni; ++r)
                        if (lam_i[r] > 0.0 || ci[r] > -1e-8) act_idx.push_back(r);
                int cols = ne + static_cast<int>(act_idx.size());
                if (!free_idx.empty() && cols > 0) {
                    Matrix je, ji;
                    if (ne > 0) je = ev.stacked_jac(problem.equalities, x);
                    if (!act_idx.empty()) ji = ev.stacked_jac(problem.inequalities, x);
                    Matrix a(free_idx.size(), cols);
                    Vector rhs(free_idx.size());
                    Vector gobj = obj_scale * ev.objective_grad(x);
                    for (std::size_t r = 0; r < free_idx.size(); ++r) {
                        int k = free_idx[r];
                        rhs[r] = -gobj[k];
                        for (int c = 0; c < ne; ++c) a(r, c) = je(c, k);
                        for (std::size_t c = 0; c < act_idx.size(); ++c)
                            a(r, ne + c) = ji(act_idx[c], k);
                    }
                    Vector m = a.colPivHouseholderQr().solve(rhs);
                    Vector cand_e = lam_e, cand_i = lam_i;
                    for (int c = 0; c < ne; ++c) cand_e[c] = m[c];
                    if (ni > 0) cand_i.setZero();
                    for (std::size_t c = 0; c < act_idx.size(); ++c)
                        cand_i[act_idx[c]] = std::max(0.0, m[ne + c]);
                    auto [stat_new, f_new, c_new] = kkt_residual(
                        problem, x, Vector(cand_e / obj_scale), Vector(cand_i / obj_scale));
                    auto [stat_old, f_old, c_old] = kkt_residual(
                        problem, x, Vector(lam_e / obj_scale), Vector(lam_i / obj_scale));
                    (void)f_new; (void)c_new; (void)f_old; (void)c_old;
                    if (stat_new < stat_old) {
                        lam_e = cand_e;
                        lam_i = cand_i;
                    }
                }
            }

            auto [stat, feas, comp] =
                kkt_residual(problem, x, Vector(lam_e / obj_scale), Vector(lam_i / obj_scale));
            stat *= obj_scale;  // judge stationarity on the scaled objective
            res.stationarity = stat;
            res.feasibility = feas;
            res.complementarity = comp;
            if (opts.monitor) opts.monitor(outer, stat, feas);
            if (opts.verbose)
                std::cerr << "outer " << outer << " stat " << stat << " feas " << feas
                          << " rho " << rho << " inner " << inner.iterations << "\n";

            if (feas <= opts.tol_feasibility && stat <= opts.tol_stationarity) {
                res.x = x;
                res.eq_multipliers = lam_e / obj_scale;
                res.ineq_multipliers = lam_i / obj_scale;
                res.status = SolveStatus::Optimal;
                return res;
            }

            if (viol > opts.tol_feasibility && viol > 0.25 * prev_viol)
                rho *= opts.penalty_growth;
            prev_viol = std::min(prev_viol, viol);
            inner_tol = std::max(0.1 * opts.tol_stationarity, 0.2 * inner_tol);

            if (rho > 1e14) {
                res.x = x;
                res.eq_multipliers = lam_e / obj_scale;
                res.ineq_multipliers = lam_i / obj_scale;
                res.status = feas > std::sqrt(opts.tol_feasibility) ? SolveStatus::Infeasible
                                                                    : SolveStatus::MaxIter;
                res.message = "penalty parameter exhausted";
                return res;
            }
            res.x = x;
            res.eq_multipliers = lam_e / obj_scale;
            res.ineq_multipliers = lam_i / obj_scale;
        }
        res.status = SolveStatus::MaxIter;
        return res;
    } catch (const std::invalid_argument&) {
        throw;
    } catch (const std::exception& e) {
        res.status = SolveStatus::NumericFailure;
        res.message = e.what();
        return res;
    }
}

}  // namespace

NlpResult solve(const NlpProblem& problem, const Vector& x0, const SolverOptions& opts) {
    bool scaled_rows = false;
    for (const auto* blocks : {&problem.equalities, &problem.inequalities})
        for (const auto& b : *blocks)
            if (b.row_scaling.size() > 0) scaled_rows = true;
    if (problem.variable_scaling.size() == 0 && !scaled_rows)
        return solve_unscaled(problem, x0, opts);

    Vector s = problem.variable_scaling.size() > 0 ? problem.variable_scaling
                                                   : Vector::Ones(problem.dim);
    require(s.size() == problem.dim && s.minCoeff() > 0.0,
            "NlpProblem: variable_scaling must be positive and sized to dim");

    NlpProblem t;
    t.dim = problem.dim;
    t.objective = [f = problem.objective, s](const Vector& y) {
        return f(s.cwiseProduct(y));
    };
    if (problem.objective_grad)
        t.objective_grad = [g = problem.objective_grad, s](const Vector& y) {
            return Vector(s.cwiseProduct(g(s.cwiseProduct(y))));
        };
    auto transform_blocks = [&](const std::vector<ConstraintBlock>& in,
                                std::vector<ConstraintBlock>& out) {
        for (const auto& b : in) {
            ConstraintBlock tb;
            tb.size = b.size;
            tb.fd_jacobian = b.fd_jacobian;
            Vector r = b.row_scaling.size() > 0 ? b.row_scaling
                                                : Vector::Ones(b.size);
            require(r.size() == b.size && r.minCoeff() > 0.0,
                    "ConstraintBlock: row_scaling must be positive and sized");
            tb.value = [f = b.value, r, s](const Vector& y) {
                return Vector(f(s.cwiseProduct(y)).cwiseQuotient(r));
            };
            if (b.jacobian)
                tb.jacobian = [f = b.jacobian, r, s](const Vector& y) {
                    Matrix j = f(s.cwiseProduct(y));
                    j.array().colwise() /= r.array();
                    j.array().rowwise() *= s.transpose().array();
                    return j;
                };
            out.push_back(std::move(tb));
        }
    };
    transform_blocks(problem.equalities, t.equalities);
    transform_blocks(problem.inequalities, t.inequalities);
    if (problem.lower.size() > 0) {
        t.lower = problem.lower.cwiseQuotient(s);
        t.upper = problem.upper.cwiseQuotient(s);
    }

    NlpResult res = solve_unscaled(t, Vector(x0.cwiseQuotient(s)), opts);
    res.x = s.cwiseProduct(res.x);

    // Undo the row scaling on the multipliers: c/r = 0 carries r * lambda.
    auto unscale_multipliers = [](const std::vector<ConstraintBlock>& blocks, Vector& m) {
        int at = 0;
        for (const auto& b : blocks) {
            if (b.row_scaling.size() > 0)
                m.segment(at, b.size).array() /= b.row_scaling.array();
            at += b.size;
        }
    };
    unscale_multipliers(problem.equalities, res.eq_multipliers);
    unscale_multipliers(problem.inequalities, res.ineq_multipliers);
    return res;
}

}  // namespace ldtcc
