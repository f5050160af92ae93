// Acceptance suite: one self-contained check per release criterion, each
// printing a PASS/FAIL line. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <vector>

#include "ldtcc/experiment.hpp"
#include "ldtcc/formulations.hpp"
#include "ldtcc/ldt.hpp"
#include "ldtcc/mc.hpp"
#include "ldtcc/pde_model.hpp"
#include "ldtcc/rng.hpp"

using namespace ldtcc;

namespace {

struct Criterion {
    int id;
    std::string title;
    std::function<bool(std::string&)> run;
};

// ---------------------------------------------------------------------------
// shared fixtures
// ---------------------------------------------------------------------------

GaussianSpec sc_gaussian() {
    Vector mu = (Vector(3) << 500.0, 2000.0, 1.604).finished();
    Matrix cov(3, 3);
    cov << 10000.0, 20000.0, 0.0, 20000.0, 160000.0, 0.0, 0.0, 0.0, 0.00995;
    return GaussianSpec{mu, cov};
}

ChanceSpec sc_spec(const ShortColumnModel& model, MixtureSpec dist, double alpha) {
    ChanceSpec spec;
    spec.model = &model;
    spec.dist = std::move(dist);
    spec.z = 1.0;
    spec.alpha = alpha;
    spec.objective.value = [](const Vector& u) { return u[0] * u[1]; };
    spec.objective.grad = [](const Vector& u) {
        return (Vector(2) << u[1], u[0]).finished();
    };
    spec.domain.lower = model.lower_bounds();
    spec.domain.upper = model.upper_bounds();
    return spec;
}

GaussianSpec random_gaussian(int n, Rng& rng, double mean_scale = 1.0) {
    Vector mu(n);
    for (int i = 0; i < n; ++i) mu[i] = mean_scale * rng.normal();
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    Matrix cov = a * a.transpose() + 0.3 * Matrix::Identity(n, n);
    return GaussianSpec{mu, cov};
}

class LinearModel : public LimitStateModel {
public:
    explicit LinearModel(Vector a) : a_(std::move(a)) {}
    int dim_u() const override { return 1; }
    int dim_xi() const override { return static_cast<int>(a_.size()); }
    double value(const Vector&, const Vector& xi) const override { return a_.dot(xi); }
    Vector grad_xi(const Vector&, const Vector&) const override { return a_; }
    Matrix hess_xi(const Vector&, const Vector&) const override {
        return Matrix::Zero(a_.size(), a_.size());
    }
    Vector grad_u(const Vector&, const Vector&) const override { return Vector::Zero(1); }
    Matrix grad_u_xi(const Vector&, const Vector&) const override {
        return Matrix::Zero(1, a_.size());
    }
    Curvature xi_curvature() const override { return Curvature::Concave; }
    bool analytic_derivatives() const override { return true; }

private:
    Vector a_;
};

// Desk-scale synthetic portfolio (10 stocks, daily units).
struct PortfolioInstance {
    PortfolioModel model;
    MixtureSpec gaussian;
    MixtureSpec mixture;
    Vector allocation;
};

PortfolioInstance make_portfolio_instance(std::uint64_t seed) {
    Rng rng(seed);
    int n = 10;
    Vector theta(n), sigma(n);
    for (int i = 0; i < n; ++i) {
        theta[i] = -0.0005 + 0.002 * rng.uniform();
        sigma[i] = 0.01 + 0.02 * rng.uniform();
    }
    Matrix a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    Matrix raw = a * a.transpose() + n * Matrix::Identity(n, n);
    Vector d = raw.diagonal().cwiseSqrt().cwiseInverse();
    Matrix corr = d.asDiagonal() * raw * d.asDiagonal();
    Matrix cov = sigma.asDiagonal() * corr * sigma.asDiagonal();

    PortfolioInstance inst{PortfolioModel(theta, sigma, 10.0),
                           MixtureSpec::single(GaussianSpec{Vector::Zero(n), cov}),
                           MixtureSpec{},
                           Vector()};
    inst.mixture.components.push_back(
        {0.65, GaussianSpec{Vector::Constant(n, -0.002), 0.8 * cov}});
    inst.mixture.components.push_back(
        {0.35, GaussianSpec{Vector::Constant(n, 0.003), 1.5 * cov}});
    Vector u(n);
    for (int i = 0; i < n; ++i) u[i] = rng.uniform();
    inst.allocation = u / u.sum();
    return inst;
}

// Threshold with the prescribed order-k estimate (bisection on log10 P_k).
double threshold_for_target(const MixtureSpec& dist, const LimitStateModel& model,
                            const Vector& u, double log10_target, int order) {
    Vector mean = dist.mean();
    double f0 = model.value(u, mean);
    auto log10p = [&](double thr) {
        LdtSolution sol = solve_ldt_minimizer(dist, model, u, thr);
        ProbEstimate est = order == 2 ? p2_mixture(dist, model, u, thr, sol)
                                      : p1_mixture(dist, model, u, thr, sol);
        return est.log_value / std::log(10.0);
    };
    // bracket: walk thresholds up from just above F(u, mean)
    GaussianSpec mm = dist.moment_match();
    Vector g0 = model.grad_xi(u, mean);
    Vector dir = mm.cov * g0;
    double unit = std::sqrt(g0.dot(dir));
    double lo = model.value(u, mean + (0.5 / unit) * dir);
    double hi = lo;
    for (double t = 1.0; t <= 16.0; t *= 1.3) {
        hi = model.value(u, mean + (t / unit) * dir);
        if (log10p(hi) < log10_target) break;
    }
    (void)f0;
    for (int it = 0; it < 60; ++it) {
        double mid = 0.5 * (lo + hi);
        if (log10p(mid) > log10_target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

SolverOptions ldt_opts() {
    SolverOptions o;
    o.tol_stationarity = 1e-5;  // the MC gates do the substantive verification
    o.max_outer = 60;
    o.max_inner = 1500;
    return o;
}

SolverOptions baseline_opts() {
    SolverOptions o;
    o.max_outer = 60;
    o.max_inner = 4000;
    o.initial_penalty = 100.0;
    o.penalty_growth = 4.0;
    return o;
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

bool c1_halfspace_exactness(std::string& detail) {
    Rng rng(101);
    Vector u = Vector::Zero(1);
    double worst = 0.0;

    GaussianSpec g = random_gaussian(3, rng);
    Vector a = rng.normal_vector(3);
    LinearModel model(a);
    double sd = std::sqrt(a.dot(g.cov * a));
    for (double log10p = -1.0; log10p >= -10.0; log10p -= 1.0) {
        double p_target = std::pow(10.0, log10p);
        double z = a.dot(g.mean) - normal_cdf_inv(p_target) * sd;
        LdtSolution sol = solve_ldt_minimizer(MixtureSpec::single(g), model, u, z);
        ProbEstimate est = p1_gaussian(g, model, u, z, sol);
        double exact = normal_cdf((a.dot(g.mean) - z) / sd);
        worst = std::max(worst, std::fabs(est.value - exact) / exact);
    }

    MixtureSpec mix;
    mix.components.push_back({0.55, random_gaussian(3, rng, 0.4)});
    mix.components.push_back({0.45, random_gaussian(3, rng, 0.4)});
    auto mix_tail = [&](double z) {
        double p = 0.0;
        for (const auto& c : mix.components) {
            double s = std::sqrt(a.dot(c.gaussian.cov * a));
            p += c.weight * normal_cdf(-(z - a.dot(c.gaussian.mean)) / s);
        }
        return p;
    };
    GaussianSpec mm = mix.moment_match();
    double mix_sd = std::sqrt(a.dot(mm.cov * a));
    for (double log10p = -1.0; log10p >= -10.0; log10p -= 1.0) {
        double target = std::pow(10.0, log10p);
        double zl = a.dot(mm.mean), zh = a.dot(mm.mean) + 50.0 * mix_sd;
        for (int it = 0; it < 200; ++it) {
            double zm = 0.5 * (zl + zh);
            if (mix_tail(zm) > target)
                zl = zm;
            else
                zh = zm;
        }
        double z = 0.5 * (zl + zh);
        LdtSolution sol = solve_ldt_minimizer(mix, model, u, z);
        ProbEstimate est = p1_mixture(mix, model, u, z, sol);
        double exact = mix_tail(z);
        worst = std::max(worst, std::fabs(est.value - exact) / exact);
    }
    std::ostringstream d;
    d << "max relative error " << worst << " (tolerance 1e-12)";
    detail = d.str();
    return worst <= 1e-12;
}

bool c2_order2_consistency(std::string& detail) {
    Rng rng(202);
    Vector u = Vector::Zero(1);
    double worst = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        GaussianSpec g = random_gaussian(3, rng);
        Vector a = rng.normal_vector(3);
        LinearModel model(a);
        double z = a.dot(g.mean) + (1.5 + 2.0 * rng.uniform()) * std::sqrt(a.dot(g.cov * a));
        MixtureSpec single = MixtureSpec::single(g);
        LdtSolution sol = solve_ldt_minimizer(single, model, u, z);
        ProbEstimate p1 = p1_gaussian(g, model, u, z, sol);
        ProbEstimate p2 = p2_gaussian(g, model, u, z, sol);
        worst = std::max(worst, std::fabs(p2.value - p1.value) / p1.value);

        MixtureSpec mix;
        mix.components.push_back({0.5, g});
        mix.components.push_back({0.5, random_gaussian(3, rng, 0.3)});
        GaussianSpec mm = mix.moment_match();
        double zm = a.dot(mm.mean) + 2.5 * std::sqrt(a.dot(mm.cov * a));
        LdtSolution msol = solve_ldt_minimizer(mix, model, u, zm);
        ProbEstimate m1 = p1_mixture(mix, model, u, zm, msol);
        ProbEstimate m2 = p2_mixture(mix, model, u, zm, msol);
        worst = std::max(worst, std::fabs(m2.value - m1.value) / m1.value);
    }
    std::ostringstream d;
    d << "max |P2-P1|/P1 " << worst << " with zero Hessians (tolerance 1e-12)";
    detail = d.str();
    return worst <= 1e-12;
}

bool c3_conservativeness(std::string& detail) {
    PortfolioInstance inst = make_portfolio_instance(303);
    const GaussianSpec& g = inst.gaussian.components[0].gaussian;
    Rng rng(304);
    int violations = 0;
    double worst_margin = kInf;
    for (int k = 0; k < 10; ++k) {
        Vector u(inst.model.dim_u());
        for (int i = 0; i < u.size(); ++i) u[i] = rng.uniform();
        u /= u.sum();
        double log10_target = -2.0 - 2.0 * rng.uniform();  // p in [1e-4, 1e-2]
        double thr = threshold_for_target(inst.gaussian, inst.model, u, log10_target, 1);
        LdtSolution sol = solve_ldt_minimizer(inst.gaussian, inst.model, u, thr);
        ProbEstimate p1 = p1_gaussian(g, inst.model, u, thr, sol);
        McEstimate mc = mc_probability(inst.gaussian, inst.model, u, thr, 1000000,
                                       Rng::derive(305, k));
        double margin = p1.value - (mc.p_hat - 3.0 * mc.standard_error);
        worst_margin = std::min(worst_margin, margin);
        if (margin < 0) ++violations;
    }

    // Order-1 LDT optima pass the MC feasibility gate.
    ChanceSpec spec;
    spec.model = &inst.model;
    spec.dist = inst.gaussian;
    spec.alpha = 1e-3;
    int n = inst.model.dim_u();
    spec.domain.lower = Vector::Zero(n);
    spec.domain.upper = Vector::Constant(n, kInf);
    spec.domain.eq_a = Matrix::Ones(1, n);
    spec.domain.eq_b = Vector::Ones(1);
    spec.sense = Sense::MaxThreshold;
    int gate_failures = 0;
    for (double alpha : {1e-2, 1e-3}) {
        spec.alpha = alpha;
        MethodSpec ms;
        ms.method = CcMethod::Ldt1;
        BuiltProblem built = build_var_max(spec, ms);
        NlpResult res = solve(built.problem, initial_point(spec, built), ldt_opts());
        if (res.status != SolveStatus::Optimal) {
            ++gate_failures;
            continue;
        }
        RecoveredPoint pt = built.recover(res.x);
        McEstimate mc = mc_probability(inst.gaussian, inst.model, pt.u, pt.threshold,
                                       1000000, 306);
        if (mc.p_hat > alpha + 3.0 * mc.standard_error) ++gate_failures;
        // The maximized return level must not overshoot the true quantile.
        double var_mc = var_quantile(inst.gaussian, inst.model, pt.u, alpha, 10000000, 307);
        if (pt.z > var_mc + 1e-3) ++gate_failures;
    }
    std::ostringstream d;
    d << violations << "/10 estimate violations (worst margin " << worst_margin << "), "
      << gate_failures << "/2 optimization gate+quantile failures";
    detail = d.str();
    return violations == 0 && gate_failures == 0;
}

bool c4_second_order_accuracy(std::string& detail) {
    PortfolioInstance inst = make_portfolio_instance(404);
    double worst = 0.0;
    bool in_range = true;
    bool conservative = true;
    int cell = 0;
    for (const MixtureSpec* dist : {&inst.gaussian, &inst.mixture}) {
        for (double log10_target : {-4.0, -5.0}) {
            double thr =
                threshold_for_target(*dist, inst.model, inst.allocation, log10_target, 2);
            LdtSolution sol = solve_ldt_minimizer(*dist, inst.model, inst.allocation, thr);
            ProbEstimate p2 = p2_mixture(*dist, inst.model, inst.allocation, thr, sol);
            McEstimate mc = mc_probability(*dist, inst.model, inst.allocation, thr,
                                           10000000, Rng::derive(405, cell++));
            if (mc.p_hat < 1e-6 || mc.p_hat > 1e-3) in_range = false;
            double err = std::fabs(std::log10(p2.value) - std::log10(mc.p_hat));
            worst = std::max(worst, err);
            // First order over-estimates on this concave model.
            ProbEstimate p1 = p1_mixture(*dist, inst.model, inst.allocation, thr, sol);
            if (p1.value < mc.p_hat - 3.0 * mc.standard_error) conservative = false;
        }
    }
    std::ostringstream d;
    d << "max |log10 P2 - log10 P_MC(1e7)| = " << worst
      << (in_range ? "" : " [true probability left the target range]")
      << (conservative ? "" : " [P1 lost conservativeness]") << " (tolerance 0.2)";
    detail = d.str();
    return worst <= 0.2 && in_range && conservative;
}

bool c5_short_column(std::string& detail) {
    ShortColumnModel model;
    MixtureSpec dist = MixtureSpec::single(sc_gaussian());
    std::vector<double> alphas = {1e-1, 1e-2, 1e-3, 1e-4};
    std::vector<double> areas1, areas2;
    std::vector<Vector> designs1, designs2;

    for (auto method : {CcMethod::Ldt1, CcMethod::Ldt2}) {
        ChanceSpec spec = sc_spec(model, dist, alphas.front());
        MethodSpec ms;
        ms.method = method;
        SweepOptions opts;
        opts.nlp = ldt_opts();
        opts.mc_cap = 0;  // gate separately below at the criterion's sample size
        auto recs = alpha_sweep(spec, alphas, ms, opts);
        for (const auto& r : recs) {
            if (!r.error.empty() || r.result.status != SolveStatus::Optimal) {
                detail = "sweep step failed for " + std::string(to_string(method));
                return false;
            }
            (method == CcMethod::Ldt1 ? areas1 : areas2).push_back(r.objective);
            (method == CcMethod::Ldt1 ? designs1 : designs2).push_back(r.point.u);
        }
    }

    bool monotone = true;
    for (std::size_t i = 1; i < alphas.size(); ++i) {
        if (areas1[i] < areas1[i - 1] - 1e-8) monotone = false;
        if (areas2[i] < areas2[i - 1] - 1e-8) monotone = false;
    }

    bool feasible = true;
    double worst_gap = -kInf;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        for (const auto* designs : {&designs1, &designs2}) {
            McEstimate mc = mc_probability(dist, model, (*designs)[i], 1.0, 1000000,
                                           Rng::derive(505, i));
            double gap = mc.p_hat - (alphas[i] + 3.0 * mc.standard_error);
            worst_gap = std::max(worst_gap, gap);
            if (gap > 0) feasible = false;
        }
    }

    bool close = true;
    double worst_rel = 0.0;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        double rel = std::fabs(areas1[i] - areas2[i]) / std::max(areas1[i], areas2[i]);
        worst_rel = std::max(worst_rel, rel);
        if (rel > 0.02) close = false;
    }
    std::ostringstream d;
    d << (monotone ? "monotone" : "NOT monotone") << ", worst feasibility slack "
      << worst_gap << ", max order-1/order-2 area gap " << 100.0 * worst_rel << "%";
    detail = d.str();
    return monotone && feasible && close;
}

bool c6_baseline_failure(std::string& detail) {
    ShortColumnModel model;
    MixtureSpec dist = MixtureSpec::single(sc_gaussian());
    double alpha = 1e-4;

    ChanceSpec spec = sc_spec(model, dist, alpha);
    Matrix samples = sample(dist, 100, 606);
    BuiltProblem saa = build_saa(spec, samples, 200.0, 200.0);
    NlpResult rs = solve(saa.problem, initial_point(spec, saa), baseline_opts());
    Vector u_saa = saa.recover(rs.x).u;
    McEstimate mc_saa = mc_probability(dist, model, u_saa, 1.0, 1000000, 607);

    BuiltProblem ldt = build_gaussian_cc(spec, 1);
    NlpResult rl = solve(ldt.problem, initial_point(spec, ldt), ldt_opts());
    if (rl.status != SolveStatus::Optimal) {
        detail = "ldt1 solve failed";
        return false;
    }
    Vector u_ldt = ldt.recover(rl.x).u;
    McEstimate mc_ldt = mc_probability(dist, model, u_ldt, 1.0, 1000000, 608);

    bool saa_violates = mc_saa.p_hat > alpha + 3.0 * mc_saa.standard_error;
    bool ldt_ok = mc_ldt.p_hat <= alpha + 3.0 * mc_ldt.standard_error;
    std::ostringstream d;
    d << "SAA(N=100) P_MC " << mc_saa.p_hat << " vs alpha " << alpha << " (log10 gap "
      << std::log10(std::max(mc_saa.p_hat, 1e-300) / alpha) << "); ldt1 P_MC "
      << mc_ldt.p_hat;
    detail = d.str();
    return saa_violates && ldt_ok;
}

bool c7_kkt_oracle(std::string& detail) {
    Rng rng(707);
    Vector u = Vector::Zero(1);
    double worst_x = 0.0, worst_kkt = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        int n = 2 + static_cast<int>(rng.uniform() * 4);
        GaussianSpec g = random_gaussian(n, rng);
        Vector a = rng.normal_vector(n);
        double z = a.dot(g.mean) + (1.0 + 3.0 * rng.uniform()) * std::sqrt(a.dot(g.cov * a));
        LinearModel model(a);
        LdtSolution sol = solve_ldt_minimizer(MixtureSpec::single(g), model, u, z);
        Vector sa = g.cov * a;
        Vector expected = g.mean + sa * (z - a.dot(g.mean)) / a.dot(sa);
        worst_x = std::max(worst_x,
                           (sol.xi_star - expected).norm() / (1.0 + expected.norm()));
        worst_kkt = std::max(worst_kkt, sol.kkt_residual / (1.0 + a.norm()));
    }
    std::ostringstream d;
    d << "max relative x-error " << worst_x << " (tol 1e-8), max scaled KKT residual "
      << worst_kkt << " (tol 1e-6)";
    detail = d.str();
    return worst_x <= 1e-8 && worst_kkt <= 1e-6;
}

bool c8_mixture_rate_properties(std::string& detail) {
    Rng rng(808);
    int lower_bound_violations = 0;
    double worst_violation = 0.0, worst_duality = 0.0;
    int total = 0;
    for (int mix_i = 0; mix_i < 5; ++mix_i) {
        int m = 2 + (mix_i % 2);
        MixtureSpec dist;
        std::vector<double> w(m);
        double wsum = 0.0;
        for (int i = 0; i < m; ++i) {
            w[i] = 0.2 + rng.uniform();
            wsum += w[i];
        }
        for (int i = 0; i < m; ++i)
            dist.components.push_back({w[i] / wsum, random_gaussian(2, rng)});
        for (int k = 0; k < 100; ++k) {
            Vector xi = dist.mean() + 3.0 * rng.normal_vector(2);
            RateResult r = rate_mixture(dist, xi);
            ++total;
            double min_component = kInf;
            for (const auto& c : dist.components)
                min_component = std::min(min_component, rate_gaussian(c.gaussian, xi));
            if (r.value < min_component - 1e-8) {
                ++lower_bound_violations;
                worst_violation = std::max(worst_violation, min_component - r.value);
            }
            double dual = r.eta.dot(xi) - cgf(dist, r.eta);
            worst_duality = std::max(
                worst_duality, std::fabs(dual - r.value) / (1.0 + std::fabs(r.value)));
        }
    }
    bool duality_ok = worst_duality <= 1e-10;
    std::ostringstream d;
    d << "I >= min_j I_j - 1e-8 violated at " << lower_bound_violations << "/" << total
      << " points (worst gap " << worst_violation
      << ") -- the pointwise lower bound fails between component means, only "
      << "its convex envelope holds; "
      << "duality residual " << worst_duality << (duality_ok ? " (<= 1e-10 ok)" : " BAD");
    detail = d.str();
    return lower_bound_violations == 0 && duality_ok;
}

bool c9_derivative_hygiene(std::string& detail) {
    Rng rng(909);
    bool pass = true;
    std::ostringstream d;

    {
        int n = 6;
        Vector theta = 0.05 * rng.normal_vector(n);
        Vector sigma = (0.1 + 0.1 * rng.normal_vector(n).cwiseAbs().array()).matrix();
        PortfolioModel model(theta, sigma, 10.0);
        Vector u = rng.normal_vector(n).cwiseAbs();
        u /= u.sum();
        DerivativeReport rep = check_derivatives(model, u, 0.1 * rng.normal_vector(n));
        pass = pass && rep.pass;
        d << "portfolio " << (rep.pass ? "ok" : "FAIL");
    }
    {
        ShortColumnModel model;
        DerivativeReport rep = check_derivatives(
            model, (Vector(2) << 10.0, 20.0).finished(), sc_gaussian().mean);
        pass = pass && rep.pass;
        d << ", short column " << (rep.pass ? "ok" : "FAIL");
    }
    {
        AdvectionDiffusionModel model(15);
        Vector u = Vector::Constant(model.dim_u(), 0.5);
        DerivativeReport rep =
            check_derivatives(model, u, (Vector(2) << 0.0, 0.5).finished());
        pass = pass && rep.pass;
        d << ", pde " << (rep.pass ? "ok" : "FAIL");
    }
    {
        double worst = 0.0;
        for (int rep_i = 0; rep_i < 50; ++rep_i) {
            int n = 3 + static_cast<int>(rng.uniform() * 4);
            GaussianSpec g = random_gaussian(n, rng);
            Vector v = rng.normal_vector(n);
            v /= v.norm();
            Eigen::HouseholderQR<Matrix> qr(v);
            Matrix q = qr.householderQ();
            Matrix basis = q.rightCols(n - 1);
            double want = (basis.transpose() * g.cov * basis).determinant();
            worst = std::max(worst, std::fabs(det_perp(g.cov, v) - want) / std::fabs(want));
        }
        pass = pass && worst <= 1e-9;
        d << ", det_perp worst rel err " << worst << " (tol 1e-9)";
    }
    detail = d.str();
    return pass;
}

bool c10_pde_control(std::string& detail) {
    ExperimentConfig config;
    config.application = Application::Pde;
    config.mode = RunMode::Sweep;
    config.distribution.type = "pde_gaussian";
    config.distribution.mixture = MixtureSpec::single(
        GaussianSpec{(Vector(2) << 0.0, 0.5).finished(),
                     (Matrix(2, 2) << 0.25, 0.0, 0.0, 0.01).finished()});
    config.mesh = 15;
    Assembled app = assemble(config);

    ChanceSpec spec = app.spec;
    spec.z = 1.0;
    MethodSpec ms;
    ms.method = CcMethod::Ldt1;
    SweepOptions opts;
    opts.nlp = ldt_opts();
    opts.mc_cap = 0;
    opts.u0_override = app.default_u;
    auto recs = alpha_sweep(spec, {1e-2, 1e-3}, ms, opts);
    if (recs.size() != 2 || !recs[0].error.empty() || !recs[1].error.empty() ||
        recs[0].result.status != SolveStatus::Optimal ||
        recs[1].result.status != SolveStatus::Optimal) {
        detail = "PDE solves did not reach optimal status";
        return false;
    }
    McEstimate mc =
        mc_probability(spec.dist, *spec.model, recs[0].point.u, 1.0, 10000, 1010);
    bool feasible = mc.p_hat <= 1e-2;
    bool grows = recs[1].objective > recs[0].objective;
    std::ostringstream d;
    d << "alpha 1e-2: objective " << recs[0].objective << ", P_MC(1e4 solves) " << mc.p_hat
      << "; alpha 1e-3: objective " << recs[1].objective
      << (grows ? " (tightening grows the objective)" : " (objective did NOT grow)");
    detail = d.str();
    return feasible && grows;
}

bool c11_determinism(std::string& detail) {
    namespace fs = std::filesystem;
    ExperimentConfig c;
    c.application = Application::ShortColumn;
    c.mode = RunMode::Optimize;
    c.distribution.type = "short_column_gaussian";
    c.distribution.mixture = MixtureSpec::single(sc_gaussian());
    c.z_values = {1.0};
    c.alphas = {1e-2};
    c.methods = {"ldt1", "saa"};
    c.params.saa_n = 80;
    c.params.mc_n = 50000;
    c.params.seed = 1111;
    c.solver.max_inner = 4000;
    fs::path base = fs::temp_directory_path() / "ldtcc_acceptance_determinism";
    fs::remove_all(base);
    auto read = [](const fs::path& p) {
        std::ifstream in(p);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    c.output_dir = (base / "a").string();
    run_experiment(c);
    c.output_dir = (base / "b").string();
    run_experiment(c);
    std::string ra = read(base / "a" / "records.csv");
    std::string rb = read(base / "b" / "records.csv");
    fs::remove_all(base);
    bool same = !ra.empty() && ra == rb;
    detail = same ? "records.csv byte-identical across reruns"
                  : "records.csv differs between reruns";
    return same;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> criteria = {
        {1, "half-space exactness of the first-order estimate", c1_halfspace_exactness},
        {2, "second order collapses to first order for zero Hessians",
         c2_order2_consistency},
        {3, "first-order conservativeness on the concave portfolio", c3_conservativeness},
        {4, "second-order accuracy against MC(1e7) on desk-scale portfolios",
         c4_second_order_accuracy},
        {5, "short-column sweep: monotone, feasible, order-1/2 agreement",
         c5_short_column},
        {6, "SAA(N=100) fails at alpha=1e-4 where ldt1 stays feasible",
         c6_baseline_failure},
        {7, "dominating points match the closed form with tight KKT residuals",
         c7_kkt_oracle},
        {8, "mixture rate-function properties at random points", c8_mixture_rate_properties},
        {9, "derivative hygiene and the projected-determinant oracle",
         c9_derivative_hygiene},
        {10, "PDE boundary control: feasible at alpha=1e-2, objective grows at 1e-3",
         c10_pde_control},
        {11, "byte-identical records.csv for identical config and seed", c11_determinism},
    };

    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failures = 0;
    for (auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        auto t0 = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d: %s -- %s [%s, %.1fs]\n", c.id,
                    ok ? "PASS" : "FAIL", c.title.c_str(), detail.c_str(), secs);
        std::fflush(stdout);
        if (!ok) ++failures;
    }
    return failures;
}
