#include <cmath>

#include "doctest.h"
#include "ldtcc/pde_model.hpp"
#include "ldtcc/rng.hpp"

using namespace ldtcc;

namespace {
Vector mean_xi() { return (Vector(2) << 0.0, 0.5).finished(); }
}  // namespace

TEST_CASE("constant solution with zero forcing") {
    AdvectionDiffusionModel model(12, /*forcing_amplitude=*/0.0);
    Vector u = Vector::Constant(model.dim_u(), 2.0);
    Vector y = model.solve_state(u, mean_xi());
    CHECK((y.array() - 2.0).abs().maxCoeff() <= 1e-8);
    CHECK(model.value(u, mean_xi()) == doctest::Approx(2.0).epsilon(1e-10));
}

TEST_CASE("mesh refinement gives a Cauchy sequence in F") {
    Vector xi = (Vector(2) << 0.3, 0.55).finished();
    double prev_gap = kInf;
    double f_prev = 0.0;
    bool have_prev = false;
    for (int m : {10, 20, 40}) {
        AdvectionDiffusionModel model(m);
        Vector u = Vector::Constant(m, 1.0);
        // The control is a grid function; a constant keeps refinements comparable.
        double f = model.value(u, xi);
        if (have_prev) {
            double gap = std::fabs(f - f_prev);
            CHECK(gap < prev_gap);
            prev_gap = gap;
        }
        f_prev = f;
        have_prev = true;
    }
}

TEST_CASE("state is affine in the boundary control") {
    AdvectionDiffusionModel model(11);
    Rng rng(4);
    Vector xi = mean_xi();
    Vector u1 = rng.normal_vector(model.dim_u());
    Vector u2 = rng.normal_vector(model.dim_u());
    Vector y12 = model.solve_state(u1 + u2, xi);
    Vector y1 = model.solve_state(u1, xi);
    Vector y2 = model.solve_state(u2, xi);
    Vector y0 = model.solve_state(Vector::Zero(model.dim_u()), xi);
    CHECK((y12 - y1 - y2 + y0).cwiseAbs().maxCoeff() <= 1e-9 * y1.cwiseAbs().maxCoeff());
}

TEST_CASE("adjoint control gradient matches directional finite differences") {
    AdvectionDiffusionModel model(11);
    Rng rng(9);
    Vector xi = (Vector(2) << 0.1, 0.45).finished();
    Vector u = rng.normal_vector(model.dim_u());
    Vector g = model.grad_u(u, xi);
    for (int rep = 0; rep < 3; ++rep) {
        Vector d = rng.normal_vector(model.dim_u());
        d /= d.norm();
        double h = 1e-5;
        double fp = model.value(u + h * d, xi);
        double fm = model.value(u - h * d, xi);
        double fd = (fp - fm) / (2.0 * h);
        CHECK(g.dot(d) == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("xi hessian is symmetric and derivative check passes at the mean") {
    AdvectionDiffusionModel model(15);
    Vector u = Vector::Constant(model.dim_u(), 0.5);
    Matrix h = model.hess_xi(u, mean_xi());
    CHECK((h - h.transpose()).cwiseAbs().maxCoeff() <= 1e-6);

    DerivativeReport rep = check_derivatives(model, u, mean_xi());
    CHECK(rep.threshold == 1e-4);
    CHECK(rep.pass);
}

TEST_CASE("operator factorizes across a 6-sigma box") {
    AdvectionDiffusionModel model(10);
    // xi ~ N((0, 0.5), diag(0.25, 0.01)): 6 sigma reaches (+-3, 0.5 +- 0.6).
    for (double x1 : {-3.0, 0.0, 3.0})
        for (double x2 : {-0.1, 0.5, 1.1})
            CHECK(model.factorization_ok((Vector(2) << x1, x2).finished()));
}

TEST_CASE("boundary quadrature integrates the objective") {
    AdvectionDiffusionModel model(21);
    Vector w = model.boundary_quadrature();
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w.minCoeff() > 0.0);
}
