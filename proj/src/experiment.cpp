#include "ldtcc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "ldtcc/mc.hpp"
#include "ldtcc/pde_model.hpp"
#include "ldtcc/rng.hpp"

namespace ldtcc {

namespace {

using Json = nlohmann::ordered_json;

// Seed streams derived from the top-level seed (documented in the README):
// 0 scenario draws, 1 MC feasibility checks, 2 LDT multistarts, 3 EM,
// 4+k the k-th estimate-mode MC column.
enum SeedStream : std::uint64_t {
    kScenarioStream = 0,
    kFeasibilityStream = 1,
    kMultistartStream = 2,
    kEmStream = 3,
    kEstimateStream = 4,
};

std::string fmt_value(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_value(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    return std::stod(s);
}

Vector json_vector(const Json& j) {
    Vector v(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
    return v;
}

Matrix json_matrix(const Json& j) {
    if (j.empty()) return Matrix();
    Matrix m(j.size(), j[0].size());
    for (std::size_t r = 0; r < j.size(); ++r) {
        require(j[r].size() == j[0].size(), "config: ragged matrix");
        for (std::size_t c = 0; c < j[r].size(); ++c) m(r, c) = j[r][c].get<double>();
    }
    return m;
}

Json vector_json(const Vector& v) {
    Json j = Json::array();
    for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
    return j;
}

Json matrix_json(const Matrix& m) {
    Json j = Json::array();
    for (int r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        j.push_back(row);
    }
    return j;
}

std::vector<double> json_number_list(const Json& j) {
    std::vector<double> out;
    if (j.is_number()) {
        out.push_back(j.get<double>());
    } else {
        for (const auto& v : j) out.push_back(v.get<double>());
    }
    return out;
}

GaussianSpec short_column_gaussian_preset() {
    Vector mu = (Vector(3) << 500.0, 2000.0, 1.604).finished();
    Matrix cov(3, 3);
    cov << 10000.0, 20000.0, 0.0, 20000.0, 160000.0, 0.0, 0.0, 0.0, 0.00995;
    return GaussianSpec{mu, cov};
}

MixtureSpec short_column_mixture_preset() {
    Vector mu2 = (Vector(3) << 100.0, 1000.0, 1.0849).finished();
    Matrix cov2(3, 3);
    cov2 << 10000.0, 20000.0, 0.0, 20000.0, 160000.0, 0.0, 0.0, 0.0, 0.0274;
    MixtureSpec d;
    d.components.push_back({0.5, short_column_gaussian_preset()});
    d.components.push_back({0.5, GaussianSpec{mu2, cov2}});
    return d;
}

MixtureSpec pde_gaussian_preset() {
    Vector mu = (Vector(2) << 0.0, 0.5).finished();
    Matrix cov = (Matrix(2, 2) << 0.25, 0.0, 0.0, 0.01).finished();
    return MixtureSpec::single(GaussianSpec{mu, cov});
}

Application parse_application(const std::string& s) {
    if (s == "portfolio") return Application::Portfolio;
    if (s == "short_column") return Application::ShortColumn;
    if (s == "pde") return Application::Pde;
    throw std::invalid_argument("config: unknown application '" + s + "'");
}

const char* application_name(Application a) {
    switch (a) {
        case Application::Portfolio: return "portfolio";
        case Application::ShortColumn: return "short_column";
        case Application::Pde: return "pde";
    }
    return "?";
}

RunMode parse_mode(const std::string& s) {
    if (s == "estimate") return RunMode::Estimate;
    if (s == "optimize") return RunMode::Optimize;
    if (s == "sweep") return RunMode::Sweep;
    throw std::invalid_argument("config: unknown mode '" + s + "'");
}

const char* mode_name(RunMode m) {
    switch (m) {
        case RunMode::Estimate: return "estimate";
        case RunMode::Optimize: return "optimize";
        case RunMode::Sweep: return "sweep";
    }
    return "?";
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("config: JSON parse failure: ") + e.what());
    }
    ExperimentConfig c;
    c.application = parse_application(j.at("application").get<std::string>());
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());

    const Json& d = j.at("distribution");
    c.distribution.type = d.at("type").get<std::string>();
    if (c.distribution.type == "gaussian") {
        GaussianSpec g{json_vector(d.at("mean")), json_matrix(d.at("cov"))};
        c.distribution.mixture = MixtureSpec::single(g);
    } else if (c.distribution.type == "mixture") {
        MixtureSpec m;
        for (const auto& comp : d.at("components"))
            m.components.push_back({comp.at("weight").get<double>(),
                                    GaussianSpec{json_vector(comp.at("mean")),
                                                 json_matrix(comp.at("cov"))}});
        c.distribution.mixture = m;
    } else if (c.distribution.type == "fit_csv") {
        c.distribution.csv_path = d.at("path").get<std::string>();
        if (d.contains("components"))
            c.distribution.components = d["components"].get<int>();
    } else if (c.distribution.type == "short_column_gaussian") {
        c.distribution.mixture = MixtureSpec::single(short_column_gaussian_preset());
    } else if (c.distribution.type == "short_column_mixture") {
        c.distribution.mixture = short_column_mixture_preset();
    } else if (c.distribution.type == "pde_gaussian") {
        c.distribution.mixture = pde_gaussian_preset();
    } else {
        throw std::invalid_argument("config: unknown distribution type '" +
                                    c.distribution.type + "'");
    }

    if (j.contains("z")) c.z_values = json_number_list(j["z"]);
    if (j.contains("alpha")) c.alphas = json_number_list(j["alpha"]);
    if (j.contains("methods")) {
        c.methods.clear();
        for (const auto& m : j["methods"]) {
            std::string name = m.get<std::string>();
            if (name != "ldt1" && name != "ldt2" && name != "saa" && name != "cvar" &&
                name != "mc")
                throw std::invalid_argument("config: unknown method '" + name + "'");
            c.methods.push_back(name);
        }
    }
    if (j.contains("method_params")) {
        const Json& p = j["method_params"];
        if (p.contains("mc_n")) c.params.mc_n = p["mc_n"].get<long long>();
        if (p.contains("mc_true_n")) c.params.mc_true_n = p["mc_true_n"].get<long long>();
        if (p.contains("estimate_mc")) {
            c.params.estimate_mc.clear();
            for (const auto& v : p["estimate_mc"])
                c.params.estimate_mc.push_back(v.get<long long>());
        }
        if (p.contains("saa_n")) c.params.saa_n = p["saa_n"].get<int>();
        if (p.contains("nu")) c.params.nu = p["nu"].get<double>();
        if (p.contains("tau")) c.params.tau = p["tau"].get<double>();
        if (p.contains("seed")) c.params.seed = p["seed"].get<std::uint64_t>();
    }
    if (j.contains("solver")) {
        const Json& s = j["solver"];
        if (s.contains("tol_stationarity"))
            c.solver.tol_stationarity = s["tol_stationarity"].get<double>();
        if (s.contains("tol_feasibility"))
            c.solver.tol_feasibility = s["tol_feasibility"].get<double>();
        if (s.contains("max_outer")) c.solver.max_outer = s["max_outer"].get<int>();
        if (s.contains("max_inner")) c.solver.max_inner = s["max_inner"].get<int>();
        if (s.contains("initial_penalty"))
            c.solver.initial_penalty = s["initial_penalty"].get<double>();
        if (s.contains("penalty_growth"))
            c.solver.penalty_growth = s["penalty_growth"].get<double>();
    }
    if (j.contains("output")) c.output_dir = j["output"].get<std::string>();
    if (j.contains("u")) c.u_fixed = json_vector(j["u"]);
    if (j.contains("portfolio")) {
        const Json& p = j["portfolio"];
        if (p.contains("horizon")) c.horizon = p["horizon"].get<double>();
    }
    if (j.contains("pde") && j["pde"].contains("mesh")) c.mesh = j["pde"]["mesh"].get<int>();

    // Mode-specific validation.
    for (const auto& m : c.methods)
        if (m == "mc" && c.mode != RunMode::Estimate)
            throw std::invalid_argument("config: method 'mc' is only valid in estimate mode");
    if (c.mode == RunMode::Sweep)
        for (std::size_t i = 1; i < c.alphas.size(); ++i)
            require(c.alphas[i] < c.alphas[i - 1],
                    "config: alpha list must be strictly decreasing in sweep mode");
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    ExperimentConfig c = parse_config_json(ss.str());
    if (c.distribution.type == "fit_csv" &&
        !std::filesystem::exists(c.distribution.csv_path))
        throw std::invalid_argument("config: referenced file does not exist: " +
                                    c.distribution.csv_path);
    return c;
}

std::string serialize_config(const ExperimentConfig& c) {
    Json j;
    j["application"] = application_name(c.application);
    j["mode"] = mode_name(c.mode);
    Json d;
    d["type"] = c.distribution.type;
    if (c.distribution.type == "gaussian") {
        d["mean"] = vector_json(c.distribution.mixture.components[0].gaussian.mean);
        d["cov"] = matrix_json(c.distribution.mixture.components[0].gaussian.cov);
    } else if (c.distribution.type == "mixture") {
        Json comps = Json::array();
        for (const auto& comp : c.distribution.mixture.components) {
            Json cj;
            cj["weight"] = comp.weight;
            cj["mean"] = vector_json(comp.gaussian.mean);
            cj["cov"] = matrix_json(comp.gaussian.cov);
            comps.push_back(cj);
        }
        d["components"] = comps;
    } else if (c.distribution.type == "fit_csv") {
        d["path"] = c.distribution.csv_path;
        d["components"] = c.distribution.components;
    }
    j["distribution"] = d;
    j["z"] = Json(c.z_values);
    j["alpha"] = Json(c.alphas);
    j["methods"] = Json(c.methods);
    Json p;
    p["mc_n"] = c.params.mc_n;
    p["mc_true_n"] = c.params.mc_true_n;
    p["estimate_mc"] = Json(c.params.estimate_mc);
    p["saa_n"] = c.params.saa_n;
    p["nu"] = c.params.nu;
    p["tau"] = c.params.tau;
    p["seed"] = c.params.seed;
    j["method_params"] = p;
    Json s;
    s["tol_stationarity"] = c.solver.tol_stationarity;
    s["tol_feasibility"] = c.solver.tol_feasibility;
    s["max_outer"] = c.solver.max_outer;
    s["max_inner"] = c.solver.max_inner;
    s["initial_penalty"] = c.solver.initial_penalty;
    s["penalty_growth"] = c.solver.penalty_growth;
    j["solver"] = s;
    j["output"] = c.output_dir;
    if (c.u_fixed.size() > 0) j["u"] = vector_json(c.u_fixed);
    j["portfolio"] = Json{{"horizon", c.horizon}};
    j["pde"] = Json{{"mesh", c.mesh}};
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// RunRecord serialization
// ---------------------------------------------------------------------------

const char* RunRecord::csv_header() {
    return "method,alpha,z,objective,prob_estimate,mc_prob,mc_se,status,correction,"
           "curvature_ok,kkt_residual";
}

std::string RunRecord::csv_row() const {
    std::ostringstream s;
    s << method << ',' << fmt_value(alpha) << ',' << fmt_value(z) << ','
      << fmt_value(objective) << ',' << fmt_value(prob_estimate) << ','
      << fmt_value(mc_prob) << ',' << fmt_value(mc_se) << ',' << status << ','
      << fmt_value(correction) << ','
      << (curvature_ok < 0 ? "" : (curvature_ok ? "1" : "0")) << ','
      << fmt_value(kkt_residual);
    return s.str();
}

RunRecord RunRecord::from_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 11) cells.push_back("");
    RunRecord r;
    r.method = cells[0];
    r.alpha = parse_value(cells[1]);
    r.z = parse_value(cells[2]);
    r.objective = parse_value(cells[3]);
    r.prob_estimate = parse_value(cells[4]);
    r.mc_prob = parse_value(cells[5]);
    r.mc_se = parse_value(cells[6]);
    r.status = cells[7];
    r.correction = parse_value(cells[8]);
    r.curvature_ok = cells[9].empty() ? -1 : (cells[9] == "1" ? 1 : 0);
    r.kkt_residual = parse_value(cells[10]);
    return r;
}

namespace {
bool value_equal(double a, double b) {
    if (std::isnan(a) && std::isnan(b)) return true;
    return a == b;
}
}  // namespace

bool record_equal(const RunRecord& a, const RunRecord& b) {
    return a.method == b.method && value_equal(a.alpha, b.alpha) && value_equal(a.z, b.z) &&
           value_equal(a.objective, b.objective) &&
           value_equal(a.prob_estimate, b.prob_estimate) &&
           value_equal(a.mc_prob, b.mc_prob) && value_equal(a.mc_se, b.mc_se) &&
           a.status == b.status && value_equal(a.correction, b.correction) &&
           a.curvature_ok == b.curvature_ok && value_equal(a.kkt_residual, b.kkt_residual);
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

Assembled assemble(const ExperimentConfig& config) {
    Assembled out;
    std::uint64_t seed = config.params.seed;

    // Resolve the distribution first (fit_csv also yields portfolio params).
    MixtureSpec dist;
    Vector theta, sigma;
    if (config.distribution.type == "fit_csv") {
        PriceIngest ingest = ingest_prices(config.distribution.csv_path);
        theta = ingest.theta;
        sigma = ingest.sigma;
        if (config.distribution.components <= 1) {
            dist = MixtureSpec::single(
                GaussianSpec{Vector::Zero(ingest.covariance.rows()), ingest.covariance});
        } else {
            // Mixture of the centered daily rates, so the drift stays in the
            // deterministic part of the stock model.
            Matrix centered = ingest.returns.rowwise() - ingest.drift.transpose();
            dist = fit_em(centered, config.distribution.components,
                          Rng::derive(seed, kEmStream));
        }
    } else {
        dist = config.distribution.mixture;
    }
    dist.validate();
    out.dist = dist;

    switch (config.application) {
        case Application::Portfolio: {
            require(config.distribution.type == "fit_csv",
                    "config: the portfolio application takes its parameters from a price "
                    "CSV (distribution type fit_csv)");
            auto model = std::make_unique<PortfolioModel>(theta, sigma, config.horizon);
            int n = model->dim_u();
            out.spec.domain.lower = Vector::Zero(n);
            out.spec.domain.upper = Vector::Constant(n, kInf);
            out.spec.domain.eq_a = Matrix::Ones(1, n);
            out.spec.domain.eq_b = Vector::Ones(1);
            out.spec.sense = Sense::MaxThreshold;
            out.negate_threshold = true;
            out.default_u = Vector::Constant(n, 1.0 / n);
            out.model = std::move(model);
            break;
        }
        case Application::ShortColumn: {
            auto model = std::make_unique<ShortColumnModel>();
            out.spec.domain.lower = model->lower_bounds();
            out.spec.domain.upper = model->upper_bounds();
            out.spec.objective.value = [](const Vector& u) { return u[0] * u[1]; };
            out.spec.objective.grad = [](const Vector& u) {
                return (Vector(2) << u[1], u[0]).finished();
            };
            out.default_u = (Vector(2) << 10.0, 20.0).finished();
            out.model = std::move(model);
            break;
        }
        case Application::Pde: {
            auto model = std::make_unique<AdvectionDiffusionModel>(config.mesh);
            Vector w = model->boundary_quadrature();
            out.spec.objective.value = [w](const Vector& u) {
                return 0.5 * u.dot(w.cwiseProduct(u));
            };
            out.spec.objective.grad = [w](const Vector& u) {
                return Vector(w.cwiseProduct(u));
            };
            // Start from a uniformly cooled control: the uncontrolled mean
            // temperature sits above the threshold, so the midpoint start
            // would violate the rare-event precondition.
            double z = config.z_values.empty() ? 1.0 : config.z_values.front();
            Vector zero = Vector::Zero(model->dim_u());
            Vector mean = dist.mean();
            double f0 = model->value(zero, mean);
            double gsum = model->grad_u(zero, mean).sum();
            double level = (0.8 * z - f0) / gsum;
            out.default_u = Vector::Constant(model->dim_u(), level);
            out.model = std::move(model);
            break;
        }
    }
    out.spec.model = out.model.get();
    out.spec.dist = dist;
    return out;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

namespace {

SolverOptions method_solver_options(const SolverOptions& base, CcMethod method) {
    SolverOptions o = base;
    if (method == CcMethod::Saa || method == CcMethod::Cvar) {
        // The sampling baselines carry hundreds of kinked rows; give them a
        // longer inner leash and a gentler penalty ramp.
        o.max_inner = std::max(o.max_inner, 4000);
        o.initial_penalty = std::max(o.initial_penalty, 100.0);
        o.penalty_growth = std::min(o.penalty_growth, 4.0);
    }
    return o;
}

CcMethod method_from_name(const std::string& name) {
    if (name == "ldt1") return CcMethod::Ldt1;
    if (name == "ldt2") return CcMethod::Ldt2;
    if (name == "saa") return CcMethod::Saa;
    if (name == "cvar") return CcMethod::Cvar;
    throw std::invalid_argument("unknown optimization method '" + name + "'");
}

struct EstimateCell {
    double z = 0.0;
    double p_true = std::numeric_limits<double>::quiet_NaN();
    double p1 = std::numeric_limits<double>::quiet_NaN();
    double p2 = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> p_mc;
};

void write_lines(const std::string& path, const std::vector<std::string>& lines,
                 std::vector<std::string>& files) {
    std::ofstream out(path);
    if (!out) throw NumericError("run_experiment: cannot write " + path);
    for (const auto& l : lines) out << l << "\n";
    files.push_back(path);
}

std::string pad(const std::string& s, std::size_t width) {
    return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string sci(double v, int prec = 3) {
    if (std::isnan(v)) return "-";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.*e", prec, v);
    return buf;
}

std::string fixed2(double v) {
    if (std::isnan(v)) return "-";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

RunOutput run_estimate(const ExperimentConfig& config, Assembled& app) {
    RunOutput out;
    Vector u = config.u_fixed.size() > 0 ? config.u_fixed : app.default_u;
    require(u.size() == app.model->dim_u(), "config: u has the wrong dimension");
    std::uint64_t seed = config.params.seed;
    bool want_p1 = std::count(config.methods.begin(), config.methods.end(), "ldt1") > 0;
    bool want_p2 = std::count(config.methods.begin(), config.methods.end(), "ldt2") > 0;
    bool want_mc = std::count(config.methods.begin(), config.methods.end(), "mc") > 0;
    std::vector<long long> mc_sizes = config.params.estimate_mc;
    if (want_mc && mc_sizes.empty()) mc_sizes = {10000, 100000};

    std::vector<EstimateCell> cells;
    for (double z : config.z_values) {
        double thr = app.negate_threshold ? -z : z;
        EstimateCell cell;
        cell.z = z;

        LdtOptions ldt_opts;
        ldt_opts.seed = Rng::derive(seed, kMultistartStream);
        LdtSolution sol;
        bool have_sol = false;
        std::string ldt_error;
        try {
            sol = solve_ldt_minimizer(app.dist, *app.model, u, thr, ldt_opts);
            have_sol = true;
        } catch (const std::exception& e) {
            ldt_error = e.what();
        }

        auto start = std::chrono::steady_clock::now();
        auto elapsed = [&start]() {
            auto now = std::chrono::steady_clock::now();
            double s = std::chrono::duration<double>(now - start).count();
            start = now;
            return s;
        };

        if (want_p1) {
            RunRecord r;
            r.method = "ldt1";
            r.z = z;
            if (have_sol) {
                ProbEstimate est = p1_mixture(app.dist, *app.model, u, thr, sol);
                cell.p1 = est.value;
                r.prob_estimate = est.value;
                r.correction = est.correction;
                r.curvature_ok = est.curvature_ok ? 1 : 0;
                r.kkt_residual = sol.kkt_residual;
                r.status = "ok";
            } else {
                r.status = "error: " + ldt_error;
            }
            r.wall_seconds = elapsed();
            out.records.push_back(r);
        }
        if (want_p2) {
            RunRecord r;
            r.method = "ldt2";
            r.z = z;
            if (have_sol) {
                try {
                    ProbEstimate est = p2_mixture(app.dist, *app.model, u, thr, sol);
                    cell.p2 = est.value;
                    r.prob_estimate = est.value;
                    r.correction = est.correction;
                    r.curvature_ok = est.curvature_ok ? 1 : 0;
                    r.kkt_residual = sol.kkt_residual;
                    r.status = "ok";
                } catch (const CurvatureError& e) {
                    r.status = std::string("curvature-failure: ") + e.what();
                }
            } else {
                r.status = "error: " + ldt_error;
            }
            r.wall_seconds = elapsed();
            out.records.push_back(r);
        }
        if (want_mc) {
            for (std::size_t k = 0; k < mc_sizes.size(); ++k) {
                McEstimate mc = mc_probability(app.dist, *app.model, u, thr, mc_sizes[k],
                                               Rng::derive(seed, kEstimateStream + k));
                cell.p_mc.push_back(mc.p_hat);
                RunRecord r;
                r.method = "mc_" + std::to_string(mc_sizes[k]);
                r.z = z;
                r.mc_prob = mc.p_hat;
                r.mc_se = mc.standard_error;
                r.status = "ok";
                r.wall_seconds = elapsed();
                out.records.push_back(r);
            }
        }
        if (config.params.mc_true_n > 0) {
            McEstimate mc =
                mc_probability(app.dist, *app.model, u, thr, config.params.mc_true_n,
                               Rng::derive(seed, kFeasibilityStream));
            cell.p_true = mc.p_hat;
            RunRecord r;
            r.method = "mc_true";
            r.z = z;
            r.mc_prob = mc.p_hat;
            r.mc_se = mc.standard_error;
            r.status = "ok";
            r.wall_seconds = elapsed();
            out.records.push_back(r);
        }
        cells.push_back(cell);
    }

    // Tabular summary in the shape of the probability-comparison tables.
    std::vector<std::string> lines;
    {
        std::ostringstream h;
        h << pad("z", 10) << pad("P_true", 12) << pad("P1", 12) << pad("P2", 12);
        for (long long nmc : mc_sizes) h << pad("PMC_" + std::to_string(nmc), 12);
        h << pad("eps1", 8) << pad("eps2", 8);
        for (long long nmc : mc_sizes) h << pad("epsMC_" + std::to_string(nmc), 12);
        lines.push_back(h.str());
        for (const auto& c : cells) {
            std::ostringstream row;
            row << pad(sci(c.z, 2), 10) << pad(sci(c.p_true), 12) << pad(sci(c.p1), 12)
                << pad(sci(c.p2), 12);
            for (double v : c.p_mc) row << pad(sci(v), 12);
            McEstimate ref;
            ref.p_hat = c.p_true;
            auto eps = [&](double v) {
                if (std::isnan(v) || std::isnan(c.p_true)) return std::string("-");
                if (v <= 0.0) return std::string("-inf");
                return fixed2(log_error(v, ref));
            };
            row << pad(eps(c.p1), 8) << pad(eps(c.p2), 8);
            for (double v : c.p_mc) row << pad(eps(v), 12);
            lines.push_back(row.str());
        }
    }
    std::filesystem::create_directories(config.output_dir);
    write_lines(config.output_dir + "/summary.txt", lines, out.files);
    return out;
}

RunOutput run_optimize_or_sweep(const ExperimentConfig& config, Assembled& app) {
    RunOutput out;
    std::uint64_t seed = config.params.seed;
    const bool sweep = config.mode == RunMode::Sweep;

    std::vector<std::string> fig_obj = {"method,alpha,objective"};
    std::vector<std::string> fig_gap = {"method,alpha,log10_gap"};
    std::vector<std::string> fig_time = {"method,alpha,seconds"};

    for (double z : config.z_values) {
        ChanceSpec spec = app.spec;
        spec.z = app.negate_threshold ? -z : z;

        for (const std::string& name : config.methods) {
            CcMethod mtd = method_from_name(name);
            MethodSpec ms;
            ms.method = mtd;
            ms.nu = config.params.nu;
            ms.tau = config.params.tau;
            if (mtd == CcMethod::Saa || mtd == CcMethod::Cvar)
                ms.samples = sample(app.dist, config.params.saa_n,
                                    Rng::derive(seed, kScenarioStream));

            SweepOptions opts;
            opts.nlp = method_solver_options(config.solver, mtd);
            opts.ldt.seed = Rng::derive(seed, kMultistartStream);
            opts.mc_seed = Rng::derive(seed, kFeasibilityStream);
            opts.mc_cap = config.params.mc_n;
            opts.use_warm_start = sweep;
            opts.u0_override = app.default_u;

            std::vector<SweepRecord> recs = alpha_sweep(spec, config.alphas, ms, opts);
            for (const auto& sr : recs) {
                RunRecord r;
                r.method = name;
                r.alpha = sr.alpha;
                r.z = app.negate_threshold ? sr.point.z : z;
                r.objective = sr.objective;
                r.prob_estimate = sr.prob_estimate;
                if (sr.mc_checked) {
                    r.mc_prob = sr.mc_prob;
                    r.mc_se = sr.mc_se;
                }
                r.status = sr.error.empty() ? to_string(sr.result.status)
                                            : "error: " + sr.error;
                r.correction = sr.correction;
                r.curvature_ok = std::isnan(sr.min_curvature_eig)
                                     ? -1
                                     : (sr.min_curvature_eig > -1e-6 ? 1 : 0);
                r.kkt_residual = sr.result.stationarity;
                r.wall_seconds = sr.wall_seconds;
                out.records.push_back(r);

                fig_obj.push_back(name + "," + fmt_value(sr.alpha) + "," +
                                  fmt_value(sr.objective));
                double gap = std::numeric_limits<double>::quiet_NaN();
                if (sr.mc_checked)
                    gap = (sr.mc_prob > 0 ? std::log10(sr.mc_prob) : -kInf) -
                          std::log10(sr.alpha);
                fig_gap.push_back(name + "," + fmt_value(sr.alpha) + "," + fmt_value(gap));
                fig_time.push_back(name + "," + fmt_value(sr.alpha) + "," +
                                   fmt_value(sr.wall_seconds));
            }
        }
    }

    std::filesystem::create_directories(config.output_dir);
    if (sweep) {
        write_lines(config.output_dir + "/fig_alpha_objective.csv", fig_obj, out.files);
        write_lines(config.output_dir + "/fig_alpha_gap.csv", fig_gap, out.files);
        write_lines(config.output_dir + "/fig_alpha_time.csv", fig_time, out.files);
    }

    std::vector<std::string> lines;
    {
        std::ostringstream h;
        h << pad("method", 8) << pad("alpha", 10) << pad("z", 12) << pad("objective", 14)
          << pad("P_est", 12) << pad("P_MC", 12) << pad("log10gap", 10)
          << pad("time[s]", 10) << "status";
        lines.push_back(h.str());
    }
    for (const auto& r : out.records) {
        double gap = std::numeric_limits<double>::quiet_NaN();
        if (!std::isnan(r.mc_prob) && !std::isnan(r.alpha))
            gap = (r.mc_prob > 0 ? std::log10(r.mc_prob) : -kInf) - std::log10(r.alpha);
        std::ostringstream row;
        row << pad(r.method, 8) << pad(sci(r.alpha, 1), 10) << pad(sci(r.z), 12)
            << pad(sci(r.objective, 5), 14) << pad(sci(r.prob_estimate), 12)
            << pad(sci(r.mc_prob), 12) << pad(fixed2(gap), 10)
            << pad(fixed2(r.wall_seconds), 10) << r.status;
        lines.push_back(row.str());
    }
    write_lines(config.output_dir + "/summary.txt", lines, out.files);
    return out;
}

}  // namespace

RunOutput run_experiment(const ExperimentConfig& config) {
    Assembled app = assemble(config);
    RunOutput out = config.mode == RunMode::Estimate ? run_estimate(config, app)
                                                     : run_optimize_or_sweep(config, app);

    std::filesystem::create_directories(config.output_dir);
    std::vector<std::string> lines = {RunRecord::csv_header()};
    for (const auto& r : out.records) lines.push_back(r.csv_row());
    std::string records_path = config.output_dir + "/records.csv";
    {
        std::ofstream f(records_path);
        if (!f) throw NumericError("run_experiment: cannot write " + records_path);
        for (const auto& l : lines) f << l << "\n";
    }
    out.files.insert(out.files.begin(), records_path);
    return out;
}

// ---------------------------------------------------------------------------
// Self test
// ---------------------------------------------------------------------------

int run_selftest(bool quiet) {
    int failures = 0;
    auto report = [&](const std::string& name, bool ok) {
        if (!ok) ++failures;
        if (!quiet) std::cout << "selftest: " << name << (ok ? " ok" : " FAIL") << "\n";
    };

    {
        Rng rng(17);
        int n = 5;
        Vector theta = 0.1 * rng.normal_vector(n);
        Vector sigma = (0.1 + 0.2 * rng.normal_vector(n).cwiseAbs().array()).matrix();
        PortfolioModel model(theta, sigma, 10.0);
        Vector u = rng.normal_vector(n).cwiseAbs();
        u /= u.sum();
        DerivativeReport rep = check_derivatives(model, u, 0.1 * rng.normal_vector(n));
        report("portfolio derivatives", rep.pass);
    }
    {
        ShortColumnModel model;
        Vector mu = (Vector(3) << 500.0, 2000.0, 1.604).finished();
        DerivativeReport rep =
            check_derivatives(model, (Vector(2) << 10.0, 20.0).finished(), mu);
        report("short column derivatives", rep.pass);
    }
    {
        AdvectionDiffusionModel model(15);
        Vector u = Vector::Constant(model.dim_u(), 0.5);
        DerivativeReport rep =
            check_derivatives(model, u, (Vector(2) << 0.0, 0.5).finished());
        report("advection-diffusion derivatives", rep.pass);
    }
    {
        Rng rng(41);
        bool all_ok = true;
        for (int rep_i = 0; rep_i < 10; ++rep_i) {
            int n = 4, me = 2;
            Matrix a(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
            Matrix q = a * a.transpose() + Matrix::Identity(n, n);
            Vector c = rng.normal_vector(n);
            Matrix ae(me, n);
            for (int i = 0; i < me; ++i) ae.row(i) = rng.normal_vector(n).transpose();
            Vector be = rng.normal_vector(me);
            Matrix kkt = Matrix::Zero(n + me, n + me);
            kkt.topLeftCorner(n, n) = q;
            kkt.topRightCorner(n, me) = ae.transpose();
            kkt.bottomLeftCorner(me, n) = ae;
            Vector rhs(n + me);
            rhs.head(n) = -c;
            rhs.tail(me) = be;
            Vector sol = kkt.fullPivLu().solve(rhs);

            NlpProblem p;
            p.dim = n;
            p.objective = [q, c](const Vector& x) { return 0.5 * x.dot(q * x) + c.dot(x); };
            p.objective_grad = [q, c](const Vector& x) { return Vector(q * x + c); };
            ConstraintBlock eq;
            eq.size = me;
            eq.value = [ae, be](const Vector& x) { return Vector(ae * x - be); };
            eq.jacobian = [ae](const Vector&) { return ae; };
            p.equalities.push_back(eq);
            NlpResult r = solve(p, Vector::Zero(n));
            all_ok = all_ok && r.status == SolveStatus::Optimal &&
                     (r.x - sol.head(n)).cwiseAbs().maxCoeff() <= 1e-6;
        }
        report("solver QP suite", all_ok);
    }
    {
        Rng rng(43);
        bool all_ok = true;
        for (int rep_i = 0; rep_i < 10; ++rep_i) {
            int n = 4;
            Matrix a(n, n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
            Matrix h = a * a.transpose() + 0.3 * Matrix::Identity(n, n);
            Vector v = rng.normal_vector(n);
            v /= v.norm();
            Eigen::HouseholderQR<Matrix> qr(v);
            Matrix qmat = qr.householderQ();
            Matrix basis = qmat.rightCols(n - 1);
            double want = (basis.transpose() * h * basis).determinant();
            all_ok = all_ok && std::fabs(det_perp(h, v) - want) <= 1e-9 * std::fabs(want);
        }
        report("orthogonal determinant", all_ok);
    }
    return failures;
}

}  // namespace ldtcc
