#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "ldtcc/experiment.hpp"
#include "ldtcc/mc.hpp"
#include "ldtcc/rng.hpp"

using namespace ldtcc;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("ldtcc_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::string str(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("price ingestion") {
    TempDir tmp;

    SUBCASE("synthetic GBM recovers its parameters") {
        Vector theta = (Vector(2) << 0.05, 0.02).finished();
        Vector sigma = (Vector(2) << 0.20, 0.30).finished();
        std::string csv = tmp.str("gbm.csv");
        write_gbm_prices(csv, theta, sigma, Matrix(), 10000, 7);
        PriceIngest ing = ingest_prices(csv);
        CHECK(ing.symbols.size() == 2);
        CHECK(ing.returns.rows() == 9999);
        for (int i = 0; i < 2; ++i)
            CHECK(std::fabs(ing.sigma[i] - sigma[i]) <= 0.05 * sigma[i]);
        // drift = theta - sigma^2/2 within sampling noise (se ~ sigma/sqrt(N))
        for (int i = 0; i < 2; ++i) {
            double want = theta[i] - 0.5 * sigma[i] * sigma[i];
            CHECK(std::fabs(ing.drift[i] - want) <= 5.0 * sigma[i] / std::sqrt(9999.0));
        }
    }

    SUBCASE("constant prices give zero returns, rejected downstream") {
        std::string csv = tmp.str("flat.csv");
        std::ofstream f(csv);
        f << "date,A,B\n1,10,20\n2,10,20\n3,10,20\n";
        f.close();
        PriceIngest ing = ingest_prices(csv);
        CHECK(ing.returns.cwiseAbs().maxCoeff() == 0.0);
        GaussianSpec g{Vector::Zero(2), ing.covariance};
        CHECK_THROWS_AS(g.validate(), std::invalid_argument);  // SPD check fires
    }

    SUBCASE("malformed rows name the row") {
        std::string csv = tmp.str("bad.csv");
        std::ofstream f(csv);
        f << "date,A,B\n1,10,20\n2,10\n3,10,20\n";
        f.close();
        try {
            ingest_prices(csv);
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            CHECK(std::string(e.what()).find("row 3") != std::string::npos);
        }

        std::string csv2 = tmp.str("neg.csv");
        std::ofstream f2(csv2);
        f2 << "date,A\n1,10\n2,-3\n";
        f2.close();
        CHECK_THROWS_AS(ingest_prices(csv2), ParseError);

        std::string csv3 = tmp.str("short.csv");
        std::ofstream f3(csv3);
        f3 << "date,A\n1,10\n";
        f3.close();
        CHECK_THROWS_AS(ingest_prices(csv3), ParseError);
    }
}

TEST_CASE("fit pipeline: GBM csv to mixture file and back") {
    TempDir tmp;
    Vector theta = (Vector(2) << 0.001, -0.0005).finished();
    Vector sigma = (Vector(2) << 0.02, 0.03).finished();
    std::string csv = tmp.str("fitme.csv");
    write_gbm_prices(csv, theta, sigma, Matrix(), 3000, 21);
    PriceIngest ing = ingest_prices(csv);
    Matrix centered = ing.returns.rowwise() - ing.drift.transpose();
    MixtureSpec mix = fit_em(centered, 2, 33);
    std::string path = tmp.str("mix_fit.txt");
    save_mixture(path, mix);
    MixtureSpec back = load_mixture(path);
    REQUIRE(back.size() == 2);
    for (int i = 0; i < 2; ++i) {
        CHECK(back.components[i].weight == mix.components[i].weight);
        CHECK((back.components[i].gaussian.cov - mix.components[i].gaussian.cov)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("mixture parameter file round trip") {
    TempDir tmp;
    Rng rng(3);
    MixtureSpec dist;
    dist.components.push_back(
        {0.25, GaussianSpec{(Vector(2) << 0.1, -0.7).finished(),
                            (Matrix(2, 2) << 1.3, 0.2, 0.2, 0.9).finished()}});
    dist.components.push_back(
        {0.75, GaussianSpec{(Vector(2) << -1.0 / 3.0, 2.0).finished(),
                            (Matrix(2, 2) << 0.5, -0.1, -0.1, 2.0).finished()}});
    std::string path = tmp.str("mix.txt");
    save_mixture(path, dist);
    MixtureSpec back = load_mixture(path);
    REQUIRE(back.size() == 2);
    for (int i = 0; i < 2; ++i) {
        CHECK(back.components[i].weight == dist.components[i].weight);
        CHECK((back.components[i].gaussian.mean - dist.components[i].gaussian.mean)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
        CHECK((back.components[i].gaussian.cov - dist.components[i].gaussian.cov)
                  .cwiseAbs()
                  .maxCoeff() == 0.0);
    }
}

TEST_CASE("config parsing, validation and round trip") {
    std::string text = R"({
        "application": "short_column",
        "mode": "sweep",
        "distribution": {"type": "short_column_gaussian"},
        "z": 1.0,
        "alpha": [0.1, 0.01],
        "methods": ["ldt1", "ldt2"],
        "method_params": {"mc_n": 50000, "saa_n": 100, "nu": 200, "tau": 200, "seed": 9},
        "solver": {"tol_stationarity": 1e-6},
        "output": "out_test"
    })";
    ExperimentConfig c = parse_config_json(text);
    CHECK(c.application == Application::ShortColumn);
    CHECK(c.mode == RunMode::Sweep);
    CHECK(c.alphas.size() == 2);
    CHECK(c.params.seed == 9);
    CHECK(c.distribution.mixture.dim() == 3);

    // canonical serialize -> parse -> serialize is a fixed point
    std::string s1 = serialize_config(c);
    ExperimentConfig c2 = parse_config_json(s1);
    std::string s2 = serialize_config(c2);
    CHECK(s1 == s2);

    // unknown method and non-decreasing sweep alphas rejected
    CHECK_THROWS_AS(parse_config_json(R"({"application":"short_column",
        "distribution":{"type":"short_column_gaussian"},"methods":["newton"]})"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_config_json(R"({"application":"short_column","mode":"sweep",
        "distribution":{"type":"short_column_gaussian"},"alpha":[0.01,0.1]})"),
                    std::invalid_argument);
    CHECK_THROWS_AS(parse_config_json(R"({"application":"short_column","mode":"optimize",
        "distribution":{"type":"short_column_gaussian"},"methods":["mc"]})"),
                    std::invalid_argument);
}

TEST_CASE("run record round trip") {
    RunRecord r;
    r.method = "ldt2";
    r.alpha = 1e-3;
    r.z = 1.0;
    r.objective = 123.456789;
    r.prob_estimate = 4.2e-4;
    r.mc_prob = 0.0;
    r.mc_se = 1e-5;
    r.status = "optimal";
    r.correction = 0.97;
    r.curvature_ok = 1;
    r.kkt_residual = 3e-9;
    RunRecord back = RunRecord::from_csv_row(r.csv_row());
    CHECK(record_equal(r, back));

    RunRecord sparse;
    sparse.method = "mc_10000";
    sparse.mc_prob = -kInf;  // renders as -inf and survives
    sparse.status = "ok";
    RunRecord back2 = RunRecord::from_csv_row(sparse.csv_row());
    CHECK(record_equal(sparse, back2));
}

TEST_CASE("estimate mode writes a probability table") {
    TempDir tmp;
    ExperimentConfig c;
    c.application = Application::ShortColumn;
    c.mode = RunMode::Estimate;
    c.distribution.type = "short_column_gaussian";
    c.distribution.mixture = parse_config_json(
        R"({"application":"short_column","distribution":{"type":"short_column_gaussian"}})")
                                 .distribution.mixture;
    c.z_values = {1.0, 1.2};
    c.methods = {"ldt1", "ldt2", "mc"};
    c.params.estimate_mc = {10000};
    c.params.mc_true_n = 100000;
    c.params.seed = 5;
    c.output_dir = tmp.str("est");
    RunOutput out = run_experiment(c);
    // per z: ldt1, ldt2, one mc column, mc_true
    CHECK(out.records.size() == 8);
    CHECK(std::filesystem::exists(c.output_dir + "/records.csv"));
    CHECK(std::filesystem::exists(c.output_dir + "/summary.txt"));
    std::string summary = slurp(c.output_dir + "/summary.txt");
    CHECK(summary.find("P_true") != std::string::npos);
    CHECK(summary.find("PMC_10000") != std::string::npos);

    // P1 conservative >= true for this near-linear model; P1 >= P2 pattern
    double p1 = 0, p2 = 0, ptrue = 0;
    for (const auto& r : out.records) {
        if (r.z == 1.0 && r.method == "ldt1") p1 = r.prob_estimate;
        if (r.z == 1.0 && r.method == "ldt2") p2 = r.prob_estimate;
        if (r.z == 1.0 && r.method == "mc_true") ptrue = r.mc_prob;
    }
    CHECK(p1 > 0);
    CHECK(p2 > 0);
    CHECK(ptrue > 0);
    CHECK(std::fabs(std::log10(p2) - std::log10(ptrue)) <
          std::fabs(std::log10(p1) - std::log10(ptrue)) + 0.3);
}

TEST_CASE("optimize mode produces records for every cell and is byte identical") {
    TempDir tmp;
    ExperimentConfig c;
    c.application = Application::ShortColumn;
    c.mode = RunMode::Optimize;
    c.distribution.type = "short_column_gaussian";
    c.distribution.mixture = parse_config_json(
        R"({"application":"short_column","distribution":{"type":"short_column_gaussian"}})")
                                 .distribution.mixture;
    c.z_values = {1.0};
    c.alphas = {0.1};
    c.methods = {"ldt1", "cvar"};
    c.params.saa_n = 60;
    c.params.mc_n = 50000;
    c.params.seed = 11;
    c.solver.max_inner = 2000;
    c.output_dir = tmp.str("opt1");
    RunOutput out1 = run_experiment(c);
    REQUIRE(out1.records.size() == 2);
    for (const auto& r : out1.records) {
        CHECK(r.status == "optimal");
        CHECK(r.mc_prob <= c.alphas[0] + 3.0 * r.mc_se);
    }

    c.output_dir = tmp.str("opt2");
    RunOutput out2 = run_experiment(c);
    CHECK(slurp(tmp.str("opt1") + "/records.csv") == slurp(tmp.str("opt2") + "/records.csv"));
}

TEST_CASE("sweep mode emits the three figure files") {
    TempDir tmp;
    ExperimentConfig c;
    c.application = Application::ShortColumn;
    c.mode = RunMode::Sweep;
    c.distribution.type = "short_column_gaussian";
    c.distribution.mixture = parse_config_json(
        R"({"application":"short_column","distribution":{"type":"short_column_gaussian"}})")
                                 .distribution.mixture;
    c.z_values = {1.0};
    c.alphas = {0.1, 0.01};
    c.methods = {"ldt1"};
    c.params.mc_n = 20000;
    c.params.seed = 3;
    c.solver.max_inner = 2000;
    c.output_dir = tmp.str("sweep");
    RunOutput out = run_experiment(c);
    REQUIRE(out.records.size() == 2);
    CHECK(out.records[1].objective >= out.records[0].objective - 1e-9);
    for (const char* f :
         {"fig_alpha_objective.csv", "fig_alpha_gap.csv", "fig_alpha_time.csv"})
        CHECK(std::filesystem::exists(c.output_dir + "/" + f));
}

TEST_CASE("selftest passes on a clean build") { CHECK(run_selftest(true) == 0); }
