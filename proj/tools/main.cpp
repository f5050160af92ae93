#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "ldtcc/experiment.hpp"
#include "ldtcc/prices.hpp"
#include "ldtcc/rng.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    bool quiet = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
    auto* c = cmd->add_option("--config", flags.config_path, "experiment configuration file");
    if (config_required) c->required();
    cmd->add_option("--seed", flags.seed, "override the top-level seed");
    cmd->add_option("--out", flags.out_dir, "override the output directory");
    cmd->add_flag("--quiet", flags.quiet, "suppress progress output");
}

ldtcc::ExperimentConfig load_with_overrides(const CommonFlags& flags, ldtcc::RunMode mode) {
    ldtcc::ExperimentConfig config = ldtcc::load_config(flags.config_path);
    config.mode = mode;
    if (flags.seed >= 0) config.params.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.out_dir.empty()) config.output_dir = flags.out_dir;
    return config;
}

int execute(const ldtcc::ExperimentConfig& config, bool quiet) {
    ldtcc::RunOutput out = ldtcc::run_experiment(config);
    bool any_failure = false;
    for (const auto& r : out.records)
        if (r.status.rfind("error", 0) == 0 || r.status == "numeric-failure")
            any_failure = true;
    if (!quiet) {
        for (const auto& f : out.files) std::cout << "wrote " << f << "\n";
        std::cout << out.records.size() << " run records\n";
    }
    return any_failure ? kExitNumeric : kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sampling-free rare-event probability estimation and chance-constrained "
                 "optimization under Gaussian and Gaussian-mixture uncertainty"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    CommonFlags est_flags, opt_flags, sweep_flags, fit_flags, self_flags, gen_flags;

    CLI::App* est = app.add_subcommand("estimate", "tail probabilities for a fixed design");
    add_common(est, est_flags, true);
    CLI::App* opt = app.add_subcommand("optimize", "single chance-constrained solve");
    add_common(opt, opt_flags, true);
    CLI::App* swp = app.add_subcommand("sweep", "alpha homotopy with warm starts");
    add_common(swp, sweep_flags, true);
    CLI::App* fit = app.add_subcommand("fit", "fit a Gaussian mixture to a price CSV");
    add_common(fit, fit_flags, true);
    CLI::App* self = app.add_subcommand("selftest", "derivative checks and solver suite");
    add_common(self, self_flags, false);
    CLI::App* gen = app.add_subcommand("gen", "write a synthetic GBM price CSV");
    add_common(gen, gen_flags, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (est->parsed())
            return execute(load_with_overrides(est_flags, ldtcc::RunMode::Estimate),
                           est_flags.quiet);
        if (opt->parsed())
            return execute(load_with_overrides(opt_flags, ldtcc::RunMode::Optimize),
                           opt_flags.quiet);
        if (swp->parsed())
            return execute(load_with_overrides(sweep_flags, ldtcc::RunMode::Sweep),
                           sweep_flags.quiet);
        if (fit->parsed()) {
            ldtcc::ExperimentConfig config = ldtcc::load_config(fit_flags.config_path);
            if (fit_flags.seed >= 0)
                config.params.seed = static_cast<std::uint64_t>(fit_flags.seed);
            if (!fit_flags.out_dir.empty()) config.output_dir = fit_flags.out_dir;
            if (config.distribution.type != "fit_csv")
                throw std::invalid_argument(
                    "fit: the configuration must use distribution type fit_csv");
            ldtcc::PriceIngest ingest = ldtcc::ingest_prices(config.distribution.csv_path);
            Eigen::MatrixXd centered =
                ingest.returns.rowwise() - ingest.drift.transpose();
            ldtcc::MixtureSpec mix =
                ldtcc::fit_em(centered, config.distribution.components,
                              ldtcc::Rng::derive(config.params.seed, 3));
            std::filesystem::create_directories(config.output_dir);
            std::string path = config.output_dir + "/mixture.txt";
            ldtcc::save_mixture(path, mix);
            if (!fit_flags.quiet) std::cout << "wrote " << path << "\n";
            return kExitOk;
        }
        if (self->parsed()) {
            int failures = ldtcc::run_selftest(self_flags.quiet);
            return failures == 0 ? kExitOk : kExitNumeric;
        }
        if (gen->parsed()) {
            // generator block: {"generator": {"symbols": n, "days": N,
            //   "theta": [...], "sigma": [...], "path": "prices.csv"}}
            std::ifstream in(gen_flags.config_path);
            if (!in)
                throw std::invalid_argument("gen: cannot open " + gen_flags.config_path);
            std::stringstream ss;
            ss << in.rdbuf();
            nlohmann::json j = nlohmann::json::parse(ss.str());
            if (!j.contains("generator"))
                throw std::invalid_argument("gen: configuration needs a generator block");
            const auto& g = j["generator"];
            int days = g.value("days", 1000);
            std::uint64_t seed = g.value("seed", 1);
            if (gen_flags.seed >= 0) seed = static_cast<std::uint64_t>(gen_flags.seed);
            std::string path = g.value("path", std::string("prices.csv"));
            Eigen::VectorXd theta(g.at("theta").size()), sigma(g.at("sigma").size());
            for (std::size_t i = 0; i < g["theta"].size(); ++i)
                theta[i] = g["theta"][i].get<double>();
            for (std::size_t i = 0; i < g["sigma"].size(); ++i)
                sigma[i] = g["sigma"][i].get<double>();
            Eigen::MatrixXd corr;
            if (g.contains("correlation")) {
                corr.resize(theta.size(), theta.size());
                for (int r = 0; r < corr.rows(); ++r)
                    for (int c = 0; c < corr.cols(); ++c)
                        corr(r, c) = g["correlation"][r][c].get<double>();
            }
            ldtcc::write_gbm_prices(path, theta, sigma, corr, days, seed);
            if (!gen_flags.quiet) std::cout << "wrote " << path << "\n";
            return kExitOk;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ldtcc::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitConfig;
}
