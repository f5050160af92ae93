#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ldtcc/formulations.hpp"
#include "ldtcc/prices.hpp"

namespace ldtcc {

enum class Application { Portfolio, ShortColumn, Pde };
enum class RunMode { Estimate, Optimize, Sweep };

struct DistributionConfig {
    // "gaussian" | "mixture" | "fit_csv" | a named preset
    // ("short_column_gaussian", "short_column_mixture", "pde_gaussian")
    std::string type;
    MixtureSpec mixture;   // gaussian / mixture payload
    std::string csv_path;  // fit_csv
    int components = 2;    // fit_csv
};

struct MethodParams {
    long long mc_n = 1000000;              // feasibility checks / `mc` method
    std::vector<long long> estimate_mc;    // MC columns of estimate mode
    long long mc_true_n = 1000000;         // reference column of estimate mode
    int saa_n = 100;
    double nu = 200.0;
    double tau = 200.0;
    std::uint64_t seed = 1;
};

struct ExperimentConfig {
    Application application = Application::ShortColumn;
    RunMode mode = RunMode::Optimize;
    DistributionConfig distribution;
    std::vector<double> z_values = {1.0};
    std::vector<double> alphas = {1e-2};
    std::vector<std::string> methods = {"ldt1"};
    MethodParams params;
    SolverOptions solver;
    std::string output_dir = "out";
    Vector u_fixed;         // estimate mode decision; empty -> app default
    double horizon = 10.0;  // portfolio T
    int mesh = 15;          // pde grid
};

ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

/// One run cell. Wall time is reported in summary.txt and the timing
/// figure only; records.csv stays byte-identical across reruns.
struct RunRecord {
    std::string method;
    double alpha = std::numeric_limits<double>::quiet_NaN();
    double z = std::numeric_limits<double>::quiet_NaN();
    double objective = std::numeric_limits<double>::quiet_NaN();
    double prob_estimate = std::numeric_limits<double>::quiet_NaN();
    double mc_prob = std::numeric_limits<double>::quiet_NaN();
    double mc_se = std::numeric_limits<double>::quiet_NaN();
    std::string status;
    double correction = std::numeric_limits<double>::quiet_NaN();
    int curvature_ok = -1;  // -1 unknown
    double kkt_residual = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;

    static const char* csv_header();
    std::string csv_row() const;
    static RunRecord from_csv_row(const std::string& line);
};

bool record_equal(const RunRecord& a, const RunRecord& b);

/// Model + chance-spec assembly for an application, shared by every mode.
struct Assembled {
    std::unique_ptr<LimitStateModel> model;
    ChanceSpec spec;           // model pointer wired to `model`
    bool negate_threshold = false;  // portfolio convention: event F >= -z
    Vector default_u;
    MixtureSpec dist;
};

Assembled assemble(const ExperimentConfig& config);

struct RunOutput {
    std::vector<RunRecord> records;
    std::vector<std::string> files;  // paths written, records.csv first
};

/// Executes the configured mode over the alpha/z grid and writes
/// records.csv, summary.txt and per-figure CSVs into output_dir.
RunOutput run_experiment(const ExperimentConfig& config);

/// Derivative checks for the three applications plus the solver QP suite;
/// returns the number of failures.
int run_selftest(bool quiet);

}  // namespace ldtcc
