#pragma once

#include <string>
#include <vector>

#include "ldtcc/distributions.hpp"

namespace ldtcc {

class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Daily compounded rates extracted from a price history. The mean rate
/// estimates theta_i - sigma_i^2/2 and the rate covariance is the law of
/// the per-day noise xi.
struct PriceIngest {
    std::vector<std::string> symbols;
    Matrix returns;     // (rows-1) x n log price ratios
    Vector drift;       // mean rate = theta - sigma^2/2
    Matrix covariance;  // rate covariance
    Vector sigma;       // sqrt(diag covariance)
    Vector theta;       // drift + sigma^2/2
};

/// Reads `date,SYM1,SYM2,...` price CSV (>= 2 data rows, positive prices).
/// Malformed input raises ParseError naming the offending row.
PriceIngest ingest_prices(const std::string& csv_path);

/// Synthetic geometric-Brownian price history with known parameters,
/// deterministic per seed. correlation may be empty for independence.
void write_gbm_prices(const std::string& csv_path, const Vector& theta, const Vector& sigma,
                      const Matrix& correlation, int days, std::uint64_t seed);

/// Plain-text mixture parameter file: `n M`, then per component the weight,
/// the mean row and n covariance rows. Values round-trip exactly.
void save_mixture(const std::string& path, const MixtureSpec& dist);
MixtureSpec load_mixture(const std::string& path);

}  // namespace ldtcc
