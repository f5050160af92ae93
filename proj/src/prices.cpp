#include "ldtcc/prices.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ldtcc/rng.hpp"

namespace ldtcc {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

PriceIngest ingest_prices(const std::string& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw ParseError("ingest_prices: cannot open " + csv_path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("ingest_prices: empty file " + csv_path);
    std::vector<std::string> header = split_csv(line);
    if (header.size() < 2 || header[0] != "date")
        throw ParseError("ingest_prices: header must be date,SYM1,... in " + csv_path);
    const int n = static_cast<int>(header.size()) - 1;

    PriceIngest out;
    out.symbols.assign(header.begin() + 1, header.end());
    std::vector<Vector> prices;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        std::vector<std::string> cells = split_csv(line);
        if (static_cast<int>(cells.size()) != n + 1) {
            std::ostringstream msg;
            msg << "ingest_prices: row " << row << " has " << cells.size()
                << " cells, expected " << n + 1;
            throw ParseError(msg.str());
        }
        Vector p(n);
        for (int i = 0; i < n; ++i) {
            try {
                std::size_t used = 0;
                p[i] = std::stod(cells[i + 1], &used);
                if (used != cells[i + 1].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                std::ostringstream msg;
                msg << "ingest_prices: row " << row << " column " << header[i + 1]
                    << " is not a number";
                throw ParseError(msg.str());
            }
            if (!(p[i] > 0.0)) {
                std::ostringstream msg;
                msg << "ingest_prices: row " << row << " column " << header[i + 1]
                    << " must be a positive price";
                throw ParseError(msg.str());
            }
        }
        prices.push_back(std::move(p));
    }
    if (prices.size() < 2) throw ParseError("ingest_prices: need at least 2 data rows");

    const long long m = static_cast<long long>(prices.size()) - 1;
    out.returns.resize(m, n);
    for (long long t = 0; t < m; ++t)
        for (int i = 0; i < n; ++i)
            out.returns(t, i) = std::log(prices[t + 1][i] / prices[t][i]);
    out.drift = out.returns.colwise().mean();
    Matrix centered = out.returns.rowwise() - out.drift.transpose();
    out.covariance = (centered.transpose() * centered) / static_cast<double>(m);
    out.sigma = out.covariance.diagonal().cwiseSqrt();
    out.theta = out.drift + 0.5 * out.sigma.cwiseProduct(out.sigma);
    return out;
}

void write_gbm_prices(const std::string& csv_path, const Vector& theta, const Vector& sigma,
                      const Matrix& correlation, int days, std::uint64_t seed) {
    require(theta.size() == sigma.size(), "write_gbm_prices: theta/sigma size mismatch");
    require(days >= 2, "write_gbm_prices: need at least 2 days");
    const int n = static_cast<int>(theta.size());
    Matrix corr = correlation.size() > 0 ? correlation : Matrix::Identity(n, n);
    require(corr.rows() == n && corr.cols() == n, "write_gbm_prices: correlation shape");
    Matrix cov = sigma.asDiagonal() * corr * sigma.asDiagonal();
    CholeskyCache chol(GaussianSpec{Vector::Zero(n), cov});

    std::ofstream outf(csv_path);
    if (!outf) throw ParseError("write_gbm_prices: cannot write " + csv_path);
    outf << "date";
    for (int i = 0; i < n; ++i) outf << ",S" << i + 1;
    outf << "\n";

    Rng rng(seed);
    Vector price = Vector::Constant(n, 100.0);
    Vector drift = theta - 0.5 * sigma.cwiseProduct(sigma);
    for (int t = 0; t < days; ++t) {
        outf << t + 1;
        for (int i = 0; i < n; ++i) outf << "," << fmt(price[i]);
        outf << "\n";
        Vector rate = drift + chol.lower() * rng.normal_vector(n);
        price = price.cwiseProduct(rate.array().exp().matrix());
    }
}

void save_mixture(const std::string& path, const MixtureSpec& dist) {
    dist.validate();
    std::ofstream out(path);
    if (!out) throw ParseError("save_mixture: cannot write " + path);
    const int n = dist.dim();
    out << n << " " << dist.size() << "\n";
    for (const auto& c : dist.components) {
        out << fmt(c.weight) << "\n";
        for (int i = 0; i < n; ++i) out << (i ? " " : "") << fmt(c.gaussian.mean[i]);
        out << "\n";
        for (int r = 0; r < n; ++r) {
            for (int i = 0; i < n; ++i) out << (i ? " " : "") << fmt(c.gaussian.cov(r, i));
            out << "\n";
        }
    }
}

MixtureSpec load_mixture(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("load_mixture: cannot open " + path);
    int n = 0, m = 0;
    if (!(in >> n >> m) || n < 1 || m < 1)
        throw ParseError("load_mixture: malformed header in " + path);
    MixtureSpec dist;
    for (int k = 0; k < m; ++k) {
        MixtureComponent comp;
        if (!(in >> comp.weight)) throw ParseError("load_mixture: missing weight");
        comp.gaussian.mean.resize(n);
        for (int i = 0; i < n; ++i)
            if (!(in >> comp.gaussian.mean[i]))
                throw ParseError("load_mixture: malformed mean row");
        comp.gaussian.cov.resize(n, n);
        for (int r = 0; r < n; ++r)
            for (int i = 0; i < n; ++i)
                if (!(in >> comp.gaussian.cov(r, i)))
                    throw ParseError("load_mixture: malformed covariance row");
        dist.components.push_back(std::move(comp));
    }
    dist.validate();
    return dist;
}

}  // namespace ldtcc
