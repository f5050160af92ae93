#include "ldtcc/mc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "ldtcc/rng.hpp"

namespace ldtcc {

namespace {

constexpr long long kChunk = 8192;

struct ComponentSampler {
    std::vector<CholeskyCache> chols;
    std::vector<double> cumw;
    const MixtureSpec* dist;

    explicit ComponentSampler(const MixtureSpec& d) : dist(&d) {
        double acc = 0.0;
        for (const auto& c : d.components) {
            chols.emplace_back(c.gaussian);
            acc += c.weight;
            cumw.push_back(acc);
        }
        cumw.back() = 1.0;
    }

    Vector draw(Rng& rng) const {
        int idx = 0;
        if (dist->size() > 1) {
            double u01 = rng.uniform();
            idx = static_cast<int>(std::lower_bound(cumw.begin(), cumw.end(), u01) -
                                   cumw.begin());
        }
        Vector zvec = rng.normal_vector(dist->dim());
        return dist->components[idx].gaussian.mean + chols[idx].lower() * zvec;
    }
};

}  // namespace

McEstimate mc_probability(const MixtureSpec& dist, const LimitStateModel& model,
                          const Vector& u, double z, long long n, std::uint64_t seed) {
    require(n >= 1, "mc_probability: N must be >= 1");
    ComponentSampler sampler(dist);
    long long hits = 0, done = 0;
    for (long long chunk = 0; done < n; ++chunk) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(chunk)));
        long long take = std::min(kChunk, n - done);
        for (long long i = 0; i < take; ++i) {
            Vector xi = sampler.draw(rng);
            double f;
            try {
                f = model.value(u, xi);
            } catch (const std::exception& e) {
                std::ostringstream msg;
                msg << "mc_probability: model evaluation failed after " << done + i
                    << " samples (" << hits << " hits): " << e.what();
                throw NumericError(msg.str());
            }
            if (f >= z) ++hits;
        }
        done += take;
    }
    McEstimate est;
    est.n = n;
    est.seed = seed;
    est.hit_count = hits;
    est.p_hat = static_cast<double>(hits) / static_cast<double>(n);
    est.standard_error = std::sqrt(est.p_hat * (1.0 - est.p_hat) / static_cast<double>(n));
    return est;
}

double log_error(double estimate, const McEstimate& reference) {
    require(estimate > 0.0, "log_error: estimate must be positive");
    if (reference.p_hat <= 0.0) return kInf;
    return std::log10(estimate) - std::log10(reference.p_hat);
}

double var_quantile(const MixtureSpec& dist, const PortfolioModel& model, const Vector& u,
                    double alpha, long long n, std::uint64_t seed) {
    require(alpha > 0.0 && alpha < 1.0, "var_quantile: alpha must be in (0,1)");
    require(static_cast<double>(n) * alpha >= 100.0,
            "var_quantile: need N*alpha >= 100; increase N");
    ComponentSampler sampler(dist);
    std::vector<double> returns;
    returns.reserve(n);
    long long done = 0;
    for (long long chunk = 0; done < n; ++chunk) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(chunk)));
        long long take = std::min(kChunk, n - done);
        for (long long i = 0; i < take; ++i) {
            Vector xi = sampler.draw(rng);
            returns.push_back(model.stock_values(xi).dot(u));
        }
        done += take;
    }
    long long k = std::max<long long>(1, static_cast<long long>(std::ceil(alpha * n))) - 1;
    std::nth_element(returns.begin(), returns.begin() + k, returns.end());
    return returns[k];
}

}  // namespace ldtcc
