#pragma once

#include <cstdint>
#include <random>

#include "ldtcc/types.hpp"

namespace ldtcc {

double normal_cdf_inv(double p);

/// Deterministic random stream. Normal variates are produced by inverse-CDF
/// transform of mt19937_64 uniforms, so sequences are reproducible across
/// platforms and independent of the C++ library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform draw in the open interval (0,1).
    double uniform() {
        // 53-bit mantissa; shift by half an ulp so 0 is never produced.
        return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1p-53;
    }

    double normal() { return normal_cdf_inv(uniform()); }

    Vector normal_vector(int n) {
        Vector v(n);
        for (int i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Stream splitting: derive an independent seed for a substream
    /// (sample chunk, multistart index) from a base seed.
    static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace ldtcc
