#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace vesselseg {

/// Deterministic random stream. Wraps std::mt19937_64 (fully specified by the
/// standard) and maps raw bits to values by hand, since the standard library
/// distributions are implementation-defined and would break cross-toolchain
/// reproducibility of seeded outputs.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    /// Independent substream, stable under the (stream, index) pair.
    static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t h = seed;
        for (uint64_t v : {a, b, c}) {
            h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
            h *= 0xff51afd7ed558ccdULL;
            h ^= h >> 33;
        }
        return Rng(h);
    }

    uint64_t bits() { return eng_(); }

    /// Uniform in [0,1).
    double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

    /// Uniform in [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0,n).
    uint64_t uniform_index(uint64_t n) {
        // modulo bias is negligible for n << 2^64 but reject anyway
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = bits();
        while (v >= limit) v = bits();
        return v % n;
    }

    bool coin_flip() { return (bits() & 1u) != 0; }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace vesselseg
