#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace yofo {

// Deterministic RNG. All distribution transforms are implemented here rather
// than via std::*_distribution, whose output is implementation-defined; the
// same seed must reproduce the same stream on every build.
class Rng {
   public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1); never returns 0 so log() stays finite.
    double uniform_open() {
        double u = uniform();
        return u > 0.0 ? u : 0x1.0p-53;
    }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : engine_() % n; }

    // Box-Muller with cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform_open();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Standard Gumbel(0,1) via inverse CDF.
    double gumbel() { return -std::log(-std::log(uniform_open())); }

    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

   private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stable sub-seed derivation so independent streams (init, shuffle, noise)
// never overlap and resumed runs can rebuild any stream from (seed, tags).
inline uint64_t derive_seed(uint64_t seed, uint64_t tag_a, uint64_t tag_b = 0) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag_a + 1) + 0xbf58476d1ce4e5b9ULL * (tag_b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace yofo
