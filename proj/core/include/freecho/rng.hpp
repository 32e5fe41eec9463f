#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace freecho {

// Deterministic random source. Normal draws go through an explicit
// Box-Muller transform instead of std::normal_distribution so that the
// stream does not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    // uniform double in [0, 1)
    double uniform() {
        // 53 random bits -> double mantissa
        return (engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller, one spare cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2    = uniform();
        double r     = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_       = r * std::sin(theta);
        has_spare_   = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // integer in [0, n)
    uint64_t below(uint64_t n) {
        // multiply-shift; adequate for dataset indexing
        return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    uint64_t raw() { return engine_(); }

    // Derived stream: mixes the parent seed with a stream id so that
    // per-step / per-sample streams can be reconstructed independently.
    static uint64_t mix(uint64_t seed, uint64_t stream) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static Rng fork(uint64_t seed, uint64_t stream) { return Rng(mix(seed, stream)); }

private:
    std::mt19937_64 engine_;
    double spare_     = 0.0;
    bool has_spare_   = false;
};

}  // namespace freecho
