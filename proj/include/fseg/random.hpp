#pragma once

// Seeded RNG. All randomness in the project flows from one root seed;
// submodule streams are derived by hashing a name into the seed, so adding a
// consumer never perturbs the streams of the others.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace fseg {

inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed), seed_(seed) {}

    uint64_t seed() const { return seed_; }

    Rng split(const std::string& name) const { return Rng(seed_ ^ fnv1a(name)); }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0,1).
    double uniform() { return (engine_() >> 11) * (1.0 / 9007199254740992.0); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return engine_() % n; }

    // Standard normal via Box-Muller (stable across standard libraries).
    double normal() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::mt19937_64 engine_;
    uint64_t seed_;
};

}  // namespace fseg
