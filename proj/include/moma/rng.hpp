#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace moma {

// Deterministic RNG used everywhere randomness is needed. Wraps std::mt19937_64
// but converts bits to floats itself so streams do not depend on the standard
// library's distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection-sampled, unbiased.
    uint64_t uniform_index(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; one value per call, no cached state.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Normal(0, std) truncated to [-2*std, 2*std], the usual ViT init.
    double trunc_normal(double std_dev) {
        double z = normal();
        while (z < -2.0 || z > 2.0) z = normal();
        return z * std_dev;
    }

    // Derive an independent child stream from this seed and a tag list.
    // Pure function of its arguments: the parent stream is not consumed.
    static uint64_t derive(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
        uint64_t h = seed;
        for (uint64_t v : {a, b, c}) {
            h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
            h *= 0xbf58476d1ce4e5b9ULL;
            h ^= h >> 27;
        }
        return h;
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace moma
