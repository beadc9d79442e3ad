#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "cytoforge/error.hpp"

namespace cytoforge {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Sub-stream seed for output index i of a seeded job.
inline uint64_t sub_seed(uint64_t seed, uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + 1));
}

// mt19937_64 with hand-rolled draw primitives. std::*_distribution is
// implementation-defined; byte-identical artifacts require pinned sampling.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Unbiased uniform integer in [0, n) by rejection.
    uint64_t below(uint64_t n) {
        check(n > 0, Error::Kind::InvalidArgument, "Rng::below: n must be positive");
        if (n == 1) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    // Uniform double in [0, 1) with 53-bit resolution.
    double real01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform double in [lo, hi].
    double uniform(double lo, double hi) { return lo + (hi - lo) * real01(); }

    // Standard normal via Box-Muller (pinned; one cached spare).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = real01();
        } while (u1 <= 0.0);
        u2 = real01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace cytoforge
