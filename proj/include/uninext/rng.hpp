#pragma once

#include <cmath>
#include <cstdint>

#include "uninext/common.hpp"

namespace uninext {

// Deterministic counter-based generator. Each draw hashes (seed, stream,
// counter) with the splitmix64 finalizer, so streams can be split per
// parameter without coupling draw order to construction order.
class Rng {
public:
    explicit Rng(uint64_t seed, uint64_t stream = 0) : seed_(seed), stream_(stream) {}

    // Independent substream; children of distinct ids never collide because
    // the stream id is folded through the same avalanche hash as the counter.
    Rng split(uint64_t id) const { return Rng(seed_, mix_(stream_ ^ (0x9e3779b97f4a7c15ULL + id))); }

    uint64_t next_u64() { return mix_(seed_ ^ mix_(stream_ ^ counter_++)); }

    // Uniform in [0, 1) with 53 random bits.
    double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    // Standard normal via Box-Muller; caches the second variate.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double next_normal(double mean, double sigma) { return mean + sigma * next_normal(); }

    // Rejection-sampled normal clipped to [mean - 2 sigma, mean + 2 sigma].
    double next_trunc_normal(double mean, double sigma) {
        for (;;) {
            double z = next_normal();
            if (z >= -2.0 && z <= 2.0) return mean + sigma * z;
        }
    }

    int64_t next_index(int64_t n) {
        if (n <= 0) throw UsageError("Rng::next_index: n must be positive");
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

private:
    static uint64_t mix_(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t stream_;
    uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace uninext
