#pragma once

#include <cstdint>
#include <cmath>

namespace qrsdet {

/// Deterministic splittable RNG. One master seed derives independent
/// per-purpose streams via stream(), so adding a consumer never shifts the
/// draws of another. The generator is xoshiro-style splitmix64, fully
/// specified here rather than delegated to implementation-defined
/// std::distributions.
class Rng {
public:
    explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ULL) { state_ = mix(seed); }

    /// Derive an independent stream from this seed and a stream id.
    Rng stream(uint64_t stream_id) const {
        Rng r;
        r.state_ = mix(state_ ^ mix(stream_id + 0x632be59bd9b4e019ULL));
        return r;
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one value per call, no caching, so the
    /// draw sequence is position-independent).
    double normal() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t state_ = 0;
};

} // namespace qrsdet
