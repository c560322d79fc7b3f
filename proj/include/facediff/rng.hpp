#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace facediff {

inline constexpr double kPi = 3.14159265358979323846264338327950288;

// Splitmix64 stream. One u64 of state, trivially serializable, and good
// enough statistically for the Monte-Carlo tolerances used in this project.
struct Rng {
    uint64_t state = 0x853c49e6748fea9bULL;

    Rng() = default;
    explicit Rng(uint64_t seed) : state(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n), n > 0
    int64_t uniform_int(int64_t n) { return int64_t(next_u64() % uint64_t(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller, two uniforms per draw, no cached spare: keeps the whole
    // generator state a single u64 so checkpoints can carry it verbatim.
    double normal() {
        double u1;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Knuth's method, fine for the small rates used by the data generator.
    int poisson(double rate) {
        double l = std::exp(-rate), p = 1.0;
        int k = 0;
        do {
            ++k;
            p *= uniform();
        } while (p > l);
        return k - 1;
    }
};

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    Rng r(a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2)));
    r.next_u64();
    return r.next_u64();
}

// Named sub-stream derivation: each component (data/train/sample/...) draws
// from its own stream so runs stay independently reproducible under a single
// master seed.
inline Rng substream(uint64_t master_seed, std::string_view name) {
    return Rng(mix_seed(master_seed, fnv1a64(name)));
}

inline Rng substream(uint64_t master_seed, std::string_view name, uint64_t index) {
    return Rng(mix_seed(mix_seed(master_seed, fnv1a64(name)), index));
}

}  // namespace facediff
