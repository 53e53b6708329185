#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace sal {

// Counter-based splittable RNG. Every stream is (key, counter); draws hash
// the pair with the SplitMix64 finalizer, and forking derives a child key
// without consuming state from the parent. All randomness in the project
// flows from one root seed through forks, so subsystems cannot perturb each
// other's streams.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(mix(0x9e3779b97f4a7c15ULL, seed)) {}

    Rng fork(uint64_t stream) const { return Rng(key_, mix(key_, stream ^ 0xa0761d6478bd642fULL)); }

    Rng fork(std::string_view label) const {
        uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
        for (unsigned char c : label) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return fork(h);
    }

    uint64_t next_u64() { return mix(key_, counter_++); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Unbiased via rejection.
    uint64_t next_below(uint64_t n) {
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n + 1) % n;
        uint64_t v = next_u64();
        while (v > limit) v = next_u64();
        return v % n;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    double normal() {
        // Box-Muller; two uniforms per draw, second branch discarded so the
        // stream position does not depend on call history.
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    Rng(uint64_t key, uint64_t derived) : key_(derived) { (void)key; }

    static uint64_t mix(uint64_t key, uint64_t counter) {
        uint64_t z = key + counter * 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace sal
