#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace depthlaw {

// Counter-based generator: output i is splitmix64_mix(key + GOLDEN * (i+1)).
// The algorithm is fixed for the life of the project; every stream is fully
// determined by its key, and substreams are derived by hashing labels into
// the key. No global state, no std::random_device, no libstdc++ distribution
// objects (their output is implementation-defined).
class Rng {
  public:
    explicit Rng(uint64_t seed) : key_(mix(seed ^ kGolden)) {}

    // Derives an independent stream keyed by up to three labels.
    Rng fork(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
        Rng r(*this);
        r.key_ = mix(mix(mix(key_ ^ kGolden * (a + 1)) ^ kGolden * (b + 1)) ^
                     kGolden * (c + 1));
        r.ctr_ = 0;
        return r;
    }
    Rng fork(std::string_view label, uint64_t b = 0, uint64_t c = 0) const {
        return fork(fnv1a(label), b, c);
    }

    uint64_t next_u64() { return mix(key_ + kGolden * ++ctr_); }

    // Uniform on [0,1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on (0,1]; safe as a log() argument.
    double uniform_pos() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

    // Box-Muller, one variate per two uniforms.
    double normal() {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        // Rejection-free modulo is fine here: n is tiny relative to 2^64 in
        // every call site, so the bias is < 2^-50.
        return next_u64() % n;
    }

    static uint64_t fnv1a(std::string_view s) {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (char ch : s) {
            h ^= uint64_t(uint8_t(ch));
            h *= 0x100000001b3ULL;
        }
        return h;
    }

  private:
    static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
    static constexpr double kPi = 3.14159265358979323846;

    static uint64_t mix(uint64_t z) {
        z += kGolden;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    uint64_t key_;
    uint64_t ctr_ = 0;
};

}  // namespace depthlaw
