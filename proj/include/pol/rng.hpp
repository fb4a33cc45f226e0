#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace pol::rng {

// SplitMix64 finalizer. Good avalanche, cheap, and stateless — the whole
// point here is that streams can be *derived* from (seed, step) so replay
// order never matters: verifying interval 7 before interval 3 draws the
// same noise either way, and the OpenMP and serial paths are bit-identical.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Stream {
  public:
    explicit Stream(std::uint64_t seed) : state_(seed) {}

    // Hash-combine up to three labels into an independent stream.
    static Stream derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        std::uint64_t h = mix64(seed ^ 0x5851f42d4c957f2dULL);
        h = mix64(h ^ a);
        h = mix64(h ^ b);
        return Stream(h);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Bounded integer via rejection-free modulo-bias-avoiding loop.
    std::uint64_t next_below(std::uint64_t bound) {
        // Lemire-style rejection; bound is tiny here (dataset sizes), so the
        // loop almost never retries.
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    // Standard normal via Box–Muller; caches the second deviate.
    double next_normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

  private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace pol::rng
