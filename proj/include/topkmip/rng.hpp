#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace topkmip {

/**
 * SplitMix64 (Steele, Lea & Flood 2014). Output i is
 * mix(seed + (i + 1) * 0x9E3779B97F4A7C15) with the standard finalizer, so a
 * stream is fully determined by its seed on every platform.
 *
 * Doubles use the top 53 bits; normals use Box-Muller on two consecutive
 * uniforms (the sine branch is discarded so each normal costs two draws).
 */
class splitmix64 {
  public:
    explicit splitmix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    }

    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

  private:
    std::uint64_t state_;
};

} // namespace topkmip
