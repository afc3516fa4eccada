#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace tracekit {

// 64-bit FNV-1a. Used for stable fact ids and for deriving per-fact,
// per-sample noise seeds.
constexpr uint64_t fnv1a64(std::string_view data) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : data) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// SplitMix64. Tiny and bit-identical on every platform, unlike the
// standard library distributions.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

private:
    uint64_t state_;
};

// Standard normal draws via Box-Muller, two uniforms per draw, no cached
// spare. Keeps the draw count a pure function of the call index.
class GaussianRng {
public:
    explicit GaussianRng(uint64_t seed) : rng_(seed) {}

    double next() {
        // u1 in (0,1] so the log is finite.
        double u1 = 1.0 - rng_.next_double();
        double u2 = rng_.next_double();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    SplitMix64 rng_;
};

// Mixes a base seed, a fact identifier, and a sample index into one
// stream seed. Schedule-independent: the noise a sample sees depends only
// on these three values.
inline uint64_t derive_seed(uint64_t base, std::string_view fact_id, uint64_t sample_index) {
    uint64_t h = fnv1a64(fact_id);
    uint64_t z = base ^ (h + 0x9e3779b97f4a7c15ULL + (sample_index << 1));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace tracekit
