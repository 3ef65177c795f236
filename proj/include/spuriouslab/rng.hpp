#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace splab {

// Deterministic counter-style generator built on the splitmix64 update.
// std::mt19937 + std::*_distribution are avoided on purpose: distribution
// implementations vary across standard libraries, and reproducibility of
// every sampled byte is a hard requirement here.
//
// Independent substreams are derived by hashing (seed, tag, indices), so a
// per-epoch or per-batch stream never depends on how many draws an earlier
// phase consumed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform element of {+1, -1}.
    int pick_sign() { return (next_u64() >> 63) ? -1 : +1; }

    // Uniform double in [lo, hi).
    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased uniform integer in [0, bound) via masked rejection.
    std::uint64_t uniform_int(std::uint64_t bound) {
        if (bound <= 1) return 0;
        std::uint64_t mask = ~0ULL >> __builtin_clzll((bound - 1) | 1);
        for (;;) {
            std::uint64_t v = next_u64() & mask;
            if (v < bound) return v;
        }
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    std::uint64_t state_;
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace detail

// Derives a substream from a base seed, a purpose tag, and optional indices
// (epoch number, batch number, probe index...). Streams with distinct
// (tag, indices) are statistically independent.
inline Rng derive_rng(std::uint64_t seed, std::string_view tag,
                      std::initializer_list<std::uint64_t> indices = {}) {
    std::uint64_t h = detail::mix64(seed ^ 0x8f3a1c92d5b74e61ULL);
    for (char ch : tag)
        h = detail::mix64(h ^ (static_cast<std::uint64_t>(static_cast<unsigned char>(ch)) + 0x100ULL));
    for (std::uint64_t idx : indices)
        h = detail::mix64(h ^ (idx + 0x9e3779b97f4a7c15ULL));
    return Rng(h);
}

}  // namespace splab
