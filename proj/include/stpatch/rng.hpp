#ifndef STPATCH_RNG_HPP
#define STPATCH_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace stpatch {

/// Engine used throughout; std::mt19937_64 output is fully specified by the
/// standard, so streams replay identically across builds.
using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

/**
 * Derive an independent stream seed from a global seed, a textual tag
 * (typically a slice id) and a draw index. The derivation does not depend on
 * processing order, so parallel workers reproduce the same streams.
 */
inline std::uint64_t derive_stream(std::uint64_t seed, std::string_view tag, std::uint64_t index) {
    std::uint64_t x = detail::splitmix64(seed ^ detail::fnv1a64(tag));
    return detail::splitmix64(x ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
}

/// Uniform integer on {0, ..., n-1} without modulo bias. The mapping is pinned
/// here because std::uniform_int_distribution is implementation-defined.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n; // 2^64 mod n
    for (;;) {
        std::uint64_t r = rng();
        if (r >= threshold) {
            return r % n;
        }
    }
}

/// Uniform double on [0, 1) with 53-bit resolution.
inline double uniform_real01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double on (0, 1]; safe as a logarithm argument.
inline double uniform_real_open0(Rng& rng) {
    return static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53;
}

} // namespace stpatch

#endif
