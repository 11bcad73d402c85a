#ifndef STPATCH_MASK_HPP
#define STPATCH_MASK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

/**
 * @file mask.hpp
 * @brief Mask generation and application: uniform-ratio entry masking for
 * pretraining and contiguous S x S region masking for evaluation.
 *
 * The uniform mask holds exactly round(ratio*h*w*m) distinct entries, with
 * the round using ties-to-even. Masked entries are replaced by a fill value
 * (default 0) and reported through a separate boolean tensor; entries at
 * unoccupied grid cells may be sampled but are excluded from losses unless
 * the caller opts in.
 */

namespace stpatch {

/// Entry count of a uniform-ratio mask: round(ratio*h*w*m), ties to even.
inline std::size_t uniform_mask_cardinality(std::uint32_t h, std::uint32_t w, std::uint32_t m,
                                            double ratio) {
    const double cells = static_cast<double>(h) * static_cast<double>(w) * static_cast<double>(m);
    return static_cast<std::size_t>(std::nearbyint(ratio * cells));
}

/**
 * Draw a uniform-without-replacement mask over the h x w x m entry lattice.
 * Throws "empty mask" when the rounded cardinality is zero.
 */
inline MaskSpec sample_uniform_mask(std::uint32_t h, std::uint32_t w, std::uint32_t m,
                                    double ratio, Rng& rng) {
    if (!(ratio > 0.0) || !(ratio < 1.0)) {
        throw std::invalid_argument("mask ratio must lie in (0, 1)");
    }
    const std::size_t total = static_cast<std::size_t>(h) * w * m;
    const std::size_t n = uniform_mask_cardinality(h, w, m, ratio);
    if (n == 0) {
        throw std::invalid_argument("empty mask");
    }
    std::vector<std::uint32_t> pool(total);
    std::iota(pool.begin(), pool.end(), 0u);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, total - i));
        std::swap(pool[i], pool[j]);
    }
    MaskSpec spec;
    spec.mode = MaskMode::uniform_ratio;
    spec.ratio = ratio;
    spec.entries.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t flat = pool[i];
        spec.entries.push_back({flat / (w * m), (flat / m) % w, flat % m});
    }
    std::sort(spec.entries.begin(), spec.entries.end());
    return spec;
}

/**
 * Mask a uniformly placed S x S spatial block across all m channels, the
 * region-reconstruction protocol. |entries| = S^2 * m.
 */
inline MaskSpec sample_region_mask(std::uint32_t h, std::uint32_t w, std::uint32_t m,
                                   std::uint32_t side, Rng& rng) {
    if (side == 0 || side > std::min(h, w)) {
        throw std::invalid_argument("region side " + std::to_string(side) +
                                    " exceeds patch extent " + std::to_string(std::min(h, w)));
    }
    if (m == 0) {
        throw std::invalid_argument("region mask needs at least one channel");
    }
    MaskSpec spec;
    spec.mode = MaskMode::contiguous_region;
    spec.region_side = side;
    spec.region_u = static_cast<std::uint32_t>(uniform_below(rng, h - side + 1));
    spec.region_v = static_cast<std::uint32_t>(uniform_below(rng, w - side + 1));
    spec.entries.reserve(static_cast<std::size_t>(side) * side * m);
    for (std::uint32_t u = spec.region_u; u < spec.region_u + side; ++u) {
        for (std::uint32_t v = spec.region_v; v < spec.region_v + side; ++v) {
            for (std::uint32_t k = 0; k < m; ++k) {
                spec.entries.push_back({u, v, k});
            }
        }
    }
    return spec;
}

/// Result of applying a mask: the filled tensor plus the boolean mask tensor.
struct MaskedPatch {
    std::vector<float> values;        // h*w*m with masked entries set to fill
    std::vector<std::uint8_t> masked; // h*w*m, 1 exactly on spec entries
};

/**
 * Apply a mask to a sample, replacing masked entries with `fill`. The input
 * sample is left untouched.
 */
inline MaskedPatch apply_mask(const PatchSample& sample, const MaskSpec& spec, float fill = 0.0f) {
    MaskedPatch out;
    out.values = sample.values;
    out.masked.assign(sample.values.size(), 0);
    for (const auto& e : spec.entries) {
        if (e.u >= sample.h || e.v >= sample.w || e.k >= sample.m) {
            throw std::invalid_argument("mask entry out of bounds for sample shape");
        }
        const std::size_t idx = sample.value_index(e.u, e.v, e.k);
        out.values[idx] = fill;
        out.masked[idx] = 1;
    }
    return out;
}

} // namespace stpatch

#endif
