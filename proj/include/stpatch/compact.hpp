#ifndef STPATCH_COMPACT_HPP
#define STPATCH_COMPACT_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "core.hpp"

/**
 * @file compact.hpp
 * @brief Coordinate normalization: rank-based compaction of observed spots
 * onto a tight lattice, min-max coordinate scaling, and rasterization into a
 * dense CompactGrid.
 *
 * Compaction maps each raw coordinate to its 0-based rank among the sorted
 * unique per-axis values. Exact equality defines coordinate uniqueness; no
 * epsilon bucketing is applied. Unobserved lattice cells stay zero-filled and
 * unoccupied — nothing is imputed.
 */

namespace stpatch {

/// Sorted unique raw coordinate levels of one slice, with rank lookup.
struct CoordinateRanks {
    std::vector<double> xs;
    std::vector<double> ys;

    std::uint32_t width() const { return static_cast<std::uint32_t>(xs.size()); }
    std::uint32_t height() const { return static_cast<std::uint32_t>(ys.size()); }

    /// Rank pair (c_x, c_y) for a coordinate that occurs in the slice.
    std::pair<std::uint32_t, std::uint32_t> rank_of(double x, double y) const {
        auto ix = std::lower_bound(xs.begin(), xs.end(), x);
        auto iy = std::lower_bound(ys.begin(), ys.end(), y);
        if (ix == xs.end() || *ix != x || iy == ys.end() || *iy != y) {
            throw std::runtime_error("coordinate not present in compaction");
        }
        return {static_cast<std::uint32_t>(ix - xs.begin()),
                static_cast<std::uint32_t>(iy - ys.begin())};
    }
};

/**
 * Rank-compact the observed coordinates of a slice. Ordering is preserved:
 * x < x' implies c_x <= c_x' with equality exactly when x = x'.
 * Throws on an empty slice or non-finite coordinates.
 */
inline CoordinateRanks compact_coordinates(const RawSlice& slice) {
    if (slice.spots.empty()) {
        throw std::invalid_argument("slice has no spots");
    }
    CoordinateRanks ranks;
    ranks.xs.reserve(slice.spots.size());
    ranks.ys.reserve(slice.spots.size());
    for (const auto& spot : slice.spots) {
        if (!std::isfinite(spot.x) || !std::isfinite(spot.y)) {
            throw std::runtime_error("non-finite coordinate in slice '" + slice.id + "'");
        }
        ranks.xs.push_back(spot.x);
        ranks.ys.push_back(spot.y);
    }
    std::sort(ranks.xs.begin(), ranks.xs.end());
    ranks.xs.erase(std::unique(ranks.xs.begin(), ranks.xs.end()), ranks.xs.end());
    std::sort(ranks.ys.begin(), ranks.ys.end());
    ranks.ys.erase(std::unique(ranks.ys.begin(), ranks.ys.end()), ranks.ys.end());
    return ranks;
}

/**
 * Min-max scale each coordinate axis onto [lo, hi]. A degenerate axis whose
 * values are all equal maps to the midpoint (lo+hi)/2. The scaled positions
 * are metadata only; they do not feed rank compaction.
 */
inline std::vector<std::pair<double, double>>
normalize_coords_minmax(const RawSlice& slice, double lo, double hi) {
    if (!(hi > lo)) {
        throw std::invalid_argument("min-max range requires hi > lo");
    }
    if (slice.spots.empty()) {
        throw std::invalid_argument("slice has no spots");
    }
    double min_x = slice.spots.front().x, max_x = min_x;
    double min_y = slice.spots.front().y, max_y = min_y;
    for (const auto& spot : slice.spots) {
        if (!std::isfinite(spot.x) || !std::isfinite(spot.y)) {
            throw std::runtime_error("non-finite coordinate in slice '" + slice.id + "'");
        }
        min_x = std::min(min_x, spot.x);
        max_x = std::max(max_x, spot.x);
        min_y = std::min(min_y, spot.y);
        max_y = std::max(max_y, spot.y);
    }
    const double mid = 0.5 * (lo + hi);
    auto scale = [&](double value, double min_v, double max_v) {
        if (max_v == min_v) {
            return mid;
        }
        return lo + (value - min_v) / (max_v - min_v) * (hi - lo);
    };
    std::vector<std::pair<double, double>> out;
    out.reserve(slice.spots.size());
    for (const auto& spot : slice.spots) {
        out.emplace_back(scale(spot.x, min_x, max_x), scale(spot.y, min_y, max_y));
    }
    return out;
}

/**
 * Rasterize a slice onto its compact lattice: a dense H' x W' x K grid whose
 * occupied cells hold the densified spot vectors and whose remaining cells
 * are zero. Two spots mapping to one cell is an error (impossible for
 * distinct coordinates; checked anyway).
 */
inline CompactGrid rasterize(const RawSlice& slice, const GeneVocabulary& vocab) {
    CoordinateRanks ranks = compact_coordinates(slice);
    CompactGrid grid;
    grid.width = ranks.width();
    grid.height = ranks.height();
    grid.genes = vocab.size();
    grid.xs = std::move(ranks.xs);
    grid.ys = std::move(ranks.ys);
    grid.expr.assign(static_cast<std::size_t>(grid.height) * grid.width * grid.genes, 0.0f);
    grid.occupied.assign(static_cast<std::size_t>(grid.height) * grid.width, 0);

    CoordinateRanks lookup{grid.xs, grid.ys};
    for (const auto& spot : slice.spots) {
        auto [cx, cy] = lookup.rank_of(spot.x, spot.y);
        std::size_t cell = grid.cell(cy, cx);
        if (grid.occupied[cell]) {
            throw std::runtime_error("two spots map to grid cell (" + std::to_string(cx) +
                                     ", " + std::to_string(cy) + ") in slice '" + slice.id + "'");
        }
        grid.occupied[cell] = 1;
        float* dst = grid.expr.data() + cell * grid.genes;
        for (const auto& [g, v] : spot.values) {
            if (g >= grid.genes) {
                throw std::runtime_error("spot entry index " + std::to_string(g) +
                                         " out of vocabulary range " + std::to_string(grid.genes));
            }
            dst[g] = v;
        }
    }
    return grid;
}

} // namespace stpatch

#endif
