#ifndef STPATCH_CROP_HPP
#define STPATCH_CROP_HPP

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <utility>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

/**
 * @file crop.hpp
 * @brief Random fixed-size window sampling over a compact grid.
 *
 * Window origins are drawn uniformly over every in-bounds top-left corner;
 * draws are unconditional, so windows may overlap. Slices smaller than the
 * window are a hard error here — the pipeline layer decides whether to skip
 * such slices.
 */

namespace stpatch {

/// Dense h x w window copied out of a grid, channels inherited from it.
struct Window {
    std::uint32_t h = 0;
    std::uint32_t w = 0;
    std::uint32_t channels = 0;
    std::vector<float> values;          // h*w*channels, [u][v][g]
    std::vector<std::uint8_t> occupied; // h*w, row-major
};

/**
 * Draw a window origin (o_x, o_y) with o_x uniform on {0..W'-w} and o_y
 * uniform on {0..H'-h}. Throws "slice smaller than window" when the grid
 * cannot fit the window.
 */
inline std::pair<std::uint32_t, std::uint32_t>
sample_window_origin(const CompactGrid& grid, std::uint32_t h, std::uint32_t w, Rng& rng) {
    if (h == 0 || w == 0) {
        throw std::invalid_argument("window dimensions must be positive");
    }
    if (h > grid.height || w > grid.width) {
        throw std::invalid_argument("slice smaller than window");
    }
    auto ox = static_cast<std::uint32_t>(uniform_below(rng, grid.width - w + 1));
    auto oy = static_cast<std::uint32_t>(uniform_below(rng, grid.height - h + 1));
    return {ox, oy};
}

/**
 * Copy the h x w window at origin (o_x, o_y) out of the grid along with its
 * occupancy sub-mask. The copy does not alias grid storage.
 */
inline Window extract_patch(const CompactGrid& grid, std::uint32_t o_x, std::uint32_t o_y,
                            std::uint32_t h, std::uint32_t w) {
    if (h == 0 || w == 0) {
        throw std::invalid_argument("window dimensions must be positive");
    }
    if (o_y + h > grid.height || o_x + w > grid.width) {
        throw std::invalid_argument("window out of grid bounds");
    }
    Window win;
    win.h = h;
    win.w = w;
    win.channels = grid.genes;
    win.values.resize(static_cast<std::size_t>(h) * w * grid.genes);
    win.occupied.resize(static_cast<std::size_t>(h) * w);
    for (std::uint32_t u = 0; u < h; ++u) {
        const float* src = grid.at(o_y + u, o_x);
        std::memcpy(win.values.data() + static_cast<std::size_t>(u) * w * grid.genes,
                    src, static_cast<std::size_t>(w) * grid.genes * sizeof(float));
        const std::uint8_t* occ = grid.occupied.data() + grid.cell(o_y + u, o_x);
        std::memcpy(win.occupied.data() + static_cast<std::size_t>(u) * w, occ, w);
    }
    return win;
}

} // namespace stpatch

#endif
