#ifndef STPATCH_RENDER_HPP
#define STPATCH_RENDER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"

/**
 * @file render.hpp
 * @brief Grayscale PGM rendering of one gene channel of a grid or sample.
 *
 * Output is binary P5, min-max scaled per image over occupied cells;
 * unoccupied cells render as 0 and a constant channel renders as mid-gray
 * (128), the degenerate-scale rule.
 */

namespace stpatch {

namespace detail {

inline void write_pgm(const std::string& path, std::uint32_t width, std::uint32_t height,
                      const std::vector<std::uint8_t>& pixels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()),
              static_cast<std::streamsize>(pixels.size()));
    if (!out) {
        throw std::runtime_error("write failed for '" + path + "'");
    }
}

inline std::vector<std::uint8_t> scale_channel(const std::vector<float>& values,
                                               const std::vector<std::uint8_t>& occupied,
                                               std::size_t sites, std::size_t stride,
                                               std::size_t offset) {
    float lo = 0.0f, hi = 0.0f;
    bool seen = false;
    for (std::size_t s = 0; s < sites; ++s) {
        if (!occupied[s]) continue;
        const float v = values[s * stride + offset];
        if (!seen) {
            lo = hi = v;
            seen = true;
        } else {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    std::vector<std::uint8_t> pixels(sites, 0);
    if (!seen) {
        return pixels; // no occupied cells: all background
    }
    for (std::size_t s = 0; s < sites; ++s) {
        if (!occupied[s]) continue;
        if (hi == lo) {
            pixels[s] = 128;
        } else {
            const float v = values[s * stride + offset];
            pixels[s] = static_cast<std::uint8_t>(
                std::lround((v - lo) / (hi - lo) * 255.0f));
        }
    }
    return pixels;
}

} // namespace detail

/// Render gene channel `gene` of a grid to a binary PGM file.
inline void render_channel(const CompactGrid& grid, std::uint32_t gene, const std::string& path) {
    if (gene >= grid.genes) {
        throw std::invalid_argument("gene index " + std::to_string(gene) + " out of range " +
                                    std::to_string(grid.genes));
    }
    const std::size_t sites = static_cast<std::size_t>(grid.height) * grid.width;
    auto pixels = detail::scale_channel(grid.expr, grid.occupied, sites, grid.genes, gene);
    detail::write_pgm(path, grid.width, grid.height, pixels);
}

/// Render channel `k` (index into the selected genes) of a sample.
inline void render_channel(const PatchSample& sample, std::uint32_t k, const std::string& path) {
    if (k >= sample.m) {
        throw std::invalid_argument("channel index " + std::to_string(k) + " out of range " +
                                    std::to_string(sample.m));
    }
    const std::size_t sites = static_cast<std::size_t>(sample.h) * sample.w;
    auto pixels = detail::scale_channel(sample.values, sample.occupied, sites, sample.m, k);
    detail::write_pgm(path, sample.w, sample.h, pixels);
}

} // namespace stpatch

#endif
