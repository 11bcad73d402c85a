#ifndef STPATCH_CORE_HPP
#define STPATCH_CORE_HPP

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

/**
 * @file core.hpp
 * @brief Domain types shared by every other component: gene vocabulary,
 * slices, compacted grids, patch samples and mask specifications.
 *
 * All types are plain immutable-after-construction value types and safe to
 * share across threads.
 */

namespace stpatch {

/**
 * @brief Ordered gene identifiers plus the inverse name-to-index map.
 *
 * Expression vectors everywhere in the toolkit are indexed against one shared
 * vocabulary; `index` maps each name back to its position in `names`.
 */
struct GeneVocabulary {
    std::vector<std::string> names;
    std::unordered_map<std::string, std::uint32_t> index;

    std::uint32_t size() const { return static_cast<std::uint32_t>(names.size()); }
};

/**
 * Build a vocabulary from a name list, deduplicating in first-occurrence
 * order. Throws if `names` is empty.
 */
inline GeneVocabulary build_vocabulary(const std::vector<std::string>& names) {
    if (names.empty()) {
        throw std::invalid_argument("empty vocabulary");
    }
    GeneVocabulary vocab;
    vocab.names.reserve(names.size());
    for (const auto& name : names) {
        auto pos = static_cast<std::uint32_t>(vocab.names.size());
        if (vocab.index.emplace(name, pos).second) {
            vocab.names.push_back(name);
        }
    }
    return vocab;
}

/**
 * @brief One sequencing unit: a 2D platform coordinate plus a sparse
 * non-negative expression vector over the gene vocabulary.
 *
 * Sparse entries are sorted by gene index, strictly increasing, and never
 * store explicit zeros.
 */
struct Spot {
    double x = 0.0;
    double y = 0.0;
    std::vector<std::pair<std::uint32_t, float>> values;

    std::vector<float> densify(std::uint32_t gene_count) const {
        std::vector<float> dense(gene_count, 0.0f);
        for (const auto& [g, v] : values) {
            if (g >= gene_count) {
                throw std::runtime_error("spot entry index " + std::to_string(g) +
                                         " out of vocabulary range " + std::to_string(gene_count));
            }
            dense[g] = v;
        }
        return dense;
    }

    static Spot from_dense(double x, double y, const std::vector<float>& dense) {
        Spot spot;
        spot.x = x;
        spot.y = y;
        for (std::uint32_t g = 0; g < dense.size(); ++g) {
            if (dense[g] != 0.0f) {
                spot.values.emplace_back(g, dense[g]);
            }
        }
        return spot;
    }
};

/// One tissue section: a non-empty set of spots with distinct coordinates.
struct RawSlice {
    std::string id;
    std::vector<Spot> spots;
};

/**
 * @brief Dense expression grid produced by rank compaction and rasterization.
 *
 * `expr` has shape height x width x genes in row-major-then-channel order;
 * `occupied` marks which lattice cells hold an observed spot. Unoccupied
 * cells are all-zero. `xs` / `ys` keep the sorted unique raw coordinate
 * levels each axis was compacted from.
 */
struct CompactGrid {
    std::uint32_t height = 0; // H'
    std::uint32_t width = 0;  // W'
    std::uint32_t genes = 0;  // K
    std::vector<float> expr;
    std::vector<std::uint8_t> occupied;
    std::vector<double> xs;
    std::vector<double> ys;

    std::size_t cell(std::uint32_t row, std::uint32_t col) const {
        return static_cast<std::size_t>(row) * width + col;
    }
    const float* at(std::uint32_t row, std::uint32_t col) const {
        return expr.data() + cell(row, col) * genes;
    }
    bool is_occupied(std::uint32_t row, std::uint32_t col) const {
        return occupied[cell(row, col)] != 0;
    }
};

/**
 * @brief The pretraining unit: an h x w window with m selected gene channels.
 *
 * `values` has shape h x w x m, indexed [u][v][k] with u the row, v the
 * column and k the channel; `genes[k]` is the vocabulary index the k-th
 * channel was taken from (strictly ascending). Values at unoccupied sites
 * are all-zero.
 */
struct PatchSample {
    std::uint32_t h = 0;
    std::uint32_t w = 0;
    std::uint32_t m = 0;
    std::uint32_t origin_x = 0; // grid column of the window's top-left corner
    std::uint32_t origin_y = 0; // grid row of the window's top-left corner
    std::string slice_id;
    std::vector<std::uint32_t> genes;
    std::vector<std::uint8_t> occupied; // h*w, row-major
    std::vector<float> values;          // h*w*m

    std::size_t value_index(std::uint32_t u, std::uint32_t v, std::uint32_t k) const {
        return (static_cast<std::size_t>(u) * w + v) * m + k;
    }
    bool site_occupied(std::uint32_t u, std::uint32_t v) const {
        return occupied[static_cast<std::size_t>(u) * w + v] != 0;
    }
};

enum class MaskMode { uniform_ratio, contiguous_region };

struct MaskEntry {
    std::uint32_t u = 0; // row
    std::uint32_t v = 0; // column
    std::uint32_t k = 0; // channel

    friend bool operator==(const MaskEntry&, const MaskEntry&) = default;
    friend auto operator<=>(const MaskEntry&, const MaskEntry&) = default;
};

/**
 * @brief Set of masked (row, col, channel) entries plus how they were drawn.
 *
 * For `uniform_ratio` the entry count is round(ratio*h*w*m) with ties to
 * even; for `contiguous_region` the entries cover exactly one S x S spatial
 * block across all channels and the block corner is kept in
 * (region_u, region_v). Entries are distinct, in-bounds and sorted.
 */
struct MaskSpec {
    MaskMode mode = MaskMode::uniform_ratio;
    double ratio = 0.0;
    std::uint32_t region_side = 0;
    std::uint32_t region_u = 0;
    std::uint32_t region_v = 0;
    std::vector<MaskEntry> entries;
};

} // namespace stpatch

#endif
