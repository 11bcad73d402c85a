#ifndef STPATCH_GENESEL_HPP
#define STPATCH_GENESEL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "crop.hpp"
#include "rng.hpp"

/**
 * @file genesel.hpp
 * @brief Channel (gene) selection: per-window variance, variance-weighted
 * sampling without replacement, plus top-k HVG and uniform-random baselines.
 *
 * Weighted selection draws m unique genes with per-item weight sigma^2 +
 * epsilon using the exponential-key method: each gene receives the key
 * u^(1/weight) with u uniform, and the m largest keys win. This realizes
 * sequential probability-proportional-to-size draws in one pass. All
 * selectors return indices in draw order (first draw first); callers that
 * need the canonical ascending order sort afterwards.
 */

namespace stpatch {

/// How the m channels of a patch are picked from the window's gene axis.
struct SelectionMode {
    enum class Kind { weighted, hvg, random };

    Kind kind = Kind::weighted;
    double epsilon = 1e-8; // smoothing weight added to each variance

    static SelectionMode weighted(double eps = 1e-8) { return {Kind::weighted, eps}; }
    static SelectionMode hvg() { return {Kind::hvg, 0.0}; }
    static SelectionMode random() { return {Kind::random, 0.0}; }

    const char* name() const {
        switch (kind) {
            case Kind::weighted: return "weighted";
            case Kind::hvg: return "hvg";
            default: return "random";
        }
    }

    static SelectionMode parse(const std::string& name, double eps = 1e-8) {
        if (name == "weighted") return weighted(eps);
        if (name == "hvg") return hvg();
        if (name == "random") return random();
        throw std::invalid_argument("unknown selection mode '" + name + "'");
    }
};

/**
 * Per-gene population variance over the occupied sites of a window. Values
 * at holes never enter the statistic. Throws when no site is occupied.
 */
inline std::vector<double> per_gene_variance(std::span<const float> values,
                                             std::span<const std::uint8_t> occupied,
                                             std::uint32_t h, std::uint32_t w,
                                             std::uint32_t channels) {
    const std::size_t sites = static_cast<std::size_t>(h) * w;
    if (values.size() != sites * channels || occupied.size() != sites) {
        throw std::invalid_argument("window shape mismatch");
    }
    std::size_t n = 0;
    std::vector<double> sums(channels, 0.0);
    for (std::size_t s = 0; s < sites; ++s) {
        if (!occupied[s]) continue;
        ++n;
        const float* row = values.data() + s * channels;
        for (std::uint32_t g = 0; g < channels; ++g) {
            sums[g] += row[g];
        }
    }
    if (n == 0) {
        throw std::invalid_argument("variance over a window with zero occupied sites");
    }
    std::vector<double> vars(channels, 0.0);
    for (std::uint32_t g = 0; g < channels; ++g) {
        sums[g] /= static_cast<double>(n); // now the mean
    }
    for (std::size_t s = 0; s < sites; ++s) {
        if (!occupied[s]) continue;
        const float* row = values.data() + s * channels;
        for (std::uint32_t g = 0; g < channels; ++g) {
            const double d = row[g] - sums[g];
            vars[g] += d * d;
        }
    }
    for (std::uint32_t g = 0; g < channels; ++g) {
        vars[g] /= static_cast<double>(n);
    }
    return vars;
}

inline std::vector<double> per_gene_variance(const Window& win) {
    return per_gene_variance(win.values, win.occupied, win.h, win.w, win.channels);
}

/**
 * Weighted sampling without replacement of m gene indices with weight
 * sigma_g^2 + epsilon. Keys are compared as log(u)/weight, a monotone
 * transform of u^(1/weight). Returned in draw order; ties (measure zero)
 * break by lower index.
 */
inline std::vector<std::uint32_t> weighted_gene_sample(std::span<const double> variances,
                                                       std::uint32_t m, double epsilon, Rng& rng) {
    const auto count = static_cast<std::uint32_t>(variances.size());
    if (m > count) {
        throw std::invalid_argument("cannot select " + std::to_string(m) + " genes from " +
                                    std::to_string(count));
    }
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("weighted selection requires epsilon > 0");
    }
    std::vector<double> keys(count);
    for (std::uint32_t g = 0; g < count; ++g) {
        const double weight = variances[g] + epsilon;
        if (!(weight > 0.0) || !std::isfinite(variances[g])) {
            throw std::invalid_argument("invalid variance weight at index " + std::to_string(g));
        }
        keys[g] = std::log(uniform_real_open0(rng)) / weight;
    }
    std::vector<std::uint32_t> order(count);
    std::iota(order.begin(), order.end(), 0u);
    auto cmp = [&](std::uint32_t a, std::uint32_t b) {
        if (keys[a] != keys[b]) return keys[a] > keys[b];
        return a < b;
    };
    if (m < count) {
        std::nth_element(order.begin(), order.begin() + m, order.end(), cmp);
        order.resize(m);
    }
    std::sort(order.begin(), order.end(), cmp);
    return order;
}

/// Indices of the m largest variances, ties broken by lower index.
inline std::vector<std::uint32_t> hvg_topk(std::span<const double> variances, std::uint32_t m) {
    const auto count = static_cast<std::uint32_t>(variances.size());
    if (m > count) {
        throw std::invalid_argument("cannot select " + std::to_string(m) + " genes from " +
                                    std::to_string(count));
    }
    std::vector<std::uint32_t> order(count);
    std::iota(order.begin(), order.end(), 0u);
    auto cmp = [&](std::uint32_t a, std::uint32_t b) {
        if (variances[a] != variances[b]) return variances[a] > variances[b];
        return a < b;
    };
    if (m < count) {
        std::nth_element(order.begin(), order.begin() + m, order.end(), cmp);
        order.resize(m);
    }
    std::sort(order.begin(), order.end(), cmp);
    return order;
}

/// Uniform sample of m distinct indices from {0..count-1}, in draw order.
inline std::vector<std::uint32_t> random_gene_sample(std::uint32_t count, std::uint32_t m, Rng& rng) {
    if (m > count) {
        throw std::invalid_argument("cannot select " + std::to_string(m) + " genes from " +
                                    std::to_string(count));
    }
    std::vector<std::uint32_t> pool(count);
    std::iota(pool.begin(), pool.end(), 0u);
    for (std::uint32_t i = 0; i < m; ++i) {
        auto j = i + static_cast<std::uint32_t>(uniform_below(rng, count - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(m);
    return pool;
}

/// Dispatch over the three selection modes.
inline std::vector<std::uint32_t> select_genes(std::span<const double> variances, std::uint32_t m,
                                               const SelectionMode& mode, Rng& rng) {
    switch (mode.kind) {
        case SelectionMode::Kind::weighted:
            return weighted_gene_sample(variances, m, mode.epsilon, rng);
        case SelectionMode::Kind::hvg:
            return hvg_topk(variances, m);
        default:
            return random_gene_sample(static_cast<std::uint32_t>(variances.size()), m, rng);
    }
}

} // namespace stpatch

#endif
