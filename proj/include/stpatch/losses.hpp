#ifndef STPATCH_LOSSES_HPP
#define STPATCH_LOSSES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "matrix.hpp"

/**
 * @file losses.hpp
 * @brief Reference oracles for the four masked-reconstruction objectives,
 * computed from caller-supplied predictions or embeddings.
 *
 * These functions verify objectives; they do not train anything. Every loss
 * is the mean squared error over the masked entries that actually enter the
 * sum (the total-masked-entry normalization), accumulated in double
 * precision. A loss is zero exactly when predictions match targets on every
 * scored entry.
 */

namespace stpatch {

/// Per-spot neighbor lists with normalized aggregation weights.
struct NeighborGraph {
    std::vector<std::vector<std::uint32_t>> neighbors;
    std::vector<std::vector<double>> weights; // same shape; each non-empty row sums to 1

    std::size_t size() const { return neighbors.size(); }
};

/// Assignment of every spot to one of k non-empty macro-domains.
struct MacroPartition {
    std::vector<std::uint32_t> domain;
    std::uint32_t k = 0;
};

/// How a spot embedding and its macro-domain embedding are combined.
struct Fusion {
    enum class Rule { mean, spot_only, domain_only };
    Rule rule = Rule::mean;

    static Fusion mean() { return {Rule::mean}; }
    static Fusion spot_only() { return {Rule::spot_only}; }
    static Fusion domain_only() { return {Rule::domain_only}; }
};

namespace detail {

inline double dot_fd(std::span<const float> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * b[i];
    }
    return acc;
}

} // namespace detail

/**
 * Spot-level loss: mean squared error between per-spot masked targets and
 * predictions. Rows may have different mask sizes; the mean runs over every
 * masked entry.
 */
inline double loss_spot(const std::vector<std::vector<float>>& targets,
                        const std::vector<std::vector<float>>& predictions) {
    if (targets.size() != predictions.size()) {
        throw std::invalid_argument("targets and predictions differ in spot count");
    }
    double acc = 0.0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i].size() != predictions[i].size()) {
            throw std::invalid_argument("mask size mismatch at spot " + std::to_string(i));
        }
        for (std::size_t j = 0; j < targets[i].size(); ++j) {
            const double d = static_cast<double>(targets[i][j]) - predictions[i][j];
            acc += d * d;
        }
        total += targets[i].size();
    }
    if (total == 0) {
        throw std::invalid_argument("no masked entries");
    }
    return acc / static_cast<double>(total);
}

/**
 * Exact k-nearest-neighbor graph under Euclidean distance with uniform
 * weights 1/k. Distance ties break toward the lower index; self-loops are
 * never emitted. Requires more points than k.
 */
inline NeighborGraph build_knn_graph(const std::vector<std::pair<double, double>>& coords,
                                     std::uint32_t k) {
    const std::size_t n = coords.size();
    if (k == 0) {
        throw std::invalid_argument("k must be positive");
    }
    if (n <= k) {
        throw std::invalid_argument("need more than k=" + std::to_string(k) + " points, got " +
                                    std::to_string(n));
    }
    NeighborGraph graph;
    graph.neighbors.resize(n);
    graph.weights.resize(n);
    std::vector<std::uint32_t> order(n);
    std::vector<double> dist2(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double dx = coords[i].first - coords[j].first;
            const double dy = coords[i].second - coords[j].second;
            dist2[j] = dx * dx + dy * dy;
        }
        std::iota(order.begin(), order.end(), 0u);
        order.erase(order.begin() + static_cast<std::ptrdiff_t>(i)); // no self-loop
        auto cmp = [&](std::uint32_t a, std::uint32_t b) {
            if (dist2[a] != dist2[b]) return dist2[a] < dist2[b];
            return a < b;
        };
        std::nth_element(order.begin(), order.begin() + k, order.end(), cmp);
        order.resize(k);
        std::sort(order.begin(), order.end(), cmp);
        graph.neighbors[i] = order;
        graph.weights[i].assign(k, 1.0 / static_cast<double>(k));
        order.resize(n);
    }
    return graph;
}

/**
 * Multi-spot loss: each spot is predicted from its neighbor-aggregated
 * embedding. `targets[i]` holds the masked expression values of spot i and
 * `masks[i]` the corresponding gene indices. A spot with masked genes but no
 * neighbors is an error unless `self_fallback` lets it fall back to its own
 * embedding.
 */
inline double loss_mspot(const std::vector<std::vector<float>>& targets,
                         const Matrix& gene_embeddings, const Matrix& spot_embeddings,
                         const NeighborGraph& graph,
                         const std::vector<std::vector<std::uint32_t>>& masks,
                         bool self_fallback = false) {
    const std::size_t n = targets.size();
    if (masks.size() != n || spot_embeddings.rows != n || graph.size() != n) {
        throw std::invalid_argument("inconsistent spot counts across mspot inputs");
    }
    if (gene_embeddings.cols != spot_embeddings.cols) {
        throw std::invalid_argument("gene and spot embedding dimensions differ");
    }
    const std::uint32_t d = spot_embeddings.cols;
    double acc = 0.0;
    std::size_t total = 0;
    std::vector<double> agg(d);
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i].size() != masks[i].size()) {
            throw std::invalid_argument("mask size mismatch at spot " + std::to_string(i));
        }
        if (targets[i].empty()) continue;
        std::fill(agg.begin(), agg.end(), 0.0);
        if (graph.neighbors[i].empty()) {
            if (!self_fallback) {
                throw std::invalid_argument("spot " + std::to_string(i) +
                                            " has no neighbors (enable self fallback to permit)");
            }
            const float* own = spot_embeddings.row(static_cast<std::uint32_t>(i));
            for (std::uint32_t c = 0; c < d; ++c) agg[c] = own[c];
        } else {
            for (std::size_t t = 0; t < graph.neighbors[i].size(); ++t) {
                const std::uint32_t j = graph.neighbors[i][t];
                if (j >= spot_embeddings.rows) {
                    throw std::invalid_argument("neighbor index out of range");
                }
                const double a = graph.weights[i][t];
                const float* e = spot_embeddings.row(j);
                for (std::uint32_t c = 0; c < d; ++c) agg[c] += a * e[c];
            }
        }
        for (std::size_t t = 0; t < masks[i].size(); ++t) {
            const std::uint32_t g = masks[i][t];
            if (g >= gene_embeddings.rows) {
                throw std::invalid_argument("masked gene index out of embedding range");
            }
            const double pred = detail::dot_fd({gene_embeddings.row(g), d}, agg);
            const double diff = static_cast<double>(targets[i][t]) - pred;
            acc += diff * diff;
        }
        total += masks[i].size();
    }
    if (total == 0) {
        throw std::invalid_argument("no masked entries");
    }
    return acc / static_cast<double>(total);
}

/**
 * Deterministic stand-in for macro-domain delineation: spots are tiled into
 * k bands of near-equal population along the axis with the larger coordinate
 * extent. Band sizes differ by at most one.
 */
inline MacroPartition grid_macro_partition(const std::vector<std::pair<double, double>>& coords,
                                           std::uint32_t k) {
    const std::size_t n = coords.size();
    if (k == 0) {
        throw std::invalid_argument("domain count must be positive");
    }
    if (k > n) {
        throw std::invalid_argument("more domains than spots");
    }
    double min_x = coords[0].first, max_x = min_x, min_y = coords[0].second, max_y = min_y;
    for (const auto& [x, y] : coords) {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
    }
    const bool along_x = (max_x - min_x) >= (max_y - min_y);
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double ca = along_x ? coords[a].first : coords[a].second;
        const double cb = along_x ? coords[b].first : coords[b].second;
        if (ca != cb) return ca < cb;
        return a < b;
    });
    MacroPartition part;
    part.k = k;
    part.domain.resize(n);
    const std::size_t base = n / k, extra = n % k;
    std::size_t at = 0;
    for (std::uint32_t dom = 0; dom < k; ++dom) {
        const std::size_t len = base + (dom < extra ? 1 : 0);
        for (std::size_t t = 0; t < len; ++t) {
            part.domain[order[at++]] = dom;
        }
    }
    return part;
}

/**
 * Slice-level loss: each spot is predicted from its embedding fused with its
 * macro-domain embedding (domain embedding = mean of member spot
 * embeddings; default fusion = elementwise mean).
 */
inline double loss_slice(const std::vector<std::vector<float>>& targets,
                         const Matrix& gene_embeddings, const Matrix& spot_embeddings,
                         const MacroPartition& partition, Fusion fuse,
                         const std::vector<std::vector<std::uint32_t>>& masks) {
    const std::size_t n = targets.size();
    if (masks.size() != n || spot_embeddings.rows != n || partition.domain.size() != n) {
        throw std::invalid_argument("inconsistent spot counts across slice-loss inputs");
    }
    if (gene_embeddings.cols != spot_embeddings.cols) {
        throw std::invalid_argument("gene and spot embedding dimensions differ");
    }
    const std::uint32_t d = spot_embeddings.cols;

    std::vector<std::size_t> members(partition.k, 0);
    std::vector<std::vector<double>> domain_emb(partition.k, std::vector<double>(d, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t dom = partition.domain[i];
        if (dom >= partition.k) {
            throw std::invalid_argument("domain id out of range at spot " + std::to_string(i));
        }
        ++members[dom];
        const float* e = spot_embeddings.row(static_cast<std::uint32_t>(i));
        for (std::uint32_t c = 0; c < d; ++c) domain_emb[dom][c] += e[c];
    }
    for (std::uint32_t dom = 0; dom < partition.k; ++dom) {
        if (members[dom] == 0) {
            throw std::invalid_argument("macro-domain " + std::to_string(dom) + " is empty");
        }
        for (std::uint32_t c = 0; c < d; ++c) domain_emb[dom][c] /= static_cast<double>(members[dom]);
    }

    double acc = 0.0;
    std::size_t total = 0;
    std::vector<double> fused(d);
    for (std::size_t i = 0; i < n; ++i) {
        if (targets[i].size() != masks[i].size()) {
            throw std::invalid_argument("mask size mismatch at spot " + std::to_string(i));
        }
        if (targets[i].empty()) continue;
        const float* e = spot_embeddings.row(static_cast<std::uint32_t>(i));
        const auto& dom = domain_emb[partition.domain[i]];
        for (std::uint32_t c = 0; c < d; ++c) {
            switch (fuse.rule) {
                case Fusion::Rule::mean: fused[c] = 0.5 * (e[c] + dom[c]); break;
                case Fusion::Rule::spot_only: fused[c] = e[c]; break;
                case Fusion::Rule::domain_only: fused[c] = dom[c]; break;
            }
        }
        for (std::size_t t = 0; t < masks[i].size(); ++t) {
            const std::uint32_t g = masks[i][t];
            if (g >= gene_embeddings.rows) {
                throw std::invalid_argument("masked gene index out of embedding range");
            }
            double pred = 0.0;
            const float* ge = gene_embeddings.row(g);
            for (std::uint32_t c = 0; c < d; ++c) pred += static_cast<double>(ge[c]) * fused[c];
            const double diff = static_cast<double>(targets[i][t]) - pred;
            acc += diff * diff;
        }
        total += masks[i].size();
    }
    if (total == 0) {
        throw std::invalid_argument("no masked entries");
    }
    return acc / static_cast<double>(total);
}

/**
 * Patch-level loss: the mean squared reconstruction error over a mask,
 * predicting entry (u,v,k) as the inner product of the gene embedding of
 * the k-th selected gene with the caller-supplied site feature at (u,v).
 * `site_features` has one row per site in row-major (u*w+v) order. Entries at
 * unoccupied sites are skipped unless `loss_on_holes` is set; the mean runs
 * over the entries actually scored.
 */
inline double loss_patch(const PatchSample& sample, const MaskSpec& spec,
                         const Matrix& gene_embeddings, const Matrix& site_features,
                         bool loss_on_holes = false) {
    if (spec.entries.empty()) {
        throw std::invalid_argument("mask spec has no entries");
    }
    if (site_features.rows != static_cast<std::size_t>(sample.h) * sample.w) {
        throw std::invalid_argument("site features must have h*w rows");
    }
    if (gene_embeddings.cols != site_features.cols) {
        throw std::invalid_argument("gene and site feature dimensions differ");
    }
    const std::uint32_t d = site_features.cols;
    double acc = 0.0;
    std::size_t total = 0;
    for (const auto& e : spec.entries) {
        if (e.u >= sample.h || e.v >= sample.w || e.k >= sample.m) {
            throw std::invalid_argument("mask entry out of bounds for sample shape");
        }
        if (!loss_on_holes && !sample.site_occupied(e.u, e.v)) continue;
        const std::uint32_t gene = sample.genes[e.k];
        if (gene >= gene_embeddings.rows) {
            throw std::invalid_argument("sample gene index out of embedding range");
        }
        const float* ge = gene_embeddings.row(gene);
        const float* site = site_features.row(e.u * sample.w + e.v);
        double pred = 0.0;
        for (std::uint32_t c = 0; c < d; ++c) pred += static_cast<double>(ge[c]) * site[c];
        const double diff = static_cast<double>(sample.values[sample.value_index(e.u, e.v, e.k)]) - pred;
        acc += diff * diff;
        ++total;
    }
    if (total == 0) {
        throw std::invalid_argument("mask is empty after hole exclusion");
    }
    return acc / static_cast<double>(total);
}

} // namespace stpatch

#endif
