#ifndef STPATCH_EVAL_HPP
#define STPATCH_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "matrix.hpp"
#include "rng.hpp"

/**
 * @file eval.hpp
 * @brief Downstream evaluation: exact kNN classification, accuracy and
 * adjusted Rand index, the 20/80 split protocol, and masked-region
 * reconstruction scoring.
 *
 * The kNN classifier is deliberately brute force — evaluation corpora stay
 * small enough that exactness beats an approximate index. ARI is evaluated
 * in exact integer arithmetic before the final division.
 */

namespace stpatch {

/**
 * Exact Euclidean k-nearest-neighbor classification with majority vote.
 * Distance ties break toward the lower training index; vote ties break
 * toward the label of the nearest neighbor carrying a tied class.
 */
inline std::vector<int> knn_classify(const Matrix& train_x, const std::vector<int>& train_y,
                                     const Matrix& test_x, std::uint32_t k) {
    if (train_x.rows != train_y.size()) {
        throw std::invalid_argument("training matrix and labels disagree in length");
    }
    if (train_x.cols != test_x.cols) {
        throw std::invalid_argument("train and test dimensionality differ");
    }
    if (k == 0 || train_x.rows < k) {
        throw std::invalid_argument("need at least k=" + std::to_string(k) + " training points, got " +
                                    std::to_string(train_x.rows));
    }
    const std::uint32_t n = train_x.rows, d = train_x.cols;
    std::vector<int> out(test_x.rows);
    std::vector<double> dist2(n);
    std::vector<std::uint32_t> order(n);
    for (std::uint32_t q = 0; q < test_x.rows; ++q) {
        const float* query = test_x.row(q);
        for (std::uint32_t i = 0; i < n; ++i) {
            const float* p = train_x.row(i);
            double acc = 0.0;
            for (std::uint32_t c = 0; c < d; ++c) {
                const double diff = static_cast<double>(query[c]) - p[c];
                acc += diff * diff;
            }
            dist2[i] = acc;
        }
        std::iota(order.begin(), order.end(), 0u);
        auto cmp = [&](std::uint32_t a, std::uint32_t b) {
            if (dist2[a] != dist2[b]) return dist2[a] < dist2[b];
            return a < b;
        };
        std::nth_element(order.begin(), order.begin() + k, order.end(), cmp);
        std::sort(order.begin(), order.begin() + k, cmp);

        std::map<int, std::uint32_t> votes;
        for (std::uint32_t t = 0; t < k; ++t) {
            ++votes[train_y[order[t]]];
        }
        std::uint32_t best = 0;
        for (const auto& [label, count] : votes) {
            best = std::max(best, count);
        }
        for (std::uint32_t t = 0; t < k; ++t) { // nearest neighbor of a max-vote class wins
            if (votes[train_y[order[t]]] == best) {
                out[q] = train_y[order[t]];
                break;
            }
        }
    }
    return out;
}

/// Fraction of exact label matches.
inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
    if (predicted.size() != truth.size() || predicted.empty()) {
        throw std::invalid_argument("label vectors must be non-empty and equal-length");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        hits += predicted[i] == truth[i];
    }
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

/**
 * Adjusted Rand index between two partitions, exact in 128-bit integer
 * arithmetic until the final division. The degenerate case where both
 * partitions are trivial (both all-singletons or both single-cluster) is
 * 0/0 under the formula and defined as 1.0 by convention.
 */
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.size() < 2) {
        throw std::invalid_argument("partitions must be equal-length with at least two elements");
    }
    std::map<int, std::int64_t> count_a, count_b;
    std::map<std::pair<int, int>, std::int64_t> joint;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ++count_a[a[i]];
        ++count_b[b[i]];
        ++joint[{a[i], b[i]}];
    }
    auto pairs = [](std::int64_t n) -> __int128 {
        return static_cast<__int128>(n) * (n - 1) / 2;
    };
    __int128 sum_joint = 0, sum_a = 0, sum_b = 0;
    for (const auto& [key, n] : joint) sum_joint += pairs(n);
    for (const auto& [key, n] : count_a) sum_a += pairs(n);
    for (const auto& [key, n] : count_b) sum_b += pairs(n);
    const __int128 total = pairs(static_cast<std::int64_t>(a.size()));

    // ARI = 2*(total*sum_joint - sum_a*sum_b) / (total*(sum_a+sum_b) - 2*sum_a*sum_b)
    const __int128 numer = 2 * (total * sum_joint - sum_a * sum_b);
    const __int128 denom = total * (sum_a + sum_b) - 2 * sum_a * sum_b;
    if (denom == 0) {
        return 1.0;
    }
    return static_cast<double>(numer) / static_cast<double>(denom);
}

struct Split {
    std::vector<std::uint32_t> train;
    std::vector<std::uint32_t> test;
};

namespace detail {

inline std::size_t split_train_size(std::size_t n, double train_frac) {
    if (!(train_frac > 0.0) || !(train_frac < 1.0)) {
        throw std::invalid_argument("train fraction must lie in (0, 1)");
    }
    const auto train_n = static_cast<std::size_t>(std::nearbyint(train_frac * static_cast<double>(n)));
    if (train_n == 0 || train_n >= n) {
        throw std::invalid_argument("train fraction " + std::to_string(train_frac) +
                                    " leaves an empty train or test side for n=" + std::to_string(n));
    }
    return train_n;
}

inline Split finalize_split(std::vector<std::uint32_t> train, std::size_t n) {
    std::sort(train.begin(), train.end());
    Split split;
    split.test.reserve(n - train.size());
    std::size_t at = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        if (at < train.size() && train[at] == i) {
            ++at;
        } else {
            split.test.push_back(i);
        }
    }
    split.train = std::move(train);
    return split;
}

} // namespace detail

/**
 * Random train/test splits: train size = round(train_frac*n), disjoint and
 * covering, deterministic per seed. Defaults follow the 20% train / 80%
 * test protocol over 10 splits.
 */
inline std::vector<Split> make_splits(std::size_t n, double train_frac = 0.2,
                                      std::uint32_t n_splits = 10, std::uint64_t seed = 0) {
    if (n_splits == 0) {
        throw std::invalid_argument("need at least one split");
    }
    const std::size_t train_n = detail::split_train_size(n, train_frac);
    std::vector<Split> splits;
    splits.reserve(n_splits);
    for (std::uint32_t s = 0; s < n_splits; ++s) {
        Rng rng(derive_stream(seed, "split", s));
        std::vector<std::uint32_t> pool(n);
        std::iota(pool.begin(), pool.end(), 0u);
        for (std::size_t i = 0; i < train_n; ++i) {
            std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, n - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(train_n);
        splits.push_back(detail::finalize_split(std::move(pool), n));
    }
    return splits;
}

/**
 * Stratified variant: the train quota is distributed over classes by
 * largest remainder, so every split keeps the total train size at
 * round(train_frac*n) while sampling within classes.
 */
inline std::vector<Split> make_stratified_splits(const std::vector<int>& labels,
                                                 double train_frac = 0.2,
                                                 std::uint32_t n_splits = 10, std::uint64_t seed = 0) {
    const std::size_t n = labels.size();
    if (n_splits == 0) {
        throw std::invalid_argument("need at least one split");
    }
    const std::size_t train_n = detail::split_train_size(n, train_frac);

    std::map<int, std::vector<std::uint32_t>> classes;
    for (std::uint32_t i = 0; i < n; ++i) {
        classes[labels[i]].push_back(i);
    }
    // per-class quotas by largest remainder
    std::vector<std::pair<int, std::vector<std::uint32_t>>> members(classes.begin(), classes.end());
    std::vector<std::size_t> quota(members.size());
    std::vector<double> remainder(members.size());
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < members.size(); ++c) {
        const double ideal = train_frac * static_cast<double>(members[c].second.size());
        quota[c] = static_cast<std::size_t>(ideal);
        remainder[c] = ideal - static_cast<double>(quota[c]);
        assigned += quota[c];
    }
    std::vector<std::size_t> by_remainder(members.size());
    std::iota(by_remainder.begin(), by_remainder.end(), 0u);
    std::sort(by_remainder.begin(), by_remainder.end(), [&](std::size_t x, std::size_t y) {
        if (remainder[x] != remainder[y]) return remainder[x] > remainder[y];
        return x < y;
    });
    for (std::size_t t = 0; assigned < train_n && t < by_remainder.size(); ++t) {
        const std::size_t c = by_remainder[t];
        if (quota[c] < members[c].second.size()) {
            ++quota[c];
            ++assigned;
        }
    }
    if (assigned != train_n) {
        throw std::invalid_argument("cannot stratify: per-class quotas cannot meet the train size");
    }

    std::vector<Split> splits;
    splits.reserve(n_splits);
    for (std::uint32_t s = 0; s < n_splits; ++s) {
        Rng rng(derive_stream(seed, "split", s));
        std::vector<std::uint32_t> train;
        train.reserve(train_n);
        for (std::size_t c = 0; c < members.size(); ++c) {
            std::vector<std::uint32_t> pool = members[c].second;
            for (std::size_t i = 0; i < quota[c]; ++i) {
                std::size_t j = i + static_cast<std::size_t>(uniform_below(rng, pool.size() - i));
                std::swap(pool[i], pool[j]);
            }
            train.insert(train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota[c]));
        }
        splits.push_back(detail::finalize_split(std::move(train), n));
    }
    return splits;
}

/// Mean squared and mean absolute error over a masked region's entries.
struct ReconstructionScore {
    double mse = 0.0;
    double mae = 0.0;
};

inline ReconstructionScore reconstruction_score(std::span<const float> truth,
                                                std::span<const float> predicted) {
    if (truth.size() != predicted.size() || truth.empty()) {
        throw std::invalid_argument("region value arrays must be non-empty and equal-length");
    }
    double se = 0.0, ae = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = static_cast<double>(truth[i]) - predicted[i];
        se += d * d;
        ae += std::abs(d);
    }
    const auto n = static_cast<double>(truth.size());
    return {se / n, ae / n};
}

/// Per-split and mean scores of the spatial-domain-detection protocol.
struct DomainDetectionReport {
    struct SplitScore {
        double acc = 0.0;
        double ari = 0.0;
    };
    std::vector<SplitScore> splits;
    double mean_acc = 0.0;
    double mean_ari = 0.0;
    bool stratified = false;
};

struct DomainDetectionParams {
    std::uint32_t k = 10;
    double train_frac = 0.2;
    std::uint32_t n_splits = 10;
    std::uint64_t seed = 0;
    std::size_t min_class_for_stratified = 5;
};

/**
 * Run the full protocol: split, classify with kNN, score accuracy and ARI
 * of predicted-vs-true labels per split. Splits are stratified when every
 * class holds at least `min_class_for_stratified` members.
 */
inline DomainDetectionReport domain_detection_report(const Matrix& embeddings,
                                                     const std::vector<int>& labels,
                                                     const DomainDetectionParams& params = {}) {
    if (embeddings.rows != labels.size()) {
        throw std::invalid_argument("embedding rows and label count differ");
    }
    std::map<int, std::size_t> class_sizes;
    for (int label : labels) ++class_sizes[label];
    if (class_sizes.size() < 2) {
        throw std::invalid_argument("domain detection needs at least two classes");
    }
    std::size_t min_class = labels.size();
    for (const auto& [label, count] : class_sizes) min_class = std::min(min_class, count);

    DomainDetectionReport report;
    report.stratified = min_class >= params.min_class_for_stratified;
    const auto splits = report.stratified
                            ? make_stratified_splits(labels, params.train_frac, params.n_splits, params.seed)
                            : make_splits(labels.size(), params.train_frac, params.n_splits, params.seed);

    for (const auto& split : splits) {
        Matrix train_x(static_cast<std::uint32_t>(split.train.size()), embeddings.cols);
        Matrix test_x(static_cast<std::uint32_t>(split.test.size()), embeddings.cols);
        std::vector<int> train_y(split.train.size()), test_y(split.test.size());
        for (std::size_t i = 0; i < split.train.size(); ++i) {
            std::copy_n(embeddings.row(split.train[i]), embeddings.cols,
                        train_x.data.begin() + static_cast<std::ptrdiff_t>(i * embeddings.cols));
            train_y[i] = labels[split.train[i]];
        }
        for (std::size_t i = 0; i < split.test.size(); ++i) {
            std::copy_n(embeddings.row(split.test[i]), embeddings.cols,
                        test_x.data.begin() + static_cast<std::ptrdiff_t>(i * embeddings.cols));
            test_y[i] = labels[split.test[i]];
        }
        const auto predicted = knn_classify(train_x, train_y, test_x, params.k);
        report.splits.push_back({accuracy(predicted, test_y), adjusted_rand_index(predicted, test_y)});
    }
    for (const auto& s : report.splits) {
        report.mean_acc += s.acc;
        report.mean_ari += s.ari;
    }
    report.mean_acc /= static_cast<double>(report.splits.size());
    report.mean_ari /= static_cast<double>(report.splits.size());
    return report;
}

} // namespace stpatch

#endif
