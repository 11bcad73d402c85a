#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include <stpatch/genesel.hpp>

using namespace stpatch;

namespace {

// independent two-pass variance, one gene at a time
std::vector<double> oracle_variance(const std::vector<float>& values,
                                    const std::vector<std::uint8_t>& occupied,
                                    std::uint32_t sites, std::uint32_t channels) {
    std::vector<double> out(channels, 0.0);
    for (std::uint32_t g = 0; g < channels; ++g) {
        double sum = 0.0;
        std::size_t n = 0;
        for (std::uint32_t s = 0; s < sites; ++s) {
            if (occupied[s]) {
                sum += values[static_cast<std::size_t>(s) * channels + g];
                ++n;
            }
        }
        const double mean = sum / static_cast<double>(n);
        double acc = 0.0;
        for (std::uint32_t s = 0; s < sites; ++s) {
            if (occupied[s]) {
                const double d = values[static_cast<std::size_t>(s) * channels + g] - mean;
                acc += d * d;
            }
        }
        out[g] = acc / static_cast<double>(n);
    }
    return out;
}

} // namespace

TEST(Variance, ConstantChannelIsExactlyZero) {
    std::vector<float> values(4 * 3, 7.25f);
    std::vector<std::uint8_t> occupied(4, 1);
    auto vars = per_gene_variance(values, occupied, 2, 2, 3);
    for (double v : vars) {
        EXPECT_EQ(v, 0.0);
    }
}

TEST(Variance, TwoSitePopulationVariance) {
    // channel values {0, 2} over two occupied sites: ((0-1)^2 + (2-1)^2)/2 = 1
    std::vector<float> values{0.0f, 2.0f};
    std::vector<std::uint8_t> occupied{1, 1};
    auto vars = per_gene_variance(values, occupied, 1, 2, 1);
    EXPECT_DOUBLE_EQ(vars[0], 1.0);
}

TEST(Variance, IgnoresHoles) {
    std::vector<float> values{0.0f, 2.0f, 99.0f};
    std::vector<std::uint8_t> occupied{1, 1, 0};
    auto vars = per_gene_variance(values, occupied, 1, 3, 1);
    EXPECT_DOUBLE_EQ(vars[0], 1.0);
}

TEST(Variance, MatchesTwoPassOracle) {
    std::mt19937 rng(23);
    std::uniform_real_distribution<float> value(0.0f, 50.0f);
    const std::uint32_t h = 8, w = 8, channels = 32, sites = h * w;
    std::vector<float> values(static_cast<std::size_t>(sites) * channels);
    std::vector<std::uint8_t> occupied(sites);
    for (auto& v : values) v = value(rng);
    for (auto& o : occupied) o = rng() % 4 != 0;
    occupied[0] = 1;
    auto vars = per_gene_variance(values, occupied, h, w, channels);
    auto expected = oracle_variance(values, occupied, sites, channels);
    for (std::uint32_t g = 0; g < channels; ++g) {
        EXPECT_NEAR(vars[g], expected[g], 1e-6 * std::max(1.0, expected[g]));
    }
}

TEST(Variance, ZeroOccupiedSitesIsAnError) {
    std::vector<float> values(4, 0.0f);
    std::vector<std::uint8_t> occupied(4, 0);
    EXPECT_THROW(per_gene_variance(values, occupied, 2, 2, 1), std::invalid_argument);
}

TEST(WeightedSample, ExhaustiveDrawReturnsFullSet) {
    std::vector<double> vars{0.5, 0.0, 3.0, 1.0};
    Rng rng(5);
    auto picked = weighted_gene_sample(vars, 4, 1e-8, rng);
    std::set<std::uint32_t> unique(picked.begin(), picked.end());
    EXPECT_EQ(unique, (std::set<std::uint32_t>{0, 1, 2, 3}));
}

TEST(WeightedSample, DominantVarianceWinsAlmostSurely) {
    // P(index 2 first) = (1 + 1e-8) / (1 + 3e-8): indistinguishable from 1
    std::vector<double> vars{0.0, 0.0, 1.0};
    Rng rng(99);
    int hits = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        auto picked = weighted_gene_sample(vars, 1, 1e-8, rng);
        hits += picked[0] == 2;
    }
    EXPECT_GE(hits, static_cast<int>(draws * 0.999));
}

TEST(WeightedSample, FirstDrawMarginalMatchesWeights) {
    // variances [1,3] with epsilon -> 0: P(first = 0) = 1/4
    std::vector<double> vars{1.0, 3.0};
    Rng rng(2024);
    const int draws = 40000;
    int hits = 0;
    for (int i = 0; i < draws; ++i) {
        auto picked = weighted_gene_sample(vars, 1, 1e-12, rng);
        hits += picked[0] == 0;
    }
    const double freq = static_cast<double>(hits) / draws;
    EXPECT_NEAR(freq, 0.25, 0.01); // 3 sigma of Binomial(40000, 0.25) is ~0.0065
}

TEST(WeightedSample, FirstDrawChiSquare) {
    // P(g) = (var_g + eps) / sum; eps = 1 -> weights {2, 3, 4} / 9
    std::vector<double> vars{1.0, 2.0, 3.0};
    Rng rng(31337);
    const int draws = 20000;
    std::vector<int> counts(3, 0);
    for (int i = 0; i < draws; ++i) {
        ++counts[weighted_gene_sample(vars, 1, 1.0, rng)[0]];
    }
    const double probs[3] = {2.0 / 9.0, 3.0 / 9.0, 4.0 / 9.0};
    double chi2 = 0.0;
    for (int g = 0; g < 3; ++g) {
        const double expected = draws * probs[g];
        const double d = counts[g] - expected;
        chi2 += d * d / expected;
    }
    EXPECT_LT(chi2, 9.21); // df=2, alpha=0.01
}

TEST(WeightedSample, ScaleInvarianceOfKeyOrder) {
    // scaling variances and epsilon together rescales every key by the same
    // positive factor, so the same seed yields the same selection
    std::vector<double> vars{0.1, 2.0, 0.7, 5.0, 1.3};
    std::vector<double> scaled;
    for (double v : vars) scaled.push_back(v * 1000.0);
    Rng a(4), b(4);
    EXPECT_EQ(weighted_gene_sample(vars, 3, 1e-6, a),
              weighted_gene_sample(scaled, 3, 1e-3, b));
}

TEST(WeightedSample, OutputsAreDistinct) {
    std::mt19937 meta(6);
    for (int trial = 0; trial < 50; ++trial) {
        const std::uint32_t count = 2 + meta() % 20;
        const std::uint32_t m = 1 + meta() % count;
        std::vector<double> vars(count);
        for (auto& v : vars) v = (meta() % 100) * 0.1;
        Rng rng(meta());
        auto picked = weighted_gene_sample(vars, m, 1e-8, rng);
        std::set<std::uint32_t> unique(picked.begin(), picked.end());
        EXPECT_EQ(unique.size(), m);
        for (auto g : picked) EXPECT_LT(g, count);
    }
}

TEST(WeightedSample, TooManyRequestedIsAnError) {
    std::vector<double> vars{1.0};
    Rng rng(0);
    EXPECT_THROW(weighted_gene_sample(vars, 2, 1e-8, rng), std::invalid_argument);
    EXPECT_THROW(weighted_gene_sample(vars, 1, 0.0, rng), std::invalid_argument);
}

TEST(HvgTopK, PicksLargestVariances) {
    std::vector<double> vars{5.0, 1.0, 3.0};
    auto picked = hvg_topk(vars, 2);
    EXPECT_EQ((std::set<std::uint32_t>{picked.begin(), picked.end()}),
              (std::set<std::uint32_t>{0, 2}));
    EXPECT_EQ(picked[0], 0u); // draw order: largest first
}

TEST(HvgTopK, TiesBreakTowardLowerIndex) {
    std::vector<double> vars{2.0, 2.0, 2.0};
    auto picked = hvg_topk(vars, 2);
    EXPECT_EQ((std::set<std::uint32_t>{picked.begin(), picked.end()}),
              (std::set<std::uint32_t>{0, 1}));
}

TEST(HvgTopK, MatchesFullSortOracle) {
    std::mt19937 meta(8);
    for (int trial = 0; trial < 30; ++trial) {
        const std::uint32_t count = 3 + meta() % 30;
        const std::uint32_t m = 1 + meta() % count;
        std::vector<double> vars(count);
        for (auto& v : vars) v = (meta() % 17) * 0.25; // ties likely
        std::vector<std::uint32_t> order(count);
        std::iota(order.begin(), order.end(), 0u);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return vars[a] > vars[b]; });
        order.resize(m);
        EXPECT_EQ(hvg_topk(vars, m), order);
    }
}

TEST(HvgTopK, SelectionDominatesExcluded) {
    std::mt19937 meta(12);
    std::vector<double> vars(20);
    for (auto& v : vars) v = (meta() % 1000) * 0.01;
    auto picked = hvg_topk(vars, 7);
    std::set<std::uint32_t> chosen(picked.begin(), picked.end());
    double min_chosen = 1e300;
    for (auto g : picked) min_chosen = std::min(min_chosen, vars[g]);
    for (std::uint32_t g = 0; g < vars.size(); ++g) {
        if (!chosen.count(g)) {
            EXPECT_LE(vars[g], min_chosen);
        }
    }
}

TEST(RandomSample, FullSetWhenMEqualsCount) {
    Rng rng(3);
    auto picked = random_gene_sample(5, 5, rng);
    EXPECT_EQ((std::set<std::uint32_t>{picked.begin(), picked.end()}).size(), 5u);
}

TEST(RandomSample, UniformOverSubsetsChiSquare) {
    // C(4,2) = 6 subsets, each with probability 1/6
    Rng rng(555);
    const int draws = 12000;
    std::map<std::set<std::uint32_t>, int> counts;
    for (int i = 0; i < draws; ++i) {
        auto picked = random_gene_sample(4, 2, rng);
        ++counts[std::set<std::uint32_t>(picked.begin(), picked.end())];
    }
    ASSERT_EQ(counts.size(), 6u);
    const double expected = draws / 6.0;
    double chi2 = 0.0;
    for (const auto& [subset, observed] : counts) {
        const double d = observed - expected;
        chi2 += d * d / expected;
    }
    EXPECT_LT(chi2, 15.09); // df=5, alpha=0.01
}

TEST(RandomSample, SeedDeterminism) {
    Rng a(10), b(10);
    EXPECT_EQ(random_gene_sample(30, 7, a), random_gene_sample(30, 7, b));
}

TEST(SelectGenes, DispatchesByMode) {
    std::vector<double> vars{0.0, 9.0, 1.0};
    Rng rng(1);
    auto hvg = select_genes(vars, 2, SelectionMode::hvg(), rng);
    EXPECT_EQ((std::set<std::uint32_t>{hvg.begin(), hvg.end()}), (std::set<std::uint32_t>{1, 2}));
    auto weighted = select_genes(vars, 3, SelectionMode::weighted(), rng);
    EXPECT_EQ(weighted.size(), 3u);
    auto random = select_genes(vars, 3, SelectionMode::random(), rng);
    EXPECT_EQ(random.size(), 3u);
    EXPECT_THROW(SelectionMode::parse("bogus"), std::invalid_argument);
    EXPECT_EQ(SelectionMode::parse("hvg").kind, SelectionMode::Kind::hvg);
}
