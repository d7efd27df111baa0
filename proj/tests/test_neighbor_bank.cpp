#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pogdiff/neighbor_bank.hpp"

using namespace pogdiff;

namespace {

Dataset points(const std::vector<std::vector<double>>& xs, const std::vector<std::string>& labels = {}) {
    std::vector<LabeledSample> samples;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const std::string label = labels.empty() ? "A" : labels[i];
        if (std::find(ids.begin(), ids.end(), label) == ids.end()) ids.push_back(label);
        samples.push_back({i, label, xs[i], {0.0}});
    }
    return Dataset(DataDims{xs.front().size(), 1}, ids, samples);
}

}  // namespace

TEST(Index, IdenticalEmbeddingsAreMutualNeighborsWithUnitSimilarity) {
    const auto idx = build_index(points({{1, 2}, {1, 2}, {-3, 1}}), identity_embedding, 1);
    EXPECT_EQ(idx.neighbors(0)[0].id, 1u);
    EXPECT_EQ(idx.neighbors(1)[0].id, 0u);
    EXPECT_DOUBLE_EQ(idx.neighbors(0)[0].similarity, 1.0);
}

TEST(Index, OrthogonalEmbeddingsHaveZeroSimilarity) {
    const auto idx = build_index(points({{1, 0}, {0, 1}}), identity_embedding, 1);
    EXPECT_EQ(idx.neighbors(0)[0].similarity, 0.0);
}

TEST(Index, MatchesExhaustiveScan) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const std::size_t n = seed == 0 ? 1000 : 50, k = 5, d = 3;
        std::vector<std::vector<double>> xs;
        for (std::size_t i = 0; i < n; ++i) xs.push_back(standard_normal_vector(rng, d));
        const auto idx = build_index(points(xs), identity_embedding, k);
        for (std::size_t q = 0; q < n; ++q) {
            std::vector<std::pair<double, std::size_t>> all;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == q) continue;
                const double s = std::inner_product(xs[q].begin(), xs[q].end(), xs[j].begin(), 0.0) /
                                 std::sqrt(std::inner_product(xs[q].begin(), xs[q].end(), xs[q].begin(), 0.0) *
                                           std::inner_product(xs[j].begin(), xs[j].end(), xs[j].begin(), 0.0));
                all.push_back({-s, j});
            }
            std::sort(all.begin(), all.end());
            const auto& nb = idx.neighbors(q);
            ASSERT_EQ(nb.size(), k);
            for (std::size_t j = 0; j < k; ++j) {
                EXPECT_EQ(nb[j].id, all[j].second) << "seed " << seed << " query " << q;
                EXPECT_NEAR(nb[j].similarity, -all[j].first, 1e-12);
            }
        }
    }
}

TEST(Index, Contracts) {
    EXPECT_THROW(build_index(points({{1, 0}}), identity_embedding, 1), ContractError);
    EXPECT_THROW(build_index(points({{1, 0}, {0, 1}}), identity_embedding, 2), ContractError);
    EXPECT_THROW(build_index(points({{1, 0}, {0, 1}}), identity_embedding, 0), ContractError);
    EXPECT_THROW(build_index(points({{1, 0}, {0, 0}, {1, 1}}), identity_embedding, 1), ContractError);
    const auto idx = build_index(points({{1, 0}, {0, 1}}), identity_embedding, 1);
    Rng rng(0);
    EXPECT_THROW(idx.sample(2, rng), ContractError);
}

TEST(Weights, AlreadyNormalized) {
    const std::vector<double> s{0.5, 0.3, 0.2};
    const auto w = neighbor_weights(s);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(w[j], s[j]);
}

TEST(Weights, EqualSimilaritiesSplitEvenly) {
    const auto w = neighbor_weights(std::vector<double>{0.4, 0.4});
    EXPECT_DOUBLE_EQ(w[0], 0.5);
    EXPECT_DOUBLE_EQ(w[1], 0.5);
}

TEST(Weights, NonPositiveDroppedAndUniformFallback) {
    const auto w = neighbor_weights(std::vector<double>{0.6, -0.2, 0.2, 0.0});
    EXPECT_DOUBLE_EQ(w[0], 0.75);
    EXPECT_EQ(w[1], 0.0);
    EXPECT_DOUBLE_EQ(w[2], 0.25);
    EXPECT_EQ(w[3], 0.0);
    const auto u = neighbor_weights(std::vector<double>{-0.1, -0.5, 0.0});
    for (double v : u) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Weights, NonNegativeAndSumToOneForEveryQuery) {
    Rng rng(3);
    std::vector<std::vector<double>> xs;
    for (int i = 0; i < 60; ++i) xs.push_back(standard_normal_vector(rng, 2));
    const auto idx = build_index(points(xs), identity_embedding, 7);
    for (std::size_t q = 0; q < idx.size(); ++q) {
        double total = 0.0;
        for (double w : idx.weights(q)) {
            EXPECT_GE(w, 0.0);
            EXPECT_LE(w, 1.0);
            total += w;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
    }
}

// 1e5 categorical draws: every empirical frequency within 3 sigma.
TEST(Sampling, EmpiricalFrequenciesMatchWeights) {
    const std::vector<double> w{0.5, 0.3, 0.15, 0.05};
    Rng rng(17);
    const int n = 100000;
    std::vector<int> hits(w.size(), 0);
    for (int k = 0; k < n; ++k) ++hits[sample_categorical(w, rng)];
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double sigma = std::sqrt(n * w[j] * (1 - w[j]));
        EXPECT_LT(std::abs(hits[j] - n * w[j]), 3 * sigma) << "bucket " << j;
    }
}

TEST(Sampling, DrawReportsSimilarityWeightAndIdentity) {
    const auto data = points({{1, 0}, {1, 0.1}, {0.9, -0.2}, {-1, 0.05}}, {"A", "A", "B", "B"});
    const auto idx = build_index(data, identity_embedding, 2);
    Rng rng(1);
    for (int k = 0; k < 200; ++k) {
        const auto d = sample_neighbor(idx, 0, rng);
        EXPECT_TRUE(d.neighbor == 1 || d.neighbor == 2);
        EXPECT_EQ(d.same_identity, data.same_identity(0, d.neighbor));
        EXPECT_NEAR(d.similarity, cosine_similarity(data[0].x0, data[d.neighbor].x0), 1e-15);
        EXPECT_GT(d.weight, 0.0);
    }
}

TEST(Sampling, ZeroWeightNeighborIsNeverDrawn) {
    // Query 0's two neighbors have similarities 0.6 and -1.
    const auto idx = build_index(points({{1, 0}, {0.6, 0.8}, {-1, 0}}), identity_embedding, 2);
    Rng rng(2);
    for (int k = 0; k < 1000; ++k) EXPECT_EQ(idx.sample(0, rng).neighbor, 1u);
}

TEST(ImgSimilarity, WorkedExample) {
    EXPECT_EQ(img_similarity(0.4, true, 1, 1), 0.4);
    EXPECT_DOUBLE_EQ(img_similarity(0.4, false, 1, 1), 0.16);
}

TEST(ImgSimilarity, NonPositiveGivesZeroAndOneStaysOne) {
    EXPECT_EQ(img_similarity(0.0, true, 1, 1), 0.0);
    EXPECT_EQ(img_similarity(-0.7, false, 1, 1), 0.0);
    EXPECT_EQ(img_similarity(1.0, false, 2.5, 3.0), 1.0);
    EXPECT_EQ(img_similarity(1.0, true, 2.5, 3.0), 1.0);
}

TEST(ImgSimilarity, MonotoneAndSameIdentityDominates) {
    Rng rng(4);
    for (int k = 0; k < 1000; ++k) {
        const double a1 = 0.1 + 3 * uniform01(rng), a2 = 0.1 + 3 * uniform01(rng);
        const double s1 = 2 * uniform01(rng) - 1, s2 = 2 * uniform01(rng) - 1;
        const double lo = std::min(s1, s2), hi = std::max(s1, s2);
        for (bool same : {true, false}) EXPECT_LE(img_similarity(lo, same, a1, a2), img_similarity(hi, same, a1, a2));
        const double s = uniform01(rng);
        EXPECT_GE(img_similarity(s, true, a1, a2), img_similarity(s, false, a1, a2));
    }
}

TEST(IndexCsv, HasOneRowPerQueryNeighbor) {
    const auto idx = build_index(points({{1, 0}, {0.6, 0.8}, {-1, 0}}), identity_embedding, 2);
    std::ostringstream os;
    write_index_csv(os, idx);
    const std::string text = os.str();
    EXPECT_EQ(text.rfind("query_id,neighbor_id,s,w\n", 0), 0u);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 3 * 2);
}
