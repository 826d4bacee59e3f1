#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "magnet/selection.hpp"
#include "test_util.hpp"

namespace magnet {
namespace {

ProbMap pixel_map(std::vector<float> px) {
    const int c = static_cast<int>(px.size());
    return ProbMap(1, 1, c, std::move(px));
}

ScoreStrategy product_k1() { return ScoreStrategy{ScoreKind::product, std::nullopt, 1}; }

TEST(Uncertainty, Examples) {
    EXPECT_EQ(uncertainty_map(pixel_map({1.0f, 0.0f, 0.0f})).at(0, 0), 0.0f);
    EXPECT_EQ(uncertainty_map(pixel_map({0.25f, 0.25f, 0.25f, 0.25f})).at(0, 0), 1.0f);
    EXPECT_NEAR(uncertainty_map(pixel_map({0.5f, 0.3f, 0.2f})).at(0, 0), 0.8f, 1e-6f);
}

TEST(Uncertainty, RangeAndExtremes) {
    std::mt19937 rng(10);
    for (int trial = 0; trial < 20; ++trial) {
        const auto m = testing::random_prob_map(rng, 6, 7, 2 + trial % 5);
        const auto u = uncertainty_map(m);
        for (int r = 0; r < m.height(); ++r) {
            for (int c = 0; c < m.width(); ++c) {
                std::vector<float> px(m.pixel(r, c).begin(), m.pixel(r, c).end());
                std::sort(px.rbegin(), px.rend());
                EXPECT_GE(u.at(r, c), 0.0f);
                EXPECT_LE(u.at(r, c), 1.0f);
                EXPECT_NEAR(u.at(r, c), 1.0f - (px[0] - px[1]), 1e-6f);
            }
        }
    }
    EXPECT_EQ(uncertainty_map(pixel_map({0.4f, 0.4f, 0.2f})).at(0, 0), 1.0f);
}

TEST(MedianBlur, Examples) {
    std::mt19937 rng(11);
    const auto m = testing::random_scalar_map(rng, 5, 6);
    EXPECT_EQ(median_blur(m, 1), m);
    const ScalarMap flat(4, 5, 0.3f);
    EXPECT_EQ(median_blur(flat, 3), flat);
    EXPECT_EQ(median_blur(flat, 5), flat);
    ScalarMap spike(3, 3, 0.0f);
    spike.at(1, 1) = 1.0f;
    EXPECT_EQ(median_blur(spike, 3), ScalarMap(3, 3, 0.0f));
    EXPECT_THROW(median_blur(m, 2), EvenKernel);
    EXPECT_THROW(median_blur(m, 0), EvenKernel);
}

// Independent median: full sort of the replicated neighbourhood.
ScalarMap median_oracle(const ScalarMap& m, int kernel) {
    ScalarMap out(m.height(), m.width(), 0.0f);
    const int rad = kernel / 2;
    for (int r = 0; r < m.height(); ++r) {
        for (int c = 0; c < m.width(); ++c) {
            std::vector<float> v;
            for (int dr = -rad; dr <= rad; ++dr) {
                for (int dc = -rad; dc <= rad; ++dc) {
                    v.push_back(m.at(std::clamp(r + dr, 0, m.height() - 1), std::clamp(c + dc, 0, m.width() - 1)));
                }
            }
            std::sort(v.begin(), v.end());
            out.at(r, c) = v[v.size() / 2];
        }
    }
    return out;
}

TEST(MedianBlur, MatchesSortOracleAndCommutesWithAffine) {
    std::mt19937 rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        const auto m = testing::random_tied_scalar_map(rng, 3 + trial, 9 - trial % 4, 8);
        for (int k : {3, 5}) {
            const auto blurred = median_blur(m, k);
            EXPECT_EQ(blurred, median_oracle(m, k));
            // a = 2, b = 0.25 are exact in float for these dyadic levels.
            ScalarMap mapped = m;
            for (float& v : mapped.values()) v = 2.0f * v + 0.25f;
            ScalarMap expected = blurred;
            for (float& v : expected.values()) v = 2.0f * v + 0.25f;
            EXPECT_EQ(median_blur(mapped, k), expected);
        }
    }
}

TEST(Score, Examples) {
    std::mt19937 rng(13);
    const auto ru = testing::random_scalar_map(rng, 4, 4);
    EXPECT_EQ(score_map(ScalarMap(4, 4, 0.0f), ru, ScoreStrategy{}), ScalarMap(4, 4, 0.0f));
    const auto yu = testing::random_scalar_map(rng, 4, 4);
    EXPECT_EQ(score_map(yu, ScalarMap(4, 4, 0.0f), product_k1()), yu);
    EXPECT_NEAR(score_map(ScalarMap(1, 1, 0.8f), ScalarMap(1, 1, 0.25f), product_k1()).at(0, 0), 0.6f, 1e-6f);
}

TEST(Score, Strategies) {
    const ScalarMap yu(1, 1, 0.8f);
    const ScalarMap ru(1, 1, 0.25f);
    EXPECT_NEAR(score_map(yu, ru, {ScoreKind::uncertainty_only, std::nullopt, 1}).at(0, 0), 0.8f, 1e-6f);
    EXPECT_NEAR(score_map(yu, ru, {ScoreKind::certainty_only, std::nullopt, 1}).at(0, 0), 0.75f, 1e-6f);
    EXPECT_NEAR(score_map(yu, ru, {ScoreKind::linear, 0.5f, 1}).at(0, 0), 0.775f, 1e-6f);
    EXPECT_NEAR(score_map(yu, ru, {ScoreKind::linear, 1.0f, 1}).at(0, 0), 0.8f, 1e-6f);
    EXPECT_THROW(score_map(yu, ru, {ScoreKind::linear, std::nullopt, 1}), InvalidArgument);
    EXPECT_THROW(score_map(yu, ru, {ScoreKind::linear, 1.5f, 1}), InvalidArgument);
    EXPECT_THROW(score_map(yu, ScalarMap(2, 1, 0.0f), product_k1()), DimMismatch);
}

TEST(Score, ClassPermutationInvariance) {
    std::mt19937 rng(14);
    for (int trial = 0; trial < 10; ++trial) {
        const int c = 3 + trial % 3;
        const auto y = testing::random_prob_map(rng, 5, 5, c);
        const auto r = testing::random_prob_map(rng, 5, 5, c);
        std::vector<int> perm(static_cast<std::size_t>(c));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        auto permute = [&](const ProbMap& m) {
            ProbMap out(m.height(), m.width(), c, 0.0f);
            for (int i = 0; i < m.height(); ++i) {
                for (int j = 0; j < m.width(); ++j) {
                    for (int k = 0; k < c; ++k) out.at(i, j, perm[static_cast<std::size_t>(k)]) = m.at(i, j, k);
                }
            }
            return out;
        };
        const ScoreStrategy s{};
        EXPECT_EQ(score_map(uncertainty_map(y), uncertainty_map(r), s),
                  score_map(uncertainty_map(permute(y)), uncertainty_map(permute(r)), s));
    }
}

TEST(TopK, Examples) {
    std::mt19937 rng(15);
    EXPECT_TRUE(select_top_k(testing::random_scalar_map(rng, 3, 3), 0).empty());
    EXPECT_EQ(select_top_k(ScalarMap(2, 2, 0.5f), 3), (std::vector<PixelCoord>{{0, 0}, {0, 1}, {1, 0}}));
    EXPECT_EQ(select_top_k(ScalarMap(2, 2, 0.5f), 99).size(), 4u);
}

// Brute force: sort every pixel by (score desc, row-major index asc).
std::vector<PixelCoord> top_k_oracle(const ScalarMap& q, std::size_t k) {
    std::vector<std::pair<float, int>> all;
    for (int r = 0; r < q.height(); ++r) {
        for (int c = 0; c < q.width(); ++c) all.emplace_back(q.at(r, c), r * q.width() + c);
    }
    std::sort(all.begin(), all.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    std::vector<PixelCoord> out;
    for (std::size_t i = 0; i < std::min(k, all.size()); ++i) out.push_back({all[i].second / q.width(), all[i].second % q.width()});
    return out;
}

TEST(TopK, MatchesSortOracle) {
    std::mt19937 rng(16);
    const auto q = testing::random_scalar_map(rng, 8, 8);
    EXPECT_EQ(select_top_k(q, 10), top_k_oracle(q, 10));
    for (int h = 1; h <= 16; h += 3) {
        for (int w = 1; w <= 16; w += 5) {
            const auto tied = testing::random_tied_scalar_map(rng, h, w, 4);
            for (std::size_t k : {std::size_t{1}, std::size_t{7}, static_cast<std::size_t>(h * w)}) {
                EXPECT_EQ(select_top_k(tied, k), top_k_oracle(tied, k));
            }
        }
    }
}

TEST(TopK, ProductStrategyEqualsElementwiseProductOracle) {
    std::mt19937 rng(17);
    for (int h = 1; h <= 16; ++h) {
        const int w = 17 - h;
        const auto y = testing::random_prob_map(rng, h, w, 3);
        const auto r = testing::random_prob_map(rng, h, w, 3);
        const auto yu = uncertainty_map(y);
        const auto ru = uncertainty_map(r);
        ScalarMap product(h, w, 0.0f);
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < w; ++j) product.at(i, j) = yu.at(i, j) * (1.0f - ru.at(i, j));
        }
        const auto k = static_cast<std::size_t>(h * w / 3);
        EXPECT_EQ(select_top_k(score_map(yu, ru, product_k1()), k), top_k_oracle(product, k));
    }
}

TEST(Replace, Examples) {
    std::mt19937 rng(18);
    const auto y = testing::random_prob_map(rng, 4, 5, 3);
    const auto r = testing::random_prob_map(rng, 4, 5, 3);
    EXPECT_EQ(selective_replace(y, r, {}), y);
    std::vector<PixelCoord> all;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 5; ++j) all.push_back({i, j});
    }
    EXPECT_EQ(selective_replace(y, r, all), r);
    const auto one = selective_replace(y, r, {{2, 3}});
    int differing = 0;
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 5; ++j) {
            const auto a = one.pixel(i, j);
            const auto b = y.pixel(i, j);
            if (!std::equal(a.begin(), a.end(), b.begin())) ++differing;
        }
    }
    EXPECT_EQ(differing, 1);
    EXPECT_THROW(selective_replace(y, r, {{4, 0}}), OutOfBounds);
    EXPECT_THROW(selective_replace(y, testing::random_prob_map(rng, 4, 5, 2), {}), DimMismatch);
}

TEST(Replace, TouchesOnlyListedPixels) {
    std::mt19937 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        const auto y = testing::random_prob_map(rng, 6, 6, 4);
        const auto r = testing::random_prob_map(rng, 6, 6, 4);
        const auto points = select_top_k(testing::random_scalar_map(rng, 6, 6), static_cast<std::size_t>(trial));
        const auto out = selective_replace(y, r, points);
        for (int i = 0; i < 6; ++i) {
            for (int j = 0; j < 6; ++j) {
                const bool listed = std::find(points.begin(), points.end(), PixelCoord{i, j}) != points.end();
                const auto expect = listed ? r.pixel(i, j) : y.pixel(i, j);
                const auto got = out.pixel(i, j);
                EXPECT_TRUE(std::equal(got.begin(), got.end(), expect.begin()));
            }
        }
    }
}

}  // namespace
}  // namespace magnet
