#include <gtest/gtest.h>

#include <bit>
#include <numeric>

#include "helpers.hpp"

using namespace adaspa;
using testutil::max_abs;
using testutil::tensor;

namespace {

SparsityConfig plain(bool row_wise = false) {
    SparsityConfig c;
    c.text_sink = false;
    c.row_wise = row_wise;
    c.head_adaptive = false;
    return c;
}

BlockScoreMatrix<double> random_scores(std::size_t heads, const BlockGrid& grid, std::uint64_t seed) {
    BlockScoreMatrix<double> s(heads, grid);
    const CounterRng rng(seed);
    std::size_t c = 0;
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t p = 0; p < grid.blocks(); ++p)
            for (std::size_t q = 0; q < grid.blocks(); ++q) s(h, p, q) = rng.uniform(c++);
    return s;
}

}  // namespace

TEST(FusedSearch, MatchesBlockSumOracle) {
    const auto q = tensor(1, 16, 4, 1), k = tensor(1, 16, 4, 2), v = tensor(1, 16, 4, 3);
    const BlockGrid grid(16, 4);
    const auto fused = fused_online_search(q, k, v, grid);
    const auto oracle = block_sum_oracle(dense_attention(q, k, v).weights, grid);
    EXPECT_LE(max_abs(fused.scores, oracle), 1e-9);
    EXPECT_NEAR(fused.scores.total(0), 16.0, 1e-6);
}

TEST(FusedSearch, RelativeErrorAcrossSeedsAndBlockSizes) {
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const std::size_t L = 100 + 7 * s;
        const std::size_t H = 1 + s % 4;
        const auto q = tensor(H, L, 16, 4 * s), k = tensor(H, L, 16, 4 * s + 1), v = tensor(H, L, 16, 4 * s + 2);
        const auto w = dense_attention(q, k, v).weights;
        for (std::size_t b : {8u, 32u, 64u}) {
            const BlockGrid grid(L, b);
            const auto fused = fused_online_search(q, k, v, grid);
            const auto oracle = block_sum_oracle(w, grid);
            for (std::size_t n = 0; n < oracle.values().size(); ++n) {
                const double e = oracle.values()[n];
                worst = std::max(worst, std::abs(fused.scores.values()[n] - e) / e);
            }
            for (std::size_t h = 0; h < H; ++h) EXPECT_NEAR(fused.scores.total(h), static_cast<double>(L), 1e-6);
        }
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(FusedSearch, UniformLogits) {
    const std::size_t L = 24, B = 4;
    const auto q = tensor(1, L, 4, 1, 0.0), k = tensor(1, L, 4, 2), v = tensor(1, L, 4, 3);
    const auto fused = fused_online_search(q, k, v, BlockGrid(L, B));
    for (double x : fused.scores.values()) EXPECT_NEAR(x, static_cast<double>(B * B) / L, 1e-12);
}

TEST(FusedSearch, GridMustMatch) {
    const auto t = tensor(1, 16, 4, 1);
    EXPECT_THROW(fused_online_search(t, t, t, BlockGrid(15, 4)), std::invalid_argument);
}

TEST(CachedSearch, BitwiseEqualWithTrueLse) {
    const auto q = tensor(3, 90, 8, 1), k = tensor(3, 90, 8, 2), v = tensor(3, 90, 8, 3);
    const BlockGrid grid(90, 16);
    const auto fused = fused_online_search(q, k, v, grid);
    const auto cached = lse_cached_search(q, k, fused.flash.lse, grid);
    EXPECT_TRUE(cached == fused.scores);
}

TEST(CachedSearch, ShiftScalesScoresAndKeepsMask) {
    const auto q = tensor(2, 64, 8, 4, 2.0), k = tensor(2, 64, 8, 5, 2.0), v = tensor(2, 64, 8, 6);
    const BlockGrid grid(64, 8);
    const auto layout = make_layout(1, 8, 8, 0);
    const auto fused = fused_online_search(q, k, v, grid);
    for (double delta : {-3.0, 0.7, 5.0}) {
        LseVector<double> shifted = fused.flash.lse;
        for (double& x : shifted.values()) x += delta;
        const auto cached = lse_cached_search(q, k, shifted, grid);
        for (std::size_t n = 0; n < cached.values().size(); ++n)
            EXPECT_NEAR(cached.values()[n], fused.scores.values()[n] * std::exp(-delta),
                        1e-12 * std::max(1.0, std::exp(-delta)));
        for (bool rw : {false, true}) {
            EXPECT_TRUE(select_topk_mask(cached, 0.8, layout, plain(rw)) ==
                        select_topk_mask(fused.scores, 0.8, layout, plain(rw)));
        }
    }
}

TEST(CachedSearch, RejectsBadLse) {
    const auto q = tensor(1, 16, 4, 1);
    const BlockGrid grid(16, 4);
    LseVector<double> lse(1, 16, 0.0);
    lse(0, 3) = std::numeric_limits<double>::infinity();
    EXPECT_THROW(lse_cached_search(q, q, lse, grid), std::invalid_argument);
    EXPECT_THROW(lse_cached_search(q, q, LseVector<double>(1, 15), grid), std::invalid_argument);
}

TEST(TopkMask, ZeroSparsityKeepsAll) {
    const BlockGrid grid(20, 4);
    const auto scores = random_scores(2, grid, 1);
    for (bool rw : {false, true}) {
        const auto m = select_topk_mask(scores, 0.0, make_layout(1, 4, 5, 0), plain(rw));
        EXPECT_EQ(m.kept_count(0), grid.cells());
        EXPECT_EQ(m.kept_count(1), grid.cells());
    }
}

TEST(TopkMask, TwoByTwoGlobal) {
    const BlockGrid grid(2, 1);
    BlockScoreMatrix<double> s(1, grid);
    s(0, 0, 0) = 4;
    s(0, 0, 1) = 1;
    s(0, 1, 0) = 2;
    s(0, 1, 1) = 3;
    const auto m = select_topk_mask(s, 0.5, make_layout(1, 1, 2, 0), plain());
    EXPECT_TRUE(m(0, 0, 0));
    EXPECT_TRUE(m(0, 1, 1));
    EXPECT_EQ(m.kept_count(0), 2u);
}

TEST(TopkMask, RowWiseTiesLowestColumn) {
    const BlockGrid grid(4, 1);
    BlockScoreMatrix<double> s(1, grid);
    for (std::size_t q = 0; q < 4; ++q) s(0, 0, q) = 1.0;  // tied row
    s(0, 1, 2) = 5.0;
    const auto m = select_topk_mask(s, 0.75, make_layout(1, 1, 4, 0), plain(true));
    for (std::size_t p = 0; p < 4; ++p) EXPECT_EQ(m.kept_in_row(0, p), 1u);
    EXPECT_TRUE(m(0, 0, 0));
    EXPECT_TRUE(m(0, 1, 2));
    EXPECT_TRUE(m(0, 2, 0));
}

TEST(TopkMask, TextSinkAlwaysKept) {
    const auto layout = make_layout(2, 4, 4, 8);  // L = 40, text from 32
    const BlockGrid grid(40, 6);                   // block 5 spans 30..35 and touches text
    const auto scores = random_scores(2, grid, 3);
    SparsityConfig cfg = plain(true);
    cfg.text_sink = true;
    const auto m = select_topk_mask(scores, 0.9, layout, cfg);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t p = 0; p < grid.blocks(); ++p)
            for (std::size_t q = 0; q < grid.blocks(); ++q)
                if (p >= 5 || q >= 5) EXPECT_TRUE(m(h, p, q));
    EXPECT_TRUE(m.is_sink_block(5));
    EXPECT_FALSE(m.is_sink_block(4));
    EXPECT_TRUE(m.text_sink());
    EXPECT_TRUE(m.row_wise());
}

TEST(TopkMask, ZeroRowBudgetRejected) {
    const BlockGrid grid(4, 1);
    const auto scores = random_scores(1, grid, 1);
    try {
        select_topk_mask(scores, 0.9, make_layout(1, 1, 4, 0), plain(true));
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("row 0"), std::string::npos);
    }
    EXPECT_THROW(select_topk_mask(scores, 1.0, make_layout(1, 1, 4, 0), plain()), std::invalid_argument);
}

TEST(TopkMask, GlobalOptimalityByEnumeration) {
    for (std::size_t n : {3u, 4u}) {
        const BlockGrid grid(n, 1);
        const auto layout = make_layout(1, 1, n, 0);
        for (std::uint64_t seed = 0; seed < 10; ++seed) {
            const auto s = random_scores(1, grid, 50 + seed);
            for (std::size_t budget = 1; budget <= 6; ++budget) {
                const double sp = 1.0 - static_cast<double>(budget) / static_cast<double>(n * n);
                const auto m = select_topk_mask(s, sp, layout, plain());
                ASSERT_EQ(m.kept_count(0), budget);
                double got = 0.0;
                for (std::size_t c = 0; c < n * n; ++c)
                    if (m(0, c / n, c % n)) got += s.values()[c];
                double best = 0.0;
                for (std::uint32_t bits = 0; bits < (1u << (n * n)); ++bits) {
                    if (static_cast<std::size_t>(std::popcount(bits)) != budget) continue;
                    double sum = 0.0;
                    for (std::size_t c = 0; c < n * n; ++c)
                        if (bits & (1u << c)) sum += s.values()[c];
                    best = std::max(best, sum);
                }
                EXPECT_EQ(got, best);
            }
        }
    }
}

TEST(TopkMask, RecallMonotoneInSparsity) {
    const BlockGrid grid(96, 8);
    const auto layout = make_layout(1, 8, 12, 0);
    const auto scores = random_scores(2, grid, 77);
    for (bool rw : {false, true}) {
        std::vector<double> previous(2, 1.0);
        for (double s = 0.0; s < 0.95; s += 0.05) {
            const auto r = recall_from_scores(scores, select_topk_mask(scores, s, layout, plain(rw)));
            for (std::size_t h = 0; h < 2; ++h) {
                EXPECT_LE(r[h], previous[h] + 1e-12);
                previous[h] = r[h];
            }
        }
    }
}

TEST(TopkMask, KeptFractionTracksBudget) {
    const BlockGrid grid(160, 16);
    const auto layout = make_layout(1, 10, 16, 0);
    const auto scores = random_scores(3, grid, 5);
    for (double s : {0.5, 0.75, 0.8, 0.9}) {
        const auto row = select_topk_mask(scores, s, layout, plain(true));
        const auto glob = select_topk_mask(scores, s, layout, plain(false));
        for (std::size_t h = 0; h < 3; ++h) {
            const double frac_row = static_cast<double>(row.kept_count(h)) / grid.cells();
            const double frac_glob = static_cast<double>(glob.kept_count(h)) / grid.cells();
            EXPECT_NEAR(frac_row, 1.0 - s, 1.0 / grid.blocks());
            EXPECT_NEAR(frac_glob, 1.0 - s, 1.0 / grid.cells());
        }
    }
}

TEST(RecallFromScores, MatchesElementRecall) {
    const auto q = tensor(2, 32, 8, 1, 2.0), k = tensor(2, 32, 8, 2, 2.0), v = tensor(2, 32, 8, 3);
    const BlockGrid grid(32, 8);
    const auto dense = dense_attention(q, k, v);
    const auto scores = fused_online_search(q, k, v, grid).scores;
    const auto mask = select_topk_mask(scores, 0.6, make_layout(1, 4, 8, 0), plain());
    const auto a = recall_from_scores(scores, mask);
    const auto b = recall(dense.weights, mask);
    for (std::size_t h = 0; h < 2; ++h) EXPECT_NEAR(a[h], b[h], 1e-9);
    EXPECT_EQ(recall_from_scores(scores, BlockMask(2, grid, true))[0], 1.0);
    EXPECT_EQ(recall_from_scores(scores, BlockMask(2, grid, false))[1], 0.0);
}

TEST(HeadAdaptive, TierArithmetic) {
    EXPECT_DOUBLE_EQ(raised_tier(0.8), 0.9);
    EXPECT_DOUBLE_EQ(lowered_tier(0.8), 0.7);
    EXPECT_DOUBLE_EQ(raised_tier(0.9), 0.95);
    EXPECT_DOUBLE_EQ(lowered_tier(0.9), 0.85);
}

TEST(HeadAdaptive, FourHeadExample) {
    // One block row of 10 cells; head h keeps its largest cell, whose share
    // of the row sets its recall to (0.95, 0.9, 0.5, 0.4) at s = 0.9.
    const BlockGrid grid(10, 1);
    const auto layout = make_layout(1, 1, 10, 0);
    BlockScoreMatrix<double> s(4, grid);
    const double top[] = {0.95, 0.9, 0.5, 0.4};
    for (std::size_t h = 0; h < 4; ++h)
        for (std::size_t p = 0; p < 10; ++p)
            for (std::size_t q = 0; q < 10; ++q) s(h, p, q) = q == p ? top[h] : (1.0 - top[h]) / 9.0;
    const auto recalls = recall_from_scores(s, select_topk_mask(s, 0.9, layout, plain(true)));
    for (std::size_t h = 0; h < 4; ++h) EXPECT_NEAR(recalls[h], top[h], 1e-12);

    const auto tiers = head_adaptive_sparsities(s, 0.9, 0.8, layout, plain(true));
    EXPECT_DOUBLE_EQ(tiers[0], raised_tier(0.9));
    EXPECT_DOUBLE_EQ(tiers[1], raised_tier(0.9));
    EXPECT_DOUBLE_EQ(tiers[2], lowered_tier(0.9));
    EXPECT_DOUBLE_EQ(tiers[3], lowered_tier(0.9));
    EXPECT_NEAR(std::accumulate(tiers.begin(), tiers.end(), 0.0) / 4.0, 0.9, 1e-15);
}

TEST(HeadAdaptive, CappedAtHalfTheHeads) {
    const BlockGrid grid(10, 1);
    const auto layout = make_layout(1, 1, 10, 0);
    BlockScoreMatrix<double> s(3, grid);
    for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t p = 0; p < 10; ++p) s(h, p, p) = 1.0;  // every head has recall 1
    const auto tiers = head_adaptive_sparsities(s, 0.8, 0.8, layout, plain(true));
    EXPECT_DOUBLE_EQ(tiers[0], 0.9);  // ties: lower head first
    EXPECT_DOUBLE_EQ(tiers[1], 0.8);
    EXPECT_DOUBLE_EQ(tiers[2], 0.7);
}

TEST(HeadAdaptive, RejectsLowBase) {
    const BlockGrid grid(4, 1);
    EXPECT_THROW(head_adaptive_sparsities(random_scores(2, grid, 1), 0.3, 0.8, make_layout(1, 1, 4, 0), plain()),
                 std::invalid_argument);
}

TEST(HeadAdaptive, GlobalBudgetConservation) {
    const BlockGrid grid(256, 16);
    const auto layout = make_layout(1, 15, 16, 16);
    SparsityConfig cfg = plain(false);
    cfg.text_sink = true;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        BlockScoreMatrix<double> s(4, grid);
        const CounterRng rng(seed);
        std::size_t c = 0;
        for (std::size_t h = 0; h < 4; ++h)
            for (std::size_t p = 0; p < grid.blocks(); ++p)
                for (std::size_t q = 0; q < grid.blocks(); ++q) s(h, p, q) = std::pow(rng.uniform(c++), 1.0 + 3.0 * h);
        for (double base : {0.5, 0.8, 0.9}) {
            const auto tiers = head_adaptive_sparsities(s, base, 0.5, layout, cfg);
            const auto adaptive = select_topk_mask(s, tiers, layout, cfg);
            const auto uniform = select_topk_mask(s, base, layout, cfg);
            std::size_t a = 0, u = 0;
            for (std::size_t h = 0; h < 4; ++h) {
                a += adaptive.kept_nonsink_count(h);
                u += uniform.kept_nonsink_count(h);
            }
            EXPECT_LE(a > u ? a - u : u - a, 4u) << "seed " << seed << " base " << base;
        }
    }
}

TEST(SearchMask, UniformWhenAdaptiveOff) {
    const BlockGrid grid(64, 8);
    const auto layout = make_layout(1, 8, 8, 0);
    const auto scores = random_scores(4, grid, 2);
    SparsityConfig cfg = plain(true);
    const auto m = search_mask(scores, layout, cfg);
    for (std::size_t h = 0; h < 4; ++h) EXPECT_DOUBLE_EQ(m.sparsity(h), 0.8);
    cfg.head_adaptive = true;
    cfg.recall_threshold = 0.01;
    const auto a = search_mask(scores, layout, cfg);
    double mean = 0.0;
    for (std::size_t h = 0; h < 4; ++h) mean += a.sparsity(h) / 4.0;
    EXPECT_NEAR(mean, 0.8, 1e-15);
}

TEST(SparsityConfig, Validation) {
    SparsityConfig c;
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.block_size, 64u);
    EXPECT_DOUBLE_EQ(c.sparsity, 0.8);
    EXPECT_DOUBLE_EQ(c.recall_threshold, 0.8);
    c.sparsity = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.sparsity = 0.5;
    c.block_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c.block_size = 8;
    c.recall_threshold = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}
