#include <gtest/gtest.h>

#include <numeric>

#include "adaspa/core.hpp"

using namespace adaspa;

TEST(Layout, LengthFromFrames) {
    const auto l = make_layout(13, 45, 80, 224);
    EXPECT_EQ(l.length(), 47024u);
    EXPECT_EQ(l.text_begin(), 46800u);
    EXPECT_EQ(make_layout(1, 1, 1, 0).length(), 1u);
}

TEST(Layout, TextBoundary) {
    const auto l = make_layout(2, 4, 4, 8);
    EXPECT_EQ(l.length(), 40u);
    EXPECT_EQ(l.text_begin(), 32u);
    EXPECT_FALSE(l.is_text(31));
    EXPECT_TRUE(l.is_text(32));
    EXPECT_TRUE(l.is_text(39));
    EXPECT_EQ(l.frame_of(17), 1u);
}

TEST(Layout, RejectsEmptyVideo) {
    EXPECT_THROW(make_layout(0, 4, 4, 8), std::invalid_argument);
    EXPECT_THROW(make_layout(1, 0, 4, 8), std::invalid_argument);
    EXPECT_THROW(make_layout(1, 4, 0, 8), std::invalid_argument);
}

TEST(BlockIndex, Examples) {
    EXPECT_EQ(block_index_of(0, 64, 100).block, 0u);
    EXPECT_EQ(block_index_of(0, 64, 100).offset, 0u);
    EXPECT_EQ(block_index_of(63, 64, 100).block, 0u);
    EXPECT_EQ(block_index_of(63, 64, 100).offset, 63u);
    EXPECT_EQ(block_index_of(64, 64, 100).block, 1u);
    EXPECT_EQ(block_index_of(64, 64, 100).offset, 0u);
    EXPECT_THROW(block_index_of(100, 64, 100), std::out_of_range);
}

TEST(BlockIndex, RoundTrip) {
    for (std::size_t b : {1u, 3u, 7u, 64u}) {
        const BlockGrid grid(131, b);
        for (std::size_t t = 0; t < 131; ++t) {
            const auto idx = block_index_of(t, grid);
            EXPECT_EQ(idx.block * b + idx.offset, t);
            EXPECT_LT(idx.offset, grid.valid_length(idx.block));
        }
    }
}

TEST(BlockGrid, TrailingBlock) {
    const BlockGrid grid(100, 32);
    EXPECT_EQ(grid.blocks(), 4u);
    EXPECT_EQ(grid.valid_length(3), 4u);
    EXPECT_LT((grid.blocks() - 1) * 32, grid.length());
    EXPECT_LE(grid.length(), grid.blocks() * 32);
    EXPECT_EQ(grid.cell_area(3, 0), 4u * 32u);
    EXPECT_THROW(BlockGrid(0, 4), std::invalid_argument);
    EXPECT_THROW(BlockGrid(4, 0), std::invalid_argument);
}

TEST(SeededTensor, Deterministic) {
    const auto a = seeded_tensor(2, 8, 4, 7);
    const auto b = seeded_tensor(2, 8, 4, 7);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, seeded_tensor(2, 8, 4, 8));
}

TEST(SeededTensor, ZeroScale) {
    const auto t = seeded_tensor(2, 8, 4, 7, 0.0);
    for (double x : t.values()) EXPECT_EQ(x, 0.0);
}

TEST(SeededTensor, SampleMean) {
    const auto t = seeded_tensor(2, 8, 4, 7);
    const double mean = std::accumulate(t.values().begin(), t.values().end(), 0.0) / static_cast<double>(t.size());
    EXPECT_LT(std::abs(mean), 0.5);
    EXPECT_TRUE(t.all_finite());
}

TEST(SeededTensor, StandardNormalMoments) {
    const auto t = seeded_tensor(4, 256, 32, 11);
    double sum = 0.0, sq = 0.0;
    for (double x : t.values()) {
        sum += x;
        sq += x * x;
    }
    const double n = static_cast<double>(t.size());
    EXPECT_NEAR(sum / n, 0.0, 0.03);
    EXPECT_NEAR(sq / n, 1.0, 0.03);
}

TEST(SeededTensor, PinnedValues) {
    // SplitMix64 reference: first output for state 0.
    EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFull);
    const CounterRng rng(5);
    EXPECT_EQ(rng.bits(3), splitmix64(5 ^ splitmix64(3)));
}

TEST(SeededTensor, FloatMatchesDouble) {
    const auto d = seeded_tensor<double>(1, 4, 4, 3);
    const auto f = seeded_tensor<float>(1, 4, 4, 3);
    for (std::size_t n = 0; n < d.size(); ++n) EXPECT_EQ(f.values()[n], static_cast<float>(d.values()[n]));
}

TEST(DeriveSeed, DistinctStreams) {
    EXPECT_NE(derive_seed(0, 1), derive_seed(0, 2));
    EXPECT_NE(derive_seed(0, 1), derive_seed(1, 1));
    EXPECT_EQ(derive_seed(9, 4), derive_seed(9, 4));
}
