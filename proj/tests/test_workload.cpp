#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace adaspa;
using testutil::jaccard;

namespace {

WorkloadSpec spec_with(double drift, std::uint64_t seed = 0) {
    WorkloadSpec s;
    s.drift = drift;
    s.seed = seed;
    return s;
}

std::size_t budget_at(double s, const BlockGrid& grid) { return keep_budget(s, grid.cells()); }

}  // namespace

TEST(WorkloadSpec, Defaults) {
    const WorkloadSpec s;
    EXPECT_EQ(s.layout.length(), 272u);
    EXPECT_EQ(s.heads, 4u);
    EXPECT_EQ(s.head_dim, 32u);
    EXPECT_DOUBLE_EQ(s.drift, 0.05);
    EXPECT_NO_THROW(s.validate());
    EXPECT_DOUBLE_EQ(s.drift_at(s.steps), s.drift);
    EXPECT_GE(s.drift_at(1), s.drift_at(2));
}

TEST(Workload, StepRange) {
    const Workload<double> w(spec_with(0.05));
    EXPECT_THROW(w.step(0), std::out_of_range);
    EXPECT_THROW(w.step(51), std::out_of_range);
    EXPECT_NO_THROW(w.step(50));
}

TEST(Workload, ZeroDriftStepsIdentical) {
    const Workload<double> w(spec_with(0.0));
    const auto a = w.step(1);
    for (std::size_t t : {2u, 5u, 50u}) {
        const auto b = w.step(t);
        EXPECT_EQ(a.q, b.q);
        EXPECT_EQ(a.k, b.k);
        EXPECT_EQ(a.v, b.v);
    }
}

TEST(Workload, ZeroDriftMaskRecallUnchanged) {
    const auto spec = spec_with(0.0);
    const BlockGrid grid(spec.layout.length(), 16);
    const auto s1 = generate_step(spec, 1), s5 = generate_step(spec, 5);
    const auto w1 = dense_attention(s1.q, s1.k, s1.v).weights;
    const auto w5 = dense_attention(s5.q, s5.k, s5.v).weights;
    const auto mask = optimal_block_mask_oracle(w1, grid, budget_at(0.8, grid));
    EXPECT_EQ(recall(w1, mask), recall(w5, mask));
}

TEST(Workload, Deterministic) {
    const auto a = generate_step(spec_with(0.05, 3), 7);
    const auto b = generate_step(spec_with(0.05, 3), 7);
    EXPECT_EQ(a.q, b.q);
    EXPECT_EQ(a.k, b.k);
    EXPECT_NE(a.q, generate_step(spec_with(0.05, 4), 7).q);
}

TEST(Workload, ConsecutiveMaskJaccard) {
    const auto spec = spec_with(0.05);
    const Workload<double> w(spec);
    const BlockGrid grid(spec.layout.length(), 16);
    const std::size_t budget = budget_at(0.8, grid);
    BlockMask previous;
    double worst = 1.0;
    for (std::size_t t = 1; t <= spec.steps; ++t) {
        const auto s = w.step(t);
        auto mask = optimal_block_mask_oracle(dense_attention(s.q, s.k, s.v).weights, grid, budget);
        if (t > 1) worst = std::min(worst, jaccard(previous, mask));
        previous = std::move(mask);
    }
    EXPECT_GE(worst, 0.8);
}

TEST(Workload, HierarchicalStructure) {
    const auto spec = spec_with(0.05);
    const auto s = generate_step(spec, 1);
    const auto w = dense_attention(s.q, s.k, s.v).weights;
    const std::size_t frame = spec.layout.tokens_per_frame();
    const BlockGrid grid(spec.layout.length(), frame);
    const auto sums = block_sum_oracle(w, grid);
    const std::size_t f = spec.layout.frames();
    for (std::size_t h = 0; h < spec.heads; ++h) {
        double intra = 0.0, inter = 0.0;
        for (std::size_t p = 0; p < f; ++p)
            for (std::size_t q = 0; q < f; ++q) (p == q ? intra : inter) += sums(h, p, q);
        intra /= static_cast<double>(f);
        inter /= static_cast<double>(f * f - f);
        EXPECT_GT(intra / inter, 1.0) << "head " << h;
    }
}

TEST(Workload, TextKeysAttractMass) {
    const auto spec = spec_with(0.05);
    const auto s = generate_step(spec, 1);
    const auto w = dense_attention(s.q, s.k, s.v).weights;
    // Per-key mass on text columns beats the per-key average over video columns.
    const std::size_t L = spec.layout.length(), tb = spec.layout.text_begin();
    for (std::size_t h = 0; h < spec.heads; ++h) {
        double text = 0.0, video = 0.0;
        for (std::size_t i = 0; i < tb; ++i)
            for (std::size_t j = 0; j < L; ++j) (j >= tb ? text : video) += w(h, i, j);
        EXPECT_GT(text / static_cast<double>(L - tb), video / static_cast<double>(tb)) << "head " << h;
    }
}

TEST(Workload, CachedLseMaskRecallNearFresh) {
    const auto spec = spec_with(0.05);
    const Workload<double> w(spec);
    const BlockGrid grid(spec.layout.length(), 16);
    SparsityConfig cfg;
    cfg.block_size = 16;
    cfg.head_adaptive = false;
    const auto warm = w.step(10);
    const auto cached_lse = fused_online_search(warm.q, warm.k, warm.v, grid).flash.lse;
    for (std::size_t t : {11u, 20u, 30u, 50u}) {
        const auto s = w.step(t);
        const auto fresh = fused_online_search(s.q, s.k, s.v, grid);
        const auto fresh_mask = select_topk_mask(fresh.scores, cfg.sparsity, spec.layout, cfg);
        const auto cached_mask =
            select_topk_mask(lse_cached_search(s.q, s.k, cached_lse, grid), cfg.sparsity, spec.layout, cfg);
        const auto a = recall_from_scores(fresh.scores, fresh_mask);
        const auto b = recall_from_scores(fresh.scores, cached_mask);
        for (std::size_t h = 0; h < spec.heads; ++h) EXPECT_NEAR(a[h], b[h], 0.02) << "step " << t << " head " << h;
    }
}

TEST(CrossInput, SameSpecEqualsOwn) {
    const auto spec = spec_with(0.05);
    const auto r = cross_input_recall(spec, spec, 0.9, 16);
    EXPECT_EQ(r.cross, r.own);
}

TEST(CrossInput, OwnMaskIsOptimal) {
    const auto r = cross_input_recall(spec_with(0.05, 0), spec_with(0.05, 1), 0.9, 16);
    double cross = 0.0, own = 0.0;
    for (std::size_t h = 0; h < r.own.size(); ++h) {
        EXPECT_LE(r.cross[h], r.own[h] + 1e-12);
        cross += r.cross[h];
        own += r.own[h];
    }
    EXPECT_LT(cross, own);
}

TEST(CrossInput, DimensionMismatch) {
    WorkloadSpec b = spec_with(0.05);
    b.heads = 2;
    EXPECT_THROW(cross_input_recall(spec_with(0.05), b, 0.9, 16), std::invalid_argument);
}

TEST(LseDrift, ZeroDriftIsZero) {
    for (const auto& d : lse_drift_stats(spec_with(0.0), 4)) {
        EXPECT_EQ(d.mean_abs, 0.0);
        EXPECT_EQ(d.max_abs, 0.0);
    }
}

TEST(LseDrift, FiniteReproducibleAndMonotone) {
    WorkloadSpec low = spec_with(0.05), high = spec_with(0.2);
    low.anneal = high.anneal = 0.0;
    const auto a = lse_drift_stats(low, 5);
    const auto b = lse_drift_stats(low, 5);
    const auto c = lse_drift_stats(high, 5);
    ASSERT_EQ(a.size(), 4u);
    for (std::size_t n = 0; n < a.size(); ++n) {
        EXPECT_TRUE(std::isfinite(a[n].mean_abs));
        EXPECT_EQ(a[n].mean_abs, b[n].mean_abs);
        EXPECT_EQ(a[n].std_dev, b[n].std_dev);
        EXPECT_GE(c[n].mean_abs, a[n].mean_abs);
    }
    EXPECT_THROW(lse_drift_stats(low, 1), std::invalid_argument);
}

TEST(WorkloadConfig, RoundTrip) {
    WorkloadSpec spec = spec_with(0.125, 42);
    spec.layout = make_layout(3, 4, 5, 6);
    spec.coupling = 0.3;
    Config cfg;
    write_workload(spec, cfg);
    const auto text = cfg.to_text();
    EXPECT_EQ(read_workload(Config::parse(text)), spec);
}

TEST(WorkloadConfig, BadValueCarriesLine) {
    try {
        read_workload(Config::parse("[workload]\nheads = 4\ndrift = fast\n", "w.ini"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.line(), 3u);
        EXPECT_NE(std::string(e.what()).find("w.ini:3"), std::string::npos);
    }
}
