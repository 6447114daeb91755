#pragma once

// Experiment harnesses behind the command-line subcommands. Each returns
// plain rows plus a deterministic CSV/JSON rendering so results are
// byte-stable for a fixed configuration.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "adaspa/blocks.hpp"
#include "adaspa/core.hpp"
#include "adaspa/flashblock.hpp"
#include "adaspa/oracle.hpp"
#include "adaspa/pipeline.hpp"
#include "adaspa/search.hpp"
#include "adaspa/sparse_exec.hpp"
#include "adaspa/workload.hpp"

namespace adaspa {

inline constexpr int kSchemaVersion = 1;

inline std::string csv_preamble(const std::string& kind, std::uint64_t seed) {
    std::ostringstream oss;
    oss << "# adaspa " << kind << " schema_version=" << kSchemaVersion << " seed=" << seed
        << " data=synthetic-workload\n";
    return oss.str();
}

inline std::string fmt_num(double x, int precision = 10) {
    if (std::isnan(x)) return "";
    std::ostringstream oss;
    oss << std::setprecision(precision) << x;
    return oss.str();
}

inline std::string join_steps(const std::vector<std::size_t>& steps, char sep = ' ') {
    std::string out;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) out += sep;
        out += std::to_string(steps[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pattern comparison
// ---------------------------------------------------------------------------

struct PatternRow {
    double sparsity = 0.0;
    PatternKind kind = PatternKind::Topk;
    std::size_t head = 0;
    double recall = 0.0;
};

/// Recall of every baseline pattern on step-1 dense weights, per head.
inline std::vector<PatternRow> pattern_compare(const WorkloadSpec& spec, const std::vector<double>& sparsities,
                                               std::size_t block_size) {
    const auto step = generate_step<double>(spec, 1);
    const auto weights = dense_attention(step.q, step.k, step.v).weights;
    std::vector<PatternRow> rows;
    for (double s : sparsities) {
        for (PatternKind kind : all_pattern_kinds) {
            const auto r = recall(weights, build_baseline_pattern(kind, weights, s, block_size));
            for (std::size_t h = 0; h < r.size(); ++h) rows.push_back({s, kind, h, r[h]});
        }
    }
    return rows;
}

inline std::string pattern_compare_csv(const std::vector<PatternRow>& rows, std::uint64_t seed) {
    std::ostringstream out;
    out << csv_preamble("pattern-compare", seed);
    out << "sparsity,pattern,head,recall\n";
    for (const auto& r : rows) out << fmt_num(r.sparsity) << "," << to_string(r.kind) << "," << r.head << ","
                                   << fmt_num(r.recall) << "\n";
    return out.str();
}

/// Mean recall over heads for one (sparsity, kind).
inline double mean_pattern_recall(const std::vector<PatternRow>& rows, double sparsity, PatternKind kind) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
        if (r.sparsity == sparsity && r.kind == kind) {
            sum += r.recall;
            ++n;
        }
    return n ? sum / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
    WorkloadSpec spec;
    SparsityConfig config;
    SearchSchedule schedule;
    std::vector<double> sparsities{0.5, 0.6, 0.7, 0.8, 0.9};
    CostModel cost;
};

struct SweepRow {
    std::string section;
    double sparsity = 0.0;
    bool head_adaptive = false;
    bool row_wise = false;
    bool text_sink = false;
    std::size_t warmup = 0;
    std::vector<std::size_t> key_steps;
    double mean_recall = 0.0;  // over sparse steps and heads, exact
    double min_recall = 0.0;
    double max_deviation = 0.0;  // max over all steps vs full attention
    double mean_effective_sparsity = 0.0;
    double predicted_speedup = 1.0;
    double search_fraction = 0.0;
    std::uint64_t checksum = 0;  // of the per-step checksums
};

/// Maps a step given for a 50-step trajectory onto `steps` steps.
inline std::size_t map_step(std::size_t step, std::size_t steps) {
    if (steps == 50) return step;
    const double scaled = std::round(static_cast<double>(step) * static_cast<double>(steps) / 50.0);
    return std::clamp<std::size_t>(static_cast<std::size_t>(scaled), 1, steps);
}

inline SearchSchedule mapped_schedule(std::size_t warmup, const std::vector<std::size_t>& key_steps, std::size_t steps) {
    SearchSchedule s;
    s.steps = steps;
    s.warmup = map_step(warmup, steps);
    s.key_steps.clear();
    for (std::size_t k : key_steps) {
        const std::size_t m = map_step(k, steps);
        if (m >= s.warmup && (s.key_steps.empty() || m > s.key_steps.back())) s.key_steps.push_back(m);
    }
    if (s.key_steps.empty() || s.key_steps.front() != s.warmup) s.key_steps.insert(s.key_steps.begin(), s.warmup);
    return s;
}

inline SweepRow run_sweep_point(const std::string& section, const WorkloadSpec& spec, const SparsityConfig& config,
                                const SearchSchedule& schedule, const CostModel& cost) {
    const auto run = run_pipeline<double>(spec, schedule, config, /*compare_to_full=*/true);
    SweepRow row;
    row.section = section;
    row.sparsity = config.sparsity;
    row.head_adaptive = config.head_adaptive;
    row.row_wise = config.row_wise;
    row.text_sink = config.text_sink;
    row.warmup = schedule.warmup;
    row.key_steps = schedule.key_steps;
    row.min_recall = 1.0;

    double recall_sum = 0.0, eff_sum = 0.0;
    std::size_t recall_n = 0, sparse_n = 0;
    std::uint64_t hash = 0xCBF29CE484222325ull;
    for (const auto& r : run.reports) {
        row.max_deviation = std::max(row.max_deviation, r.max_abs_deviation.value_or(0.0));
        hash = (hash ^ r.checksum) * 0x100000001B3ull;
        if (r.mode == StepMode::Sparse || r.mode == StepMode::SparseCachedSearch) {
            for (double x : r.recall) {
                recall_sum += x;
                row.min_recall = std::min(row.min_recall, x);
                ++recall_n;
            }
            eff_sum += r.effective_sparsity;
            ++sparse_n;
        }
    }
    row.mean_recall = recall_n ? recall_sum / static_cast<double>(recall_n) : 1.0;
    row.mean_effective_sparsity = sparse_n ? eff_sum / static_cast<double>(sparse_n) : 0.0;
    const auto estimate = estimate_speedup(spec.layout, schedule, config, cost);
    row.predicted_speedup = estimate.attention_speedup;
    row.search_fraction = estimate.search_fraction;
    row.checksum = hash;
    return row;
}

/// Sections: "sparsity" (grid with the given flags), "head_adaptive" (off/on
/// at the base sparsity), "key_steps" (T_s ablation) and "warmup" (t_w
/// ablation). Schedules are written for 50 steps and mapped onto the
/// workload's step count.
inline std::vector<SweepRow> run_sweep(const SweepOptions& opt) {
    std::vector<SweepRow> rows;
    const std::size_t n = opt.spec.steps;

    for (double s : opt.sparsities) {
        SparsityConfig c = opt.config;
        c.sparsity = s;
        rows.push_back(run_sweep_point("sparsity", opt.spec, c, opt.schedule, opt.cost));
    }
    for (bool adaptive : {false, true}) {
        SparsityConfig c = opt.config;
        c.head_adaptive = adaptive;
        rows.push_back(run_sweep_point("head_adaptive", opt.spec, c, opt.schedule, opt.cost));
    }
    const std::vector<std::vector<std::size_t>> key_sets{{10}, {10, 30}, {10, 20, 30}, {10, 20, 30, 40}};
    for (const auto& keys : key_sets) {
        rows.push_back(run_sweep_point("key_steps", opt.spec, opt.config, mapped_schedule(10, keys, n), opt.cost));
    }
    for (std::size_t warmup : {2, 5, 10, 20}) {
        rows.push_back(run_sweep_point("warmup", opt.spec, opt.config, mapped_schedule(warmup, {warmup}, n), opt.cost));
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows, std::uint64_t seed) {
    std::ostringstream out;
    out << csv_preamble("sweep", seed);
    out << "section,sparsity,head_adaptive,row_wise,text_sink,warmup,key_steps,mean_recall,min_recall,"
           "max_abs_deviation,mean_effective_sparsity,predicted_speedup,search_fraction,checksum\n";
    for (const auto& r : rows) {
        std::ostringstream hex;
        hex << std::hex << std::setw(16) << std::setfill('0') << r.checksum;
        out << r.section << "," << fmt_num(r.sparsity) << "," << r.head_adaptive << "," << r.row_wise << ","
            << r.text_sink << "," << r.warmup << "," << join_steps(r.key_steps) << "," << fmt_num(r.mean_recall)
            << "," << fmt_num(r.min_recall) << "," << fmt_num(r.max_deviation) << ","
            << fmt_num(r.mean_effective_sparsity) << "," << fmt_num(r.predicted_speedup) << ","
            << fmt_num(r.search_fraction) << "," << hex.str() << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Pipeline step stream
// ---------------------------------------------------------------------------

inline std::string step_reports_csv(const std::vector<StepReport>& reports, std::uint64_t seed) {
    std::ostringstream out;
    out << csv_preamble("pipeline", seed);
    out << "step,mode,mean_recall,min_recall,nominal_sparsity,effective_sparsity,flops_ratio,max_abs_deviation,"
           "checksum\n";
    for (const auto& r : reports) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const double mean = r.recall.empty() ? nan : detail::mean(r.recall);
        const double min = r.recall.empty() ? nan : *std::min_element(r.recall.begin(), r.recall.end());
        std::ostringstream hex;
        hex << std::hex << std::setw(16) << std::setfill('0') << r.checksum;
        out << r.step << "," << to_string(r.mode) << "," << fmt_num(mean) << "," << fmt_num(min) << ","
            << fmt_num(r.nominal_sparsity) << "," << fmt_num(r.effective_sparsity) << "," << fmt_num(r.flops_ratio)
            << "," << (r.max_abs_deviation ? fmt_num(*r.max_abs_deviation) : std::string()) << "," << hex.str()
            << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// FLOPs share and scaling
// ---------------------------------------------------------------------------

struct FlopsQuery {
    std::size_t length = 47024;
    std::size_t head_dim = 128;
    std::size_t heads = 24;
    std::size_t layers = 60;
    std::size_t steps = 50;
    double sparsity = 0.0;
    /// Non-attention FLOPs per layer per step; negative selects the
    /// 24 * d_model^2 * L estimate (QKVO projections plus a 4x MLP).
    double non_attention_per_layer = -1.0;
};

struct FlopsEstimate {
    double attention_per_layer = 0.0;  // 4 L^2 D H
    double dense_attention = 0.0;      // over all layers and steps
    double sparse_attention = 0.0;     // (1 - s) * dense
    double non_attention = 0.0;
    double attention_share_dense = 0.0;
    double attention_share_sparse = 0.0;
    bool non_attention_estimated = false;
};

inline FlopsEstimate estimate_flops(const FlopsQuery& q) {
    if (q.length == 0 || q.head_dim == 0 || q.heads == 0 || q.layers == 0 || q.steps == 0) {
        throw std::invalid_argument("estimate_flops: parameters must be positive");
    }
    if (!(q.sparsity >= 0.0 && q.sparsity < 1.0)) throw std::invalid_argument("estimate_flops: sparsity outside [0, 1)");
    FlopsEstimate e;
    const double L = static_cast<double>(q.length);
    const double d_model = static_cast<double>(q.heads * q.head_dim);
    const double passes = static_cast<double>(q.layers) * static_cast<double>(q.steps);
    e.attention_per_layer = 4.0 * L * L * static_cast<double>(q.head_dim) * static_cast<double>(q.heads);
    e.dense_attention = e.attention_per_layer * passes;
    e.sparse_attention = (1.0 - q.sparsity) * e.dense_attention;
    e.non_attention_estimated = q.non_attention_per_layer < 0.0;
    const double other_per_layer = e.non_attention_estimated ? 24.0 * d_model * d_model * L : q.non_attention_per_layer;
    e.non_attention = other_per_layer * passes;
    e.attention_share_dense = e.dense_attention / (e.dense_attention + e.non_attention);
    e.attention_share_sparse = e.sparse_attention / (e.sparse_attention + e.non_attention);
    return e;
}

struct ScalingOptions {
    double fps = 24.0;
    std::size_t temporal_compression = 4;
    std::size_t latent_height = 45;
    std::size_t latent_width = 80;
    std::size_t text_tokens = 224;
    SparsityConfig config{0.9, 64, true, true, true, 0.8};
    SearchSchedule schedule;
    CostModel cost{0.5, 24, 128, 24.0 * 3072.0 * 3072.0};
};

struct ScalingRow {
    double seconds = 0.0;
    std::size_t latent_frames = 0;
    std::size_t length = 0;
    SpeedupEstimate estimate;
};

/// frames = round(seconds * fps) + 1, latent frames = (frames - 1) / c + 1.
inline SequenceLayout layout_for_video(double seconds, const ScalingOptions& opt) {
    if (!(seconds > 0.0)) throw std::invalid_argument("layout_for_video: length must be positive");
    const auto frames = static_cast<std::size_t>(std::llround(seconds * opt.fps)) + 1;
    const std::size_t latent = (frames - 1) / opt.temporal_compression + 1;
    return SequenceLayout(latent, opt.latent_height, opt.latent_width, opt.text_tokens);
}

inline std::vector<ScalingRow> run_scaling(const std::vector<double>& seconds, const ScalingOptions& opt) {
    std::vector<ScalingRow> rows;
    for (double s : seconds) {
        const auto layout = layout_for_video(s, opt);
        rows.push_back({s, layout.frames(), layout.length(), estimate_speedup(layout, opt.schedule, opt.config, opt.cost)});
    }
    return rows;
}

inline std::string scaling_csv(const std::vector<ScalingRow>& rows, std::uint64_t seed) {
    std::ostringstream out;
    out << csv_preamble("scaling", seed);
    out << "seconds,latent_frames,length,effective_sparsity,attention_speedup,end_to_end_speedup,search_fraction,"
           "attention_bound\n";
    for (const auto& r : rows) {
        out << fmt_num(r.seconds) << "," << r.latent_frames << "," << r.length << ","
            << fmt_num(r.estimate.effective_sparsity) << "," << fmt_num(r.estimate.attention_speedup) << ","
            << fmt_num(r.estimate.end_to_end_speedup) << "," << fmt_num(r.estimate.search_fraction) << ","
            << fmt_num(r.estimate.bound) << "\n";
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Oracle-equivalence suite
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline BlockMask random_block_mask(std::size_t heads, const BlockGrid& grid, std::uint64_t seed, double density) {
    const CounterRng rng(seed);
    BlockMask mask(heads, grid);
    std::uint64_t counter = 0;
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t p = 0; p < grid.blocks(); ++p) {
            // Keep the diagonal so no query row is empty.
            for (std::size_t q = 0; q < grid.blocks(); ++q) mask.set(h, p, q, p == q || rng.uniform(counter++) < density);
        }
    return mask;
}

template <typename Real>
double max_abs(std::span<const Real> a, std::span<const Real> b) {
    double out = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n) out = std::max(out, std::abs(static_cast<double>(a[n] - b[n])));
    return out;
}

inline AttnTensor<double> negated(AttnTensor<double> t) {
    for (double& x : t.values()) x = -x;
    return t;
}

}  // namespace detail

/// Kernel-versus-oracle checks at desk size. `inject_fault` hands the kernel
/// side a sign-flipped K (and sign-flipped scores for the selection check),
/// which every check must catch.
inline std::vector<CheckResult> run_verify(bool inject_fault = false, std::uint64_t seed = 0) {
    std::vector<CheckResult> out;
    auto kernel_k = [&](const AttnTensor<double>& k) { return inject_fault ? detail::negated(k) : k; };
    auto add = [&](std::string name, bool ok, double worst, double tol) {
        std::ostringstream d;
        d << "worst=" << std::setprecision(3) << worst << " tol=" << tol;
        out.push_back({std::move(name), ok, d.str()});
    };

    {
        double worst_out = 0.0, worst_lse = 0.0;
        for (std::uint64_t s = 0; s < 10; ++s) {
            const auto q = seeded_tensor(4, 128, 32, derive_seed(seed, 100 + 3 * s));
            const auto k = seeded_tensor(4, 128, 32, derive_seed(seed, 101 + 3 * s));
            const auto v = seeded_tensor(4, 128, 32, derive_seed(seed, 102 + 3 * s));
            const auto dense = dense_attention(q, k, v);
            const auto flash = flash_forward(q, kernel_k(k), v, 16);
            worst_out = std::max(worst_out, detail::max_abs(flash.output.values(), dense.output.values()));
            worst_lse = std::max(worst_lse, detail::max_abs(flash.lse.values(), dense.lse.values()));
        }
        add("flash_vs_dense_output", worst_out <= 1e-5, worst_out, 1e-5);
        add("flash_vs_dense_lse", worst_lse <= 1e-6, worst_lse, 1e-6);
    }
    {
        double worst = 0.0;
        for (std::size_t b : {8, 32, 64}) {
            for (std::uint64_t s = 0; s < 3; ++s) {
                const auto q = seeded_tensor(2, 100, 16, derive_seed(seed, 200 + 2 * s + b));
                const auto k = seeded_tensor(2, 100, 16, derive_seed(seed, 201 + 2 * s + b));
                const auto v = seeded_tensor(2, 100, 16, derive_seed(seed, 300 + s + b));
                const BlockGrid grid(100, b);
                const auto expected = block_sum_oracle(dense_attention(q, k, v).weights, grid);
                const auto fused = fused_online_search(q, kernel_k(k), v, grid);
                for (std::size_t n = 0; n < expected.values().size(); ++n) {
                    const double e = expected.values()[n];
                    const double rel = std::abs(fused.scores.values()[n] - e) / std::max(std::abs(e), 1e-300);
                    worst = std::max(worst, e == 0.0 ? std::abs(fused.scores.values()[n]) : rel);
                }
            }
        }
        add("fused_scores_vs_block_sum_oracle", worst <= 1e-6, worst, 1e-6);
    }
    {
        const auto q = seeded_tensor(2, 96, 16, derive_seed(seed, 400));
        const auto k = seeded_tensor(2, 96, 16, derive_seed(seed, 401));
        const auto v = seeded_tensor(2, 96, 16, derive_seed(seed, 402));
        const BlockGrid grid(96, 16);
        const auto fused = fused_online_search(q, k, v, grid);
        const auto cached = lse_cached_search(q, kernel_k(k), fused.flash.lse, grid);
        const bool bitwise = cached == fused.scores;
        out.push_back({"lse_cached_bitwise_equal", bitwise, bitwise ? "identical" : "scores differ"});
    }
    {
        double worst = 0.0;
        for (std::uint64_t s = 0; s < 6; ++s) {
            const std::size_t length = 70 + 5 * s;
            const auto q = seeded_tensor(3, length, 16, derive_seed(seed, 500 + 4 * s));
            const auto k = seeded_tensor(3, length, 16, derive_seed(seed, 501 + 4 * s));
            const auto v = seeded_tensor(3, length, 16, derive_seed(seed, 502 + 4 * s));
            const BlockGrid grid(length, 16);
            const auto mask = detail::random_block_mask(3, grid, derive_seed(seed, 503 + 4 * s), 0.4);
            const auto expected = masked_dense_attention(q, k, v, expand(mask));
            const auto sparse = block_sparse_forward(q, kernel_k(k), v, mask);
            worst = std::max(worst, detail::max_abs(sparse.output.values(), expected.output.values()));
        }
        add("sparse_exec_vs_masked_dense", worst <= 1e-5, worst, 1e-5);
    }
    {
        bool ok = true;
        const SequenceLayout layout(1, 3, 1, 0);
        SparsityConfig config;
        config.text_sink = false;
        config.row_wise = false;
        const BlockGrid grid(3, 1);
        for (std::uint64_t s = 0; s < 10 && ok; ++s) {
            BlockScoreMatrix<double> scores(1, grid);
            const CounterRng rng(derive_seed(seed, 600 + s));
            for (std::size_t c = 0; c < 9; ++c) scores(0, c / 3, c % 3) = rng.uniform(c);
            BlockScoreMatrix<double> kernel_scores = scores;
            if (inject_fault)
                for (std::size_t c = 0; c < 9; ++c) kernel_scores(0, c / 3, c % 3) = -scores(0, c / 3, c % 3);
            for (std::size_t budget = 1; budget <= 6; ++budget) {
                const double sparsity = 1.0 - static_cast<double>(budget) / 9.0;
                const auto mask = select_topk_mask(kernel_scores, sparsity, layout, config);
                double got = 0.0;
                for (std::size_t c = 0; c < 9; ++c)
                    if (mask(0, c / 3, c % 3)) got += scores(0, c / 3, c % 3);
                double best = 0.0;
                for (unsigned bits = 0; bits < 512; ++bits) {
                    if (static_cast<std::size_t>(__builtin_popcount(bits)) != budget) continue;
                    double sum = 0.0;
                    for (std::size_t c = 0; c < 9; ++c)
                        if (bits & (1u << c)) sum += scores(0, c / 3, c % 3);
                    best = std::max(best, sum);
                }
                ok = ok && mask.kept_count(0) == budget && got == best;
            }
        }
        out.push_back({"topk_optimality_enumeration", ok, ok ? "optimal at every budget" : "suboptimal mask"});
    }
    return out;
}

}  // namespace adaspa
