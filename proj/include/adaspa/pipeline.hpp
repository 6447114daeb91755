#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaspa/blocks.hpp"
#include "adaspa/core.hpp"
#include "adaspa/flashblock.hpp"
#include "adaspa/search.hpp"
#include "adaspa/sparse_exec.hpp"
#include "adaspa/workload.hpp"

namespace adaspa {

/// Warmup t_w, key steps T_s (first one equal to t_w) and total steps n.
struct SearchSchedule {
    std::size_t warmup = 10;
    std::vector<std::size_t> key_steps{10, 30};
    std::size_t steps = 50;

    void validate() const {
        if (warmup == 0) throw std::invalid_argument("SearchSchedule: warmup must be >= 1");
        if (key_steps.empty()) throw std::invalid_argument("SearchSchedule: at least one key step is required");
        if (key_steps.front() != warmup) {
            throw std::invalid_argument("SearchSchedule: first key step " + std::to_string(key_steps.front()) +
                                        " must equal the warmup step " + std::to_string(warmup));
        }
        for (std::size_t i = 1; i < key_steps.size(); ++i) {
            if (key_steps[i] <= key_steps[i - 1]) {
                throw std::invalid_argument("SearchSchedule: key steps must be strictly increasing");
            }
        }
        if (key_steps.back() > steps) throw std::invalid_argument("SearchSchedule: key step beyond the last step");
    }

    bool is_key_step(std::size_t step) const {
        return std::binary_search(key_steps.begin(), key_steps.end(), step);
    }
};

enum class StepMode { Full, FullFusedSearch, Sparse, SparseCachedSearch };

inline const char* to_string(StepMode mode) noexcept {
    switch (mode) {
        case StepMode::Full: return "full";
        case StepMode::FullFusedSearch: return "full+fused-search";
        case StepMode::Sparse: return "sparse";
        case StepMode::SparseCachedSearch: return "sparse+cached-search";
    }
    return "?";
}

inline StepMode mode_of(const SearchSchedule& schedule, std::size_t step) {
    if (step < schedule.warmup) return StepMode::Full;
    if (step == schedule.warmup) return StepMode::FullFusedSearch;
    return schedule.is_key_step(step) ? StepMode::SparseCachedSearch : StepMode::Sparse;
}

struct StepReport {
    std::size_t step = 0;
    StepMode mode = StepMode::Full;
    /// Recall of the attention executed at this step, per head. Exact when the
    /// full reference ran; otherwise the search estimate at cached key steps
    /// and empty at plain sparse steps.
    std::vector<double> recall;
    double nominal_sparsity = 0.0;
    double effective_sparsity = 0.0;
    double flops_ratio = 1.0;
    std::optional<double> max_abs_deviation;
    std::uint64_t checksum = 0;
};

struct PipelineResult {
    std::vector<StepReport> reports;
    /// Mask produced at each key step, in key-step order.
    std::vector<BlockMask> key_masks;
};

/// FNV-1a over the raw bytes of a tensor.
template <typename Real>
std::uint64_t checksum(const AttnTensor<Real>& t) {
    std::uint64_t hash = 0xCBF29CE484222325ull;
    for (Real x : t.values()) {
        unsigned char bytes[sizeof(Real)];
        std::memcpy(bytes, &x, sizeof(Real));
        for (unsigned char b : bytes) {
            hash ^= b;
            hash *= 0x100000001B3ull;
        }
    }
    return hash;
}

/// Mask and LSE carried between steps. The LSE is written once, by the fused
/// search at the warmup step, and read by every later cached search.
template <typename Real = double>
class PipelineState {
public:
    bool has_cached_lse() const noexcept { return cached_lse_.has_value(); }

    void cache_lse(LseVector<Real> lse) {
        if (cached_lse_) throw std::logic_error("PipelineState: cached LSE is already set");
        cached_lse_ = std::move(lse);
    }

    const LseVector<Real>& cached_lse() const {
        if (!cached_lse_) throw std::logic_error("PipelineState: cached LSE read before the fused search ran");
        return *cached_lse_;
    }

    bool has_mask() const noexcept { return mask_.has_value(); }
    const BlockMask& mask() const {
        if (!mask_) throw std::logic_error("PipelineState: no mask before the warmup step");
        return *mask_;
    }
    void set_mask(BlockMask mask) { mask_ = std::move(mask); }

private:
    std::optional<LseVector<Real>> cached_lse_;
    std::optional<BlockMask> mask_;
};

namespace detail {

template <typename Real>
double max_abs_diff(const AttnTensor<Real>& a, const AttnTensor<Real>& b) {
    double out = 0.0;
    const auto x = a.values();
    const auto y = b.values();
    for (std::size_t n = 0; n < x.size(); ++n) out = std::max(out, std::abs(static_cast<double>(x[n] - y[n])));
    return out;
}

inline double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

}  // namespace detail

/// Runs the warmup / fused search / cached search / sparse schedule over the
/// workload steps 1..n.
template <typename Real = double>
PipelineResult run_pipeline(const WorkloadSpec& spec, const SearchSchedule& schedule, const SparsityConfig& config,
                            bool compare_to_full) {
    schedule.validate();
    config.validate();
    if (schedule.steps != spec.steps) {
        throw std::invalid_argument("run_pipeline: schedule covers " + std::to_string(schedule.steps) +
                                    " steps but the workload has " + std::to_string(spec.steps));
    }
    const Workload<Real> workload(spec);
    const SequenceLayout& layout = spec.layout;
    const BlockGrid grid(layout.length(), config.block_size);
    const std::size_t heads = spec.heads;

    PipelineState<Real> state;
    PipelineResult result;
    result.reports.reserve(schedule.steps);

    for (std::size_t t = 1; t <= schedule.steps; ++t) {
        const auto tensors = workload.step(t);
        StepReport report;
        report.step = t;
        report.mode = mode_of(schedule, t);

        std::optional<FusedSearchResult<Real>> reference;
        if (compare_to_full && report.mode != StepMode::FullFusedSearch) {
            reference = fused_online_search(tensors.q, tensors.k, tensors.v, grid);
        }

        AttnTensor<Real> output;
        switch (report.mode) {
            case StepMode::Full: {
                output = flash_forward(tensors.q, tensors.k, tensors.v, grid.block_size()).output;
                report.recall.assign(heads, 1.0);
                break;
            }
            case StepMode::FullFusedSearch: {
                auto fused = fused_online_search(tensors.q, tensors.k, tensors.v, grid);
                state.cache_lse(fused.flash.lse);
                auto mask = search_mask(fused.scores, layout, config);
                result.key_masks.push_back(mask);
                state.set_mask(std::move(mask));
                output = fused.flash.output;
                report.recall.assign(heads, 1.0);
                if (compare_to_full) reference = std::move(fused);
                break;
            }
            case StepMode::SparseCachedSearch:
            case StepMode::Sparse: {
                std::optional<BlockScoreMatrix<Real>> search_scores;
                if (report.mode == StepMode::SparseCachedSearch) {
                    search_scores = lse_cached_search(tensors.q, tensors.k, state.cached_lse(), grid);
                    auto mask = search_mask(*search_scores, layout, config);
                    result.key_masks.push_back(mask);
                    state.set_mask(std::move(mask));
                }
                const BlockMask& mask = state.mask();
                output = block_sparse_forward(tensors.q, tensors.k, tensors.v, mask).output;
                if (reference) {
                    report.recall = recall_from_scores(reference->scores, mask);
                } else if (search_scores) {
                    report.recall = recall_from_scores(*search_scores, mask);
                }
                std::vector<double> nominal(heads), effective(heads);
                for (std::size_t h = 0; h < heads; ++h) {
                    nominal[h] = mask.sparsity(h);
                    effective[h] = mask.effective_sparsity(h);
                }
                report.nominal_sparsity = detail::mean(nominal);
                report.effective_sparsity = detail::mean(effective);
                report.flops_ratio = flop_count(mask, layout.length(), spec.head_dim).ratio();
                break;
            }
        }

        if (reference) report.max_abs_deviation = detail::max_abs_diff(output, reference->flash.output);
        report.checksum = checksum(output);
        result.reports.push_back(std::move(report));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Analytic cost model. Not a latency measurement.
// ---------------------------------------------------------------------------

struct CostModel {
    /// Cost of one block-score pass relative to a full attention pass
    /// (QK^T and a reduction, no PV product).
    double search_pass = 0.5;
    std::size_t heads = 24;
    std::size_t head_dim = 128;
    /// Non-attention FLOPs per token per layer (projections, MLP). Zero makes
    /// the estimate attention-only.
    double non_attention_flops_per_token = 0.0;
};

struct SpeedupEstimate {
    double attention_speedup = 1.0;  // attention time only
    double end_to_end_speedup = 1.0; // including non-attention FLOPs
    double search_fraction = 0.0;    // search passes / n full attention passes
    double effective_sparsity = 0.0; // nominal sparsity plus text-sink cells
    double bound = 1.0;              // attention speedup if every mask were free of sink cells
};

/// Fraction of attention elements skipped once text-sink cells are forced on.
inline double effective_sparsity(const SequenceLayout& layout, const SparsityConfig& config) {
    config.validate();
    if (!config.text_sink || layout.text() == 0) return config.sparsity;
    const BlockGrid grid(layout.length(), config.block_size);
    const auto text = text_blocks(layout, grid);
    double sink_area = 0.0;
    double free_area = 0.0;
    for (std::size_t p = 0; p < grid.blocks(); ++p)
        for (std::size_t q = 0; q < grid.blocks(); ++q) {
            const double area = static_cast<double>(grid.cell_area(p, q));
            (text[p] || text[q] ? sink_area : free_area) += area;
        }
    const double total = sink_area + free_area;
    return 1.0 - (sink_area + (1.0 - config.sparsity) * free_area) / total;
}

/// Step costs in units of one full attention pass:
///   steps 1..t_w-1 : 1
///   step t_w       : 1 + beta          (flash pass + score pass)
///   later key step : beta + (1 - s)   (cached score pass + sparse pass)
///   other steps    : 1 - s
/// speedup = n / total. Non-attention FLOPs, when given, are added to every
/// step unchanged.
inline SpeedupEstimate estimate_speedup(const SequenceLayout& layout, const SearchSchedule& schedule,
                                        const SparsityConfig& config, const CostModel& model) {
    schedule.validate();
    const double s = effective_sparsity(layout, config);
    const double n = static_cast<double>(schedule.steps);
    const double warm = static_cast<double>(schedule.warmup);
    const double k = static_cast<double>(schedule.key_steps.size());
    const double beta = model.search_pass;
    const double dense = 1.0 - s;

    const double full_steps = warm - 1.0;
    const double cached_steps = k - 1.0;
    const double sparse_steps = n - warm - cached_steps;
    const double attention_cost = full_steps + (1.0 + beta) + cached_steps * (beta + dense) + sparse_steps * dense;

    const double length = static_cast<double>(layout.length());
    const double attn_flops = 4.0 * length * length * static_cast<double>(model.head_dim) *
                              static_cast<double>(model.heads);
    const double other = model.non_attention_flops_per_token * length / attn_flops;  // per full pass

    SpeedupEstimate out;
    out.effective_sparsity = s;
    out.attention_speedup = n / attention_cost;
    out.end_to_end_speedup = n * (1.0 + other) / (attention_cost + n * other);
    out.search_fraction = k * beta / n;
    const double ideal = full_steps + (1.0 + beta) + cached_steps * (beta + 1.0 - config.sparsity) +
                         sparse_steps * (1.0 - config.sparsity);
    out.bound = n / ideal;
    return out;
}

}  // namespace adaspa
