#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaspa/blocks.hpp"
#include "adaspa/core.hpp"
#include "adaspa/flashblock.hpp"

namespace adaspa {

struct SparsityConfig {
    double sparsity = 0.8;
    std::size_t block_size = 64;
    bool text_sink = true;
    bool row_wise = true;
    bool head_adaptive = true;
    /// Heads whose recall exceeds this count as "well served" by the mask.
    double recall_threshold = 0.8;

    void validate() const {
        if (!(sparsity >= 0.0 && sparsity < 1.0)) throw std::invalid_argument("SparsityConfig: sparsity must be in [0, 1)");
        if (block_size == 0) throw std::invalid_argument("SparsityConfig: block_size must be >= 1");
        if (!(recall_threshold > 0.0 && recall_threshold < 1.0)) {
            throw std::invalid_argument("SparsityConfig: recall_threshold must be in (0, 1)");
        }
    }
};

template <typename Real = double>
struct FusedSearchResult {
    FlashResult<Real> flash;
    BlockScoreMatrix<Real> scores;
};

namespace detail {

/// Second pass shared by the fused and the LSE-cached search:
/// W_sum_attn[h, p, q] = sum_{i in p, j in q} exp(q_i . k_j / sqrt(D) - lse_i).
/// Each cell is accumulated in (row, col) ascending order.
template <typename Real>
BlockScoreMatrix<Real> block_score_pass(const AttnTensor<Real>& q, const AttnTensor<Real>& k,
                                        const LseVector<Real>& lse, const BlockGrid& grid) {
    const std::size_t length = q.rows();
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(q.cols()));
    BlockScoreMatrix<Real> scores(q.heads(), grid);
    for (std::size_t h = 0; h < q.heads(); ++h) {
        for (std::size_t p = 0; p < grid.blocks(); ++p) {
            for (std::size_t i = grid.begin(p); i < grid.end(p); ++i) {
                const auto qi = q.row(h, i);
                const Real row_lse = lse(h, i);
                for (std::size_t j = 0; j < length; ++j) {
                    const Real z = dot<Real>(qi, k.row(h, j)) * scale;
                    scores(h, p, j / grid.block_size()) += std::exp(z - row_lse);
                }
            }
        }
    }
    return scores;
}

template <typename Real>
void require_grid(const AttnTensor<Real>& q, const BlockGrid& grid, const char* where) {
    if (grid.length() != q.rows()) {
        throw std::invalid_argument(std::string(where) + ": grid length " + std::to_string(grid.length()) +
                                    " != sequence length " + std::to_string(q.rows()));
    }
}

/// floor(x + 1/2) with slack for products like (1 - 0.9) * 5 landing just
/// under a half.
inline std::size_t round_budget(double x) { return static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9)); }
inline std::size_t ceil_budget(double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); }

}  // namespace detail

/// Two passes over (Q, K, V): flash attention for the exact output and LSE,
/// then the block score pass against that LSE.
template <typename Real>
FusedSearchResult<Real> fused_online_search(const AttnTensor<Real>& q, const AttnTensor<Real>& k,
                                            const AttnTensor<Real>& v, const BlockGrid& grid) {
    detail::require_qkv(q, k, v, "fused_online_search");
    detail::require_grid(q, grid, "fused_online_search");
    auto flash = flash_forward(q, k, v, grid.block_size());
    auto scores = detail::block_score_pass(q, k, flash.lse, grid);
    return {std::move(flash), std::move(scores)};
}

/// One pass: block scores of (Q, K) normalized by a previously cached LSE.
template <typename Real>
BlockScoreMatrix<Real> lse_cached_search(const AttnTensor<Real>& q, const AttnTensor<Real>& k,
                                         const LseVector<Real>& cached_lse, const BlockGrid& grid) {
    detail::require_qk(q, k, "lse_cached_search");
    detail::require_grid(q, grid, "lse_cached_search");
    if (cached_lse.heads() != q.heads() || cached_lse.length() != q.rows()) {
        throw std::invalid_argument("lse_cached_search: cached LSE must be [H, L]");
    }
    if (!cached_lse.all_finite()) throw std::invalid_argument("lse_cached_search: cached LSE has non-finite entries");
    return detail::block_score_pass(q, k, cached_lse, grid);
}

/// Blocks whose token range intersects the text segment.
inline std::vector<bool> text_blocks(const SequenceLayout& layout, const BlockGrid& grid) {
    std::vector<bool> out(grid.blocks(), false);
    if (layout.text() == 0) return out;
    for (std::size_t p = 0; p < grid.blocks(); ++p) out[p] = grid.end(p) > layout.text_begin();
    return out;
}

/// Top-k block selection per head.
///
/// Text-sink cells (query or key block touching text) are always kept and sit
/// outside the budget. Row-wise mode keeps round((1 - s) * n) blocks in each
/// non-sink row, n being the row's non-sink cell count; global mode keeps
/// ceil((1 - s) * N) of the N non-sink cells. Ties go to the lower
/// (row, col).
template <typename Real>
BlockMask select_topk_mask(const BlockScoreMatrix<Real>& scores, const std::vector<double>& per_head_sparsity,
                           const SequenceLayout& layout, const SparsityConfig& config) {
    const BlockGrid& grid = scores.grid();
    const std::size_t heads = scores.heads();
    const std::size_t n = grid.blocks();
    if (per_head_sparsity.size() != heads) throw std::invalid_argument("select_topk_mask: one sparsity per head required");
    if (layout.length() != grid.length()) throw std::invalid_argument("select_topk_mask: layout length != grid length");

    BlockMask mask(heads, grid);
    mask.set_flags(config.text_sink, config.row_wise);
    if (config.text_sink) {
        const auto text = text_blocks(layout, grid);
        for (std::size_t p = 0; p < n; ++p)
            if (text[p]) mask.mark_sink_block(p);
    }

    std::vector<std::size_t> free_cols;
    for (std::size_t q = 0; q < n; ++q)
        if (!mask.is_sink_block(q)) free_cols.push_back(q);

    for (std::size_t h = 0; h < heads; ++h) {
        const double s = per_head_sparsity[h];
        if (!(s >= 0.0 && s < 1.0)) {
            throw std::invalid_argument("select_topk_mask: sparsity of head " + std::to_string(h) + " outside [0, 1)");
        }
        mask.set_sparsity(h, s);
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = 0; q < n; ++q)
                if (mask.is_sink_cell(p, q)) mask.set(h, p, q, true);

        auto by_score = [&](std::size_t pa, std::size_t qa, std::size_t pb, std::size_t qb) {
            const Real a = scores(h, pa, qa);
            const Real b = scores(h, pb, qb);
            if (a != b) return a > b;
            return pa != pb ? pa < pb : qa < qb;
        };

        if (config.row_wise) {
            const std::size_t k_row = std::min(free_cols.size(), detail::round_budget((1.0 - s) * free_cols.size()));
            for (std::size_t p = 0; p < n; ++p) {
                if (mask.is_sink_block(p) || free_cols.empty()) continue;
                if (k_row == 0) {
                    std::ostringstream oss;
                    oss << "select_topk_mask: sparsity " << s << " leaves no block in row " << p << " of head " << h;
                    throw std::invalid_argument(oss.str());
                }
                std::vector<std::size_t> cols = free_cols;
                std::partial_sort(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(k_row), cols.end(),
                                  [&](std::size_t a, std::size_t b) { return by_score(p, a, p, b); });
                for (std::size_t c = 0; c < k_row; ++c) mask.set(h, p, cols[c], true);
            }
        } else {
            std::vector<std::size_t> cells;
            for (std::size_t p = 0; p < n; ++p)
                for (std::size_t q = 0; q < n; ++q)
                    if (!mask.is_sink_cell(p, q)) cells.push_back(p * n + q);
            if (cells.empty()) continue;
            const std::size_t budget = detail::ceil_budget((1.0 - s) * static_cast<double>(cells.size()));
            if (budget == 0) {
                throw std::invalid_argument("select_topk_mask: zero block budget for head " + std::to_string(h));
            }
            const std::size_t keep = std::min(budget, cells.size());
            std::partial_sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(keep), cells.end(),
                              [&](std::size_t a, std::size_t b) { return by_score(a / n, a % n, b / n, b % n); });
            for (std::size_t c = 0; c < keep; ++c) mask.set(h, cells[c] / n, cells[c] % n, true);
        }
    }
    return mask;
}

template <typename Real>
BlockMask select_topk_mask(const BlockScoreMatrix<Real>& scores, double sparsity, const SequenceLayout& layout,
                           const SparsityConfig& config) {
    return select_topk_mask(scores, std::vector<double>(scores.heads(), sparsity), layout, config);
}

/// Selected block mass over total block mass, per head. Because block scores
/// are exact partial sums of W_attn this equals element-level recall of the
/// expanded mask.
template <typename Real>
std::vector<double> recall_from_scores(const BlockScoreMatrix<Real>& scores, const BlockMask& mask) {
    if (scores.heads() != mask.heads() || !(scores.grid() == mask.grid())) {
        throw std::invalid_argument("recall_from_scores: score/mask shape mismatch");
    }
    std::vector<double> out(scores.heads(), 0.0);
    const std::size_t n = scores.blocks();
    for (std::size_t h = 0; h < scores.heads(); ++h) {
        double selected = 0.0;
        double total = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = 0; q < n; ++q) {
                const double s = static_cast<double>(scores(h, p, q));
                total += s;
                if (mask(h, p, q)) selected += s;
            }
        out[h] = total > 0.0 ? selected / total : 0.0;
    }
    return out;
}

inline double raised_tier(double base) { return (1.0 + base) / 2.0; }
inline double lowered_tier(double base) { return (3.0 * base - 1.0) / 2.0; }

/// Hierarchical per-head sparsity. Heads are ranked by recall of the
/// uniform-sparsity mask (ties: lower head first); with n = min(#heads whose
/// recall > threshold, H / 2) the first n heads move to the raised tier and
/// the last n to the lowered tier, which keeps the mean at `base`.
template <typename Real>
std::vector<double> head_adaptive_sparsities(const BlockScoreMatrix<Real>& scores, double base, double threshold,
                                             const SequenceLayout& layout, const SparsityConfig& config) {
    if (!(base >= 1.0 / 3.0 && base < 1.0)) {
        throw std::invalid_argument("head_adaptive_sparsities: base sparsity must lie in [1/3, 1) so the lowered tier "
                                    "stays non-negative");
    }
    const std::size_t heads = scores.heads();
    const auto provisional = select_topk_mask(scores, base, layout, config);
    const auto recalls = recall_from_scores(scores, provisional);

    std::vector<std::size_t> ranked(heads);
    std::iota(ranked.begin(), ranked.end(), std::size_t{0});
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](std::size_t a, std::size_t b) { return recalls[a] > recalls[b]; });

    const auto above = static_cast<std::size_t>(
        std::count_if(recalls.begin(), recalls.end(), [&](double r) { return r > threshold; }));
    const std::size_t tiers = std::min(above, heads / 2);

    std::vector<double> out(heads, base);
    for (std::size_t r = 0; r < tiers; ++r) {
        out[ranked[r]] = raised_tier(base);
        out[ranked[heads - 1 - r]] = lowered_tier(base);
    }
    return out;
}

/// Mask for one search step: head-adaptive tiers when enabled, otherwise the
/// uniform base sparsity.
template <typename Real>
BlockMask search_mask(const BlockScoreMatrix<Real>& scores, const SequenceLayout& layout,
                      const SparsityConfig& config) {
    config.validate();
    const auto sparsities = config.head_adaptive
                                ? head_adaptive_sparsities(scores, config.sparsity, config.recall_threshold, layout,
                                                           config)
                                : std::vector<double>(scores.heads(), config.sparsity);
    return select_topk_mask(scores, sparsities, layout, config);
}

}  // namespace adaspa
