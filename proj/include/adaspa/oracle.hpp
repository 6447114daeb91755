#pragma once

// Brute-force references: dense attention with materialized weights, exact
// LSE, block sums, recall, and the continuous baseline patterns. Everything
// here is deliberately O(L^2) and loop-simple so kernels can be checked
// against it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaspa/blocks.hpp"
#include "adaspa/core.hpp"

namespace adaspa {

template <typename Real = double>
struct DenseAttnResult {
    AttnTensor<Real> output;  // [H, L, D]
    Tensor3<Real> weights;    // [H, L, L], rows sum to 1
    LseVector<Real> lse;      // [H, L]
};

namespace detail {

template <typename Real>
DenseAttnResult<Real> dense_impl(const AttnTensor<Real>& q, const AttnTensor<Real>& k, const AttnTensor<Real>& v,
                                 const ElementMask* mask, std::optional<double> bias, const char* where) {
    require_qkv(q, k, v, where);
    const std::size_t heads = q.heads();
    const std::size_t length = q.rows();
    const std::size_t dim = q.cols();
    if (mask != nullptr && (mask->length() != length || (mask->heads() != 1 && mask->heads() != heads))) {
        throw std::invalid_argument(std::string(where) + ": mask shape does not match Q/K/V");
    }

    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dim));
    constexpr Real neg_inf = -std::numeric_limits<Real>::infinity();

    DenseAttnResult<Real> result{AttnTensor<Real>(heads, length, dim), Tensor3<Real>(heads, length, length),
                                 LseVector<Real>(heads, length)};
    std::vector<Real> logits(length);

    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < length; ++i) {
            const auto qi = q.row(h, i);
            bool any_kept = false;
            for (std::size_t j = 0; j < length; ++j) {
                Real z = dot<Real>(qi, k.row(h, j)) * scale;
                const bool kept = mask == nullptr || (*mask)(h, i, j);
                any_kept = any_kept || kept;
                if (!kept) z = bias ? z - static_cast<Real>(*bias) : neg_inf;
                logits[j] = z;
            }
            if (!any_kept) {
                throw std::invalid_argument(std::string(where) + ": query row " + std::to_string(i) + " of head " +
                                            std::to_string(h) + " is fully masked");
            }

            const Real row_max = *std::max_element(logits.begin(), logits.end());
            Real sum = 0;
            for (std::size_t j = 0; j < length; ++j) sum += std::exp(logits[j] - row_max);

            auto w = result.weights.row(h, i);
            for (std::size_t j = 0; j < length; ++j) w[j] = std::exp(logits[j] - row_max) / sum;
            result.lse(h, i) = row_max + std::log(sum);

            auto out = result.output.row(h, i);
            for (std::size_t j = 0; j < length; ++j) {
                if (w[j] == Real(0)) continue;
                const auto vj = v.row(h, j);
                for (std::size_t d = 0; d < dim; ++d) out[d] += w[j] * vj[d];
            }
        }
    }
    return result;
}

}  // namespace detail

/// softmax(QK^T / sqrt(D)) V with the max-shifted (safe) softmax.
template <typename Real>
DenseAttnResult<Real> dense_attention(const AttnTensor<Real>& q, const AttnTensor<Real>& k,
                                      const AttnTensor<Real>& v) {
    return detail::dense_impl<Real>(q, k, v, nullptr, std::nullopt, "dense_attention");
}

/// Dense attention with masked logits. With no bias the masked entries are
/// excluded exactly (logit -inf); a finite `bias` subtracts c from them
/// instead, which only exists to compare against the exact mode.
template <typename Real>
DenseAttnResult<Real> masked_dense_attention(const AttnTensor<Real>& q, const AttnTensor<Real>& k,
                                             const AttnTensor<Real>& v, const ElementMask& mask,
                                             std::optional<double> bias = std::nullopt) {
    if (bias && !(*bias > 0.0)) throw std::invalid_argument("masked_dense_attention: bias must be positive");
    return detail::dense_impl<Real>(q, k, v, &mask, bias, "masked_dense_attention");
}

/// Scaled logits QK^T / sqrt(D) for every head; [H, L, L].
template <typename Real>
Tensor3<Real> attention_logits(const AttnTensor<Real>& q, const AttnTensor<Real>& k) {
    detail::require_qk(q, k, "attention_logits");
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(q.cols()));
    Tensor3<Real> out(q.heads(), q.rows(), q.rows());
    for (std::size_t h = 0; h < q.heads(); ++h)
        for (std::size_t i = 0; i < q.rows(); ++i)
            for (std::size_t j = 0; j < q.rows(); ++j) out(h, i, j) = detail::dot<Real>(q.row(h, i), k.row(h, j)) * scale;
    return out;
}

/// Sum of W_attn inside each (query block, key block) cell, row-major order.
template <typename Real>
BlockScoreMatrix<Real> block_sum_oracle(const Tensor3<Real>& weights, const BlockGrid& grid) {
    if (weights.rows() != grid.length() || weights.cols() != grid.length()) {
        throw std::invalid_argument("block_sum_oracle: weights are not [H, L, L] for the grid length");
    }
    BlockScoreMatrix<Real> out(weights.heads(), grid);
    const std::size_t b = grid.block_size();
    for (std::size_t h = 0; h < weights.heads(); ++h)
        for (std::size_t i = 0; i < grid.length(); ++i)
            for (std::size_t j = 0; j < grid.length(); ++j) out(h, i / b, j / b) += weights(h, i, j);
    return out;
}

/// Selected attention mass over total attention mass, per head. The
/// denominator is the actual sum of W rather than the nominal L.
template <typename Real>
std::vector<double> recall(const Tensor3<Real>& weights, const ElementMask& mask) {
    if (mask.length() != weights.rows() || (mask.heads() != 1 && mask.heads() != weights.heads())) {
        throw std::invalid_argument("recall: mask shape does not match weights");
    }
    std::vector<double> out(weights.heads(), 0.0);
    for (std::size_t h = 0; h < weights.heads(); ++h) {
        double selected = 0.0;
        double total = 0.0;
        for (std::size_t i = 0; i < weights.rows(); ++i)
            for (std::size_t j = 0; j < weights.cols(); ++j) {
                const double w = static_cast<double>(weights(h, i, j));
                total += w;
                if (mask(h, i, j)) selected += w;
            }
        out[h] = total > 0.0 ? selected / total : 0.0;
    }
    return out;
}

template <typename Real>
std::vector<double> recall(const Tensor3<Real>& weights, const BlockMask& mask) {
    return recall(weights, expand(mask));
}

enum class PatternKind { Topk, Col, Diag, DiagCol, Block };

inline const char* to_string(PatternKind kind) noexcept {
    switch (kind) {
        case PatternKind::Topk: return "topk";
        case PatternKind::Col: return "col";
        case PatternKind::Diag: return "diag";
        case PatternKind::DiagCol: return "diag_col";
        case PatternKind::Block: return "block";
    }
    return "?";
}

inline constexpr PatternKind all_pattern_kinds[] = {PatternKind::Topk, PatternKind::Block, PatternKind::Col,
                                                    PatternKind::Diag, PatternKind::DiagCol};

/// ceil((1 - s) * count), guarded against the ceiling of representation error
/// (0.1 * 100 must give 10, not 11).
inline std::size_t keep_budget(double sparsity, std::size_t count) {
    if (!(sparsity >= 0.0 && sparsity < 1.0)) {
        throw std::invalid_argument("sparsity must lie in [0, 1), got " + std::to_string(sparsity));
    }
    const double raw = (1.0 - sparsity) * static_cast<double>(count);
    const auto budget = static_cast<std::size_t>(std::ceil(raw - 1e-9));
    return std::min(budget, count);
}

namespace detail {

/// Indices sorted by value descending; ties keep the lower index first.
template <typename Real>
std::vector<std::size_t> rank_descending(std::span<const Real> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    return order;
}

template <typename Real>
void fill_columns(const Tensor3<Real>& w, std::size_t h, std::size_t budget, ElementMask& mask) {
    const std::size_t length = w.rows();
    std::vector<Real> mass(length, Real(0));
    for (std::size_t i = 0; i < length; ++i)
        for (std::size_t j = 0; j < length; ++j) mass[j] += w(h, i, j);
    std::size_t used = 0;
    for (std::size_t j : rank_descending<Real>(mass)) {
        for (std::size_t i = 0; i < length && used < budget; ++i) {
            if (mask(h, i, j)) continue;
            mask.set(h, i, j, true);
            ++used;
        }
        if (used == budget) break;
    }
}

inline std::size_t fill_band(std::size_t length, std::size_t h, std::size_t budget, ElementMask& mask) {
    std::size_t used = 0;
    for (std::size_t dist = 0; dist < length && used < budget; ++dist) {
        for (std::size_t i = 0; i < length && used < budget; ++i) {
            if (i >= dist) {
                mask.set(h, i, i - dist, true);
                ++used;
            }
            if (dist > 0 && i + dist < length && used < budget) {
                mask.set(h, i, i + dist, true);
                ++used;
            }
        }
    }
    return used;
}

}  // namespace detail

/// Element-level baseline mask for each head with at most
/// ceil((1 - sparsity) * L^2) kept elements.
///
///  Topk    : the budget largest weights.
///  Col     : whole columns in order of column mass, last one partial.
///  Diag    : band centred on the diagonal, filled by distance |i - j|.
///  DiagCol : half the budget to the band, the rest to columns.
///  Block   : best blocks by block sum (block_size grid) while they fit.
template <typename Real>
ElementMask build_baseline_pattern(PatternKind kind, const Tensor3<Real>& weights, double sparsity,
                                   std::size_t block_size = 64) {
    const std::size_t heads = weights.heads();
    const std::size_t length = weights.rows();
    if (weights.cols() != length) throw std::invalid_argument("build_baseline_pattern: weights must be [H, L, L]");
    const std::size_t budget = keep_budget(sparsity, length * length);
    if (budget == 0) throw std::invalid_argument("build_baseline_pattern: zero element budget");

    ElementMask mask(heads, length);
    if (budget == length * length) {
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < length; ++i)
                for (std::size_t j = 0; j < length; ++j) mask.set(h, i, j, true);
        return mask;
    }

    for (std::size_t h = 0; h < heads; ++h) {
        switch (kind) {
            case PatternKind::Topk: {
                const auto flat = std::span<const Real>(weights.values().data() + h * length * length, length * length);
                const auto order = detail::rank_descending<Real>(flat);
                for (std::size_t n = 0; n < budget; ++n) mask.set(h, order[n] / length, order[n] % length, true);
                break;
            }
            case PatternKind::Col:
                detail::fill_columns(weights, h, budget, mask);
                break;
            case PatternKind::Diag:
                detail::fill_band(length, h, budget, mask);
                break;
            case PatternKind::DiagCol: {
                const std::size_t used = detail::fill_band(length, h, budget / 2, mask);
                detail::fill_columns(weights, h, budget - used, mask);
                break;
            }
            case PatternKind::Block: {
                const BlockGrid grid(length, block_size);
                Tensor3<Real> single(1, length, length);
                std::copy_n(weights.values().begin() + static_cast<std::ptrdiff_t>(h * length * length),
                            length * length, single.values().begin());
                const auto sums = block_sum_oracle(single, grid);
                std::size_t used = 0;
                for (std::size_t cell : detail::rank_descending<Real>(sums.head(0))) {
                    const std::size_t p = cell / grid.blocks();
                    const std::size_t q = cell % grid.blocks();
                    if (used + grid.cell_area(p, q) > budget) break;
                    used += grid.cell_area(p, q);
                    for (std::size_t i = grid.begin(p); i < grid.end(p); ++i)
                        for (std::size_t j = grid.begin(q); j < grid.end(q); ++j) mask.set(h, i, j, true);
                }
                break;
            }
        }
    }
    return mask;
}

/// Keeps the `budget[h]` cells with the largest block sums; ties broken by
/// (row, col) lexicographic order.
template <typename Real>
BlockMask optimal_block_mask_oracle(const Tensor3<Real>& weights, const BlockGrid& grid,
                                    const std::vector<std::size_t>& budget_per_head) {
    if (budget_per_head.size() != weights.heads()) {
        throw std::invalid_argument("optimal_block_mask_oracle: one budget per head required");
    }
    const auto sums = block_sum_oracle(weights, grid);
    BlockMask mask(weights.heads(), grid);
    for (std::size_t h = 0; h < weights.heads(); ++h) {
        const std::size_t budget = budget_per_head[h];
        if (budget > grid.cells()) throw std::invalid_argument("optimal_block_mask_oracle: budget exceeds cell count");
        const auto order = detail::rank_descending<Real>(sums.head(h));
        for (std::size_t n = 0; n < budget; ++n) mask.set(h, order[n] / grid.blocks(), order[n] % grid.blocks(), true);
        mask.set_sparsity(h, 1.0 - static_cast<double>(budget) / static_cast<double>(grid.cells()));
    }
    return mask;
}

template <typename Real>
BlockMask optimal_block_mask_oracle(const Tensor3<Real>& weights, const BlockGrid& grid, std::size_t budget) {
    return optimal_block_mask_oracle(weights, grid, std::vector<std::size_t>(weights.heads(), budget));
}

}  // namespace adaspa
