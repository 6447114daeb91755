#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaspa/blocks.hpp"
#include "adaspa/core.hpp"
#include "adaspa/flashblock.hpp"

namespace adaspa {

/// A query block row with no kept key block: softmax over nothing.
class EmptyRowError : public std::invalid_argument {
public:
    EmptyRowError(std::size_t head, std::size_t block_row)
        : std::invalid_argument("block mask keeps no key block for head " + std::to_string(head) + ", block row " +
                                std::to_string(block_row)),
          head_(head),
          block_row_(block_row) {}

    std::size_t head() const noexcept { return head_; }
    std::size_t block_row() const noexcept { return block_row_; }

private:
    std::size_t head_;
    std::size_t block_row_;
};

template <typename Real = double>
struct SparseAttnResult {
    AttnTensor<Real> output;  // [H, L, D]
    /// Sparse LSE: normalizer over kept blocks only, not the full-attention LSE.
    LseVector<Real> sparse_lse;
    std::vector<std::size_t> skipped_blocks;  // per head
    std::vector<std::size_t> kept_blocks;     // per head
};

enum class VisitOrder { Ascending, Descending };

/// Flash-style forward that visits only the kept (query block, key block)
/// cells of each head's own mask.
template <typename Real>
SparseAttnResult<Real> block_sparse_forward(const AttnTensor<Real>& q, const AttnTensor<Real>& k,
                                            const AttnTensor<Real>& v, const BlockMask& mask,
                                            VisitOrder order = VisitOrder::Ascending) {
    detail::require_qkv(q, k, v, "block_sparse_forward");
    const BlockGrid& grid = mask.grid();
    if (grid.length() != q.rows() || mask.heads() != q.heads()) {
        throw std::invalid_argument("block_sparse_forward: mask grid/heads do not match Q/K/V");
    }
    const std::size_t heads = q.heads();
    const std::size_t dim = q.cols();
    const std::size_t n = grid.blocks();
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dim));

    SparseAttnResult<Real> result{AttnTensor<Real>(heads, q.rows(), dim), LseVector<Real>(heads, q.rows()),
                                  std::vector<std::size_t>(heads, 0), std::vector<std::size_t>(heads, 0)};
    std::vector<Real> logits(grid.block_size());
    std::vector<std::size_t> visit;
    visit.reserve(n);

    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t p = 0; p < n; ++p) {
            visit.clear();
            for (std::size_t c = 0; c < n; ++c) {
                const std::size_t kb = order == VisitOrder::Ascending ? c : n - 1 - c;
                if (mask(h, p, kb)) visit.push_back(kb);
            }
            if (visit.empty()) throw EmptyRowError(h, p);
            result.kept_blocks[h] += visit.size();

            for (std::size_t i = grid.begin(p); i < grid.end(p); ++i) {
                OnlineSoftmaxRow<Real> row(dim);
                for (std::size_t kb : visit) row.visit(q.row(h, i), k, v, h, grid.begin(kb), grid.end(kb), scale, logits);
                row.write_output(result.output.row(h, i));
                result.sparse_lse(h, i) = row.lse();
            }
        }
        result.skipped_blocks[h] = grid.cells() - result.kept_blocks[h];
    }
    return result;
}

struct FlopCount {
    double dense = 0.0;   // 4 L^2 D per head, summed over heads
    double sparse = 0.0;  // 4 * (elements in kept cells) * D, summed over heads
    double ratio() const noexcept { return dense > 0.0 ? sparse / dense : 0.0; }
};

/// FLOPs of QK^T plus PV (2 multiply-adds each) for dense attention and for
/// the cells a mask keeps; partial trailing blocks count only valid elements.
inline FlopCount flop_count(const BlockMask& mask, std::size_t length, std::size_t dim) {
    const BlockGrid& grid = mask.grid();
    if (grid.length() != length) throw std::invalid_argument("flop_count: mask grid length != L");
    FlopCount out;
    const double per_element = 4.0 * static_cast<double>(dim);
    for (std::size_t h = 0; h < mask.heads(); ++h) {
        out.dense += per_element * static_cast<double>(length) * static_cast<double>(length);
        for (std::size_t p = 0; p < grid.blocks(); ++p)
            for (std::size_t q = 0; q < grid.blocks(); ++q)
                if (mask(h, p, q)) out.sparse += per_element * static_cast<double>(grid.cell_area(p, q));
    }
    return out;
}

}  // namespace adaspa
