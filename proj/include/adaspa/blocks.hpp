#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaspa/core.hpp"

namespace adaspa {

/// Element-granularity attention mask [H, L, L]. A mask built with a single
/// head is shared by every head.
class ElementMask {
public:
    ElementMask() = default;
    ElementMask(std::size_t heads, std::size_t length, bool fill = false)
        : heads_(heads), length_(length), keep_(heads * length * length, fill ? 1 : 0) {
        if (heads == 0 || length == 0) throw std::invalid_argument("ElementMask: empty shape");
    }

    std::size_t heads() const noexcept { return heads_; }
    std::size_t length() const noexcept { return length_; }
    bool shared() const noexcept { return heads_ == 1; }

    bool operator()(std::size_t h, std::size_t i, std::size_t j) const noexcept {
        return keep_[index(h, i, j)] != 0;
    }
    void set(std::size_t h, std::size_t i, std::size_t j, bool value) noexcept {
        keep_[index(h, i, j)] = value ? 1 : 0;
    }

    std::size_t kept_count(std::size_t h) const noexcept {
        const std::size_t hh = shared() ? 0 : h;
        const auto first = keep_.begin() + static_cast<std::ptrdiff_t>(hh * length_ * length_);
        return static_cast<std::size_t>(
            std::count(first, first + static_cast<std::ptrdiff_t>(length_ * length_), std::uint8_t{1}));
    }

    friend bool operator==(const ElementMask&, const ElementMask&) = default;

private:
    std::size_t index(std::size_t h, std::size_t i, std::size_t j) const noexcept {
        const std::size_t hh = shared() ? 0 : h;
        return (hh * length_ + i) * length_ + j;
    }

    std::size_t heads_ = 0;
    std::size_t length_ = 0;
    std::vector<std::uint8_t> keep_;
};

/// Block-summed softmax mass W_sum_attn, one [n, n] grid per head.
template <typename Real = double>
class BlockScoreMatrix {
public:
    BlockScoreMatrix() = default;
    BlockScoreMatrix(std::size_t heads, BlockGrid grid)
        : heads_(heads), grid_(grid), scores_(heads * grid.cells(), Real(0)) {}

    std::size_t heads() const noexcept { return heads_; }
    const BlockGrid& grid() const noexcept { return grid_; }
    std::size_t blocks() const noexcept { return grid_.blocks(); }

    Real& operator()(std::size_t h, std::size_t p, std::size_t q) noexcept {
        return scores_[(h * grid_.blocks() + p) * grid_.blocks() + q];
    }
    Real operator()(std::size_t h, std::size_t p, std::size_t q) const noexcept {
        return scores_[(h * grid_.blocks() + p) * grid_.blocks() + q];
    }

    std::span<const Real> head(std::size_t h) const noexcept {
        return {scores_.data() + h * grid_.cells(), grid_.cells()};
    }

    Real total(std::size_t h) const noexcept {
        const auto s = head(h);
        return std::accumulate(s.begin(), s.end(), Real(0));
    }

    std::span<const Real> values() const noexcept { return scores_; }

    friend bool operator==(const BlockScoreMatrix&, const BlockScoreMatrix&) = default;

private:
    std::size_t heads_ = 0;
    BlockGrid grid_;
    std::vector<Real> scores_;
};

/// Per-head boolean block grid plus the bookkeeping the search attaches to it.
class BlockMask {
public:
    BlockMask() = default;
    BlockMask(std::size_t heads, BlockGrid grid, bool fill = false)
        : heads_(heads),
          grid_(grid),
          keep_(heads * grid.cells(), fill ? 1 : 0),
          sink_block_(grid.blocks(), 0),
          sparsity_(heads, 0.0) {
        if (heads == 0) throw std::invalid_argument("BlockMask: heads must be positive");
    }

    std::size_t heads() const noexcept { return heads_; }
    const BlockGrid& grid() const noexcept { return grid_; }
    std::size_t blocks() const noexcept { return grid_.blocks(); }

    bool operator()(std::size_t h, std::size_t p, std::size_t q) const noexcept {
        return keep_[(h * grid_.blocks() + p) * grid_.blocks() + q] != 0;
    }
    void set(std::size_t h, std::size_t p, std::size_t q, bool value) noexcept {
        keep_[(h * grid_.blocks() + p) * grid_.blocks() + q] = value ? 1 : 0;
    }

    /// Block intersects the text token range and text-sink was applied.
    bool is_sink_block(std::size_t p) const noexcept { return sink_block_[p] != 0; }
    bool is_sink_cell(std::size_t p, std::size_t q) const noexcept { return is_sink_block(p) || is_sink_block(q); }
    void mark_sink_block(std::size_t p) noexcept { sink_block_[p] = 1; }

    bool text_sink() const noexcept { return text_sink_; }
    bool row_wise() const noexcept { return row_wise_; }
    void set_flags(bool text_sink, bool row_wise) noexcept {
        text_sink_ = text_sink;
        row_wise_ = row_wise;
    }

    /// Nominal (requested) sparsity of head h.
    double sparsity(std::size_t h) const noexcept { return sparsity_[h]; }
    void set_sparsity(std::size_t h, double s) noexcept { sparsity_[h] = s; }

    std::size_t kept_count(std::size_t h) const noexcept {
        std::size_t n = 0;
        for (std::size_t c = 0; c < grid_.cells(); ++c) n += keep_[h * grid_.cells() + c];
        return n;
    }
    std::size_t kept_in_row(std::size_t h, std::size_t p) const noexcept {
        std::size_t n = 0;
        for (std::size_t q = 0; q < blocks(); ++q) n += (*this)(h, p, q) ? 1 : 0;
        return n;
    }
    std::size_t sink_cells() const noexcept {
        std::size_t n = 0;
        for (std::size_t p = 0; p < blocks(); ++p)
            for (std::size_t q = 0; q < blocks(); ++q) n += is_sink_cell(p, q) ? 1 : 0;
        return n;
    }
    std::size_t nonsink_cells() const noexcept { return grid_.cells() - sink_cells(); }
    std::size_t kept_nonsink_count(std::size_t h) const noexcept {
        std::size_t n = 0;
        for (std::size_t p = 0; p < blocks(); ++p)
            for (std::size_t q = 0; q < blocks(); ++q) n += ((*this)(h, p, q) && !is_sink_cell(p, q)) ? 1 : 0;
        return n;
    }

    /// Fraction of block cells skipped, counting always-on sink cells as kept.
    double effective_sparsity(std::size_t h) const noexcept {
        return 1.0 - static_cast<double>(kept_count(h)) / static_cast<double>(grid_.cells());
    }

    friend bool operator==(const BlockMask&, const BlockMask&) = default;

private:
    std::size_t heads_ = 0;
    BlockGrid grid_;
    std::vector<std::uint8_t> keep_;
    std::vector<std::uint8_t> sink_block_;
    std::vector<double> sparsity_;
    bool text_sink_ = false;
    bool row_wise_ = false;
};

inline ElementMask expand(const BlockMask& mask) {
    const BlockGrid& grid = mask.grid();
    ElementMask out(mask.heads(), grid.length());
    for (std::size_t h = 0; h < mask.heads(); ++h)
        for (std::size_t i = 0; i < grid.length(); ++i)
            for (std::size_t j = 0; j < grid.length(); ++j)
                out.set(h, i, j, mask(h, i / grid.block_size(), j / grid.block_size()));
    return out;
}

}  // namespace adaspa
