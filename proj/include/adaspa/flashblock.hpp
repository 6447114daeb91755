#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "adaspa/core.hpp"

namespace adaspa {

template <typename Real = double>
struct FlashResult {
    AttnTensor<Real> output;  // [H, L, D]
    LseVector<Real> lse;      // [H, L]
};

/// Running state of one query row under the online-softmax recurrence:
///   m' = max(m, max_j z_j)
///   l' = exp(m - m') l + sum_j exp(z_j - m')
///   a' = exp(m - m') a + sum_j exp(z_j - m') v_j
/// After the last chunk, out = a / l and LSE = log(l) + m.
template <typename Real>
class OnlineSoftmaxRow {
public:
    explicit OnlineSoftmaxRow(std::size_t dim) : acc_(dim, Real(0)) {}

    /// Folds keys [begin, end) of head h into the state. `logits` is scratch
    /// of at least end - begin entries.
    void visit(std::span<const Real> query, const AttnTensor<Real>& k, const AttnTensor<Real>& v, std::size_t h,
               std::size_t begin, std::size_t end, Real scale, std::vector<Real>& logits) {
        const std::size_t count = end - begin;
        if (logits.size() < count) logits.resize(count);
        Real chunk_max = -std::numeric_limits<Real>::infinity();
        for (std::size_t c = 0; c < count; ++c) {
            logits[c] = detail::dot<Real>(query, k.row(h, begin + c)) * scale;
            chunk_max = std::max(chunk_max, logits[c]);
        }

        const Real new_max = std::max(running_max_, chunk_max);
        const Real alpha = std::exp(running_max_ - new_max);
        Real chunk_sum = 0;
        for (auto& a : acc_) a *= alpha;
        for (std::size_t c = 0; c < count; ++c) {
            const Real p = std::exp(logits[c] - new_max);
            chunk_sum += p;
            const auto vj = v.row(h, begin + c);
            for (std::size_t d = 0; d < acc_.size(); ++d) acc_[d] += p * vj[d];
        }
        running_sum_ = alpha * running_sum_ + chunk_sum;
        running_max_ = new_max;
    }

    bool empty() const noexcept { return running_sum_ == Real(0); }
    Real lse() const { return std::log(running_sum_) + running_max_; }

    void write_output(std::span<Real> out) const {
        const Real inv = Real(1) / running_sum_;
        for (std::size_t d = 0; d < acc_.size(); ++d) out[d] = acc_[d] * inv;
    }

private:
    Real running_max_ = -std::numeric_limits<Real>::infinity();
    Real running_sum_ = 0;
    std::vector<Real> acc_;
};

/// Blockwise attention: every query row walks key/value chunks of
/// `kernel_block` tokens in ascending order. The trailing chunk is simply
/// shorter, so padded keys never enter the max or the sum.
template <typename Real>
FlashResult<Real> flash_forward(const AttnTensor<Real>& q, const AttnTensor<Real>& k, const AttnTensor<Real>& v,
                                std::size_t kernel_block) {
    detail::require_qkv(q, k, v, "flash_forward");
    if (kernel_block == 0) throw std::invalid_argument("flash_forward: kernel block must be >= 1");

    const std::size_t heads = q.heads();
    const std::size_t length = q.rows();
    const std::size_t dim = q.cols();
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dim));

    FlashResult<Real> result{AttnTensor<Real>(heads, length, dim), LseVector<Real>(heads, length)};
    std::vector<Real> logits(std::min(kernel_block, length));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < length; ++i) {
            OnlineSoftmaxRow<Real> row(dim);
            for (std::size_t begin = 0; begin < length; begin += kernel_block) {
                row.visit(q.row(h, i), k, v, h, begin, std::min(length, begin + kernel_block), scale, logits);
            }
            row.write_output(result.output.row(h, i));
            result.lse(h, i) = row.lse();
        }
    }
    return result;
}

}  // namespace adaspa
