#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace adaspa {

/// Token geometry of one 3D-full-attention sequence: f latent frames of an
/// h x w spatial grid followed by t text tokens (text-last).
class SequenceLayout {
public:
    SequenceLayout() = default;

    SequenceLayout(std::size_t frames, std::size_t height, std::size_t width, std::size_t text)
        : frames_(frames), height_(height), width_(width), text_(text) {
        if (frames == 0 || height == 0 || width == 0) {
            throw std::invalid_argument("SequenceLayout: frames, height and width must be positive");
        }
    }

    std::size_t frames() const noexcept { return frames_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t text() const noexcept { return text_; }

    std::size_t tokens_per_frame() const noexcept { return height_ * width_; }
    std::size_t video_tokens() const noexcept { return frames_ * height_ * width_; }
    /// First text token index; equals L when there is no text.
    std::size_t text_begin() const noexcept { return video_tokens(); }
    std::size_t length() const noexcept { return video_tokens() + text_; }

    bool is_text(std::size_t token) const noexcept { return token >= text_begin() && token < length(); }
    std::size_t frame_of(std::size_t token) const noexcept { return token / tokens_per_frame(); }

    friend bool operator==(const SequenceLayout&, const SequenceLayout&) = default;

private:
    std::size_t frames_ = 1;
    std::size_t height_ = 1;
    std::size_t width_ = 1;
    std::size_t text_ = 0;
};

inline SequenceLayout make_layout(std::size_t f, std::size_t h, std::size_t w, std::size_t t) {
    return SequenceLayout(f, h, w, t);
}

/// Partition of [0, L) into ceil(L/B) blocks; the trailing block may be short.
class BlockGrid {
public:
    BlockGrid() = default;

    BlockGrid(std::size_t length, std::size_t block_size) : length_(length), block_size_(block_size) {
        if (length == 0) throw std::invalid_argument("BlockGrid: length must be positive");
        if (block_size == 0) throw std::invalid_argument("BlockGrid: block size must be positive");
        blocks_ = (length + block_size - 1) / block_size;
    }

    std::size_t length() const noexcept { return length_; }
    std::size_t block_size() const noexcept { return block_size_; }
    std::size_t blocks() const noexcept { return blocks_; }
    std::size_t cells() const noexcept { return blocks_ * blocks_; }

    std::size_t begin(std::size_t block) const noexcept { return block * block_size_; }
    std::size_t end(std::size_t block) const noexcept { return std::min(length_, (block + 1) * block_size_); }
    std::size_t valid_length(std::size_t block) const noexcept { return end(block) - begin(block); }
    /// Number of attention-matrix elements covered by cell (p, q).
    std::size_t cell_area(std::size_t p, std::size_t q) const noexcept { return valid_length(p) * valid_length(q); }

    friend bool operator==(const BlockGrid&, const BlockGrid&) = default;

private:
    std::size_t length_ = 1;
    std::size_t block_size_ = 1;
    std::size_t blocks_ = 1;
};

struct BlockIndex {
    std::size_t block;
    std::size_t offset;
    friend bool operator==(const BlockIndex&, const BlockIndex&) = default;
};

inline BlockIndex block_index_of(std::size_t token, std::size_t block_size, std::size_t length) {
    if (block_size == 0) throw std::invalid_argument("block_index_of: block size must be positive");
    if (token >= length) {
        throw std::out_of_range("block_index_of: token " + std::to_string(token) + " outside [0, " +
                                std::to_string(length) + ")");
    }
    return {token / block_size, token % block_size};
}

inline BlockIndex block_index_of(std::size_t token, const BlockGrid& grid) {
    return block_index_of(token, grid.block_size(), grid.length());
}

/// Dense row-major 3-index array [heads, rows, cols]. Used for Q/K/V ([H, L, D]),
/// outputs, and attention weights ([H, L, L]).
template <typename Real = double>
class Tensor3 {
public:
    using value_type = Real;

    Tensor3() = default;
    Tensor3(std::size_t heads, std::size_t rows, std::size_t cols, Real fill = Real(0))
        : heads_(heads), rows_(rows), cols_(cols), data_(heads * rows * cols, fill) {}

    std::size_t heads() const noexcept { return heads_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    Real& operator()(std::size_t h, std::size_t i, std::size_t j) noexcept {
        return data_[(h * rows_ + i) * cols_ + j];
    }
    Real operator()(std::size_t h, std::size_t i, std::size_t j) const noexcept {
        return data_[(h * rows_ + i) * cols_ + j];
    }

    std::span<Real> row(std::size_t h, std::size_t i) noexcept {
        return {data_.data() + (h * rows_ + i) * cols_, cols_};
    }
    std::span<const Real> row(std::size_t h, std::size_t i) const noexcept {
        return {data_.data() + (h * rows_ + i) * cols_, cols_};
    }

    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }

    bool same_shape(const Tensor3& other) const noexcept {
        return heads_ == other.heads_ && rows_ == other.rows_ && cols_ == other.cols_;
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    friend bool operator==(const Tensor3&, const Tensor3&) = default;

private:
    std::size_t heads_ = 0;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Real> data_;
};

/// Q, K, V and attention outputs: [H heads, L tokens, D head-dim].
template <typename Real = double>
using AttnTensor = Tensor3<Real>;

/// One log-sum-exp per (head, query row).
template <typename Real = double>
class LseVector {
public:
    LseVector() = default;
    LseVector(std::size_t heads, std::size_t length, Real fill = Real(0))
        : heads_(heads), length_(length), data_(heads * length, fill) {}

    std::size_t heads() const noexcept { return heads_; }
    std::size_t length() const noexcept { return length_; }

    Real& operator()(std::size_t h, std::size_t i) noexcept { return data_[h * length_ + i]; }
    Real operator()(std::size_t h, std::size_t i) const noexcept { return data_[h * length_ + i]; }

    std::span<Real> values() noexcept { return data_; }
    std::span<const Real> values() const noexcept { return data_; }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
    }

    friend bool operator==(const LseVector&, const LseVector&) = default;

private:
    std::size_t heads_ = 0;
    std::size_t length_ = 0;
    std::vector<Real> data_;
};

// ---------------------------------------------------------------------------
// Deterministic randomness.
//
// Counter-based: element n of the stream for `seed` is splitmix64(seed, n).
// Normals use Box-Muller over the uniform pair (2k, 2k+1); entry 2k takes the
// cosine branch and entry 2k+1 the sine branch. Any implementation of
// SplitMix64 + Box-Muller reproduces the same tensors from the seed alone.
// ---------------------------------------------------------------------------

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent sub-seed for a named stream (tensor role, step, head...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return splitmix64(splitmix64(seed) ^ (tag * 0xD1B54A32D192ED03ull + 0x8CB92BA72F3D8DD7ull));
}

class CounterRng {
public:
    explicit constexpr CounterRng(std::uint64_t seed) noexcept : seed_(seed) {}

    constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
        return splitmix64(seed_ ^ splitmix64(counter));
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform(std::uint64_t counter) const noexcept {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    double normal(std::uint64_t index) const noexcept {
        const std::uint64_t pair = index / 2;
        const double u1 = uniform(2 * pair);
        const double u2 = uniform(2 * pair + 1);
        const double radius = std::sqrt(-2.0 * std::log1p(-u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        return (index % 2 == 0) ? radius * std::cos(angle) : radius * std::sin(angle);
    }

private:
    std::uint64_t seed_;
};

template <typename Real = double>
AttnTensor<Real> seeded_tensor(std::size_t heads, std::size_t length, std::size_t dim, std::uint64_t seed,
                               double scale = 1.0) {
    if (heads == 0 || length == 0 || dim == 0) {
        throw std::invalid_argument("seeded_tensor: dimensions must be positive");
    }
    AttnTensor<Real> out(heads, length, dim);
    const CounterRng rng(seed);
    auto values = out.values();
    for (std::size_t n = 0; n < values.size(); ++n) {
        values[n] = static_cast<Real>(scale * rng.normal(n));
    }
    return out;
}

namespace detail {

template <typename Real>
void require_qkv(const AttnTensor<Real>& q, const AttnTensor<Real>& k, const AttnTensor<Real>& v,
                 const char* where) {
    if (!q.same_shape(k) || !q.same_shape(v)) {
        std::ostringstream oss;
        oss << where << ": Q/K/V shape mismatch (" << q.heads() << "x" << q.rows() << "x" << q.cols() << ", "
            << k.heads() << "x" << k.rows() << "x" << k.cols() << ", " << v.heads() << "x" << v.rows() << "x"
            << v.cols() << ")";
        throw std::invalid_argument(oss.str());
    }
    if (q.heads() == 0 || q.rows() == 0 || q.cols() == 0) {
        throw std::invalid_argument(std::string(where) + ": empty tensor");
    }
}

template <typename Real>
void require_qk(const AttnTensor<Real>& q, const AttnTensor<Real>& k, const char* where) {
    require_qkv(q, k, k, where);
}

template <typename Real>
Real dot(std::span<const Real> a, std::span<const Real> b) noexcept {
    Real acc = 0;
    for (std::size_t d = 0; d < a.size(); ++d) acc += a[d] * b[d];
    return acc;
}

inline double round_half_up(double x) { return std::floor(x + 0.5); }

}  // namespace detail

}  // namespace adaspa
