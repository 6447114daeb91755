#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>

#include "adaspa/adaspa.hpp"

namespace testutil {

template <typename A, typename B>
double max_abs(const A& a, const B& b) {
    const auto x = a.values();
    const auto y = b.values();
    double out = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) out = std::max(out, std::abs(static_cast<double>(x[n]) - static_cast<double>(y[n])));
    return out;
}

inline adaspa::AttnTensor<double> tensor(std::size_t h, std::size_t l, std::size_t d, std::uint64_t seed,
                                         double scale = 1.0) {
    return adaspa::seeded_tensor<double>(h, l, d, seed, scale);
}

// Jaccard index of two block masks over all heads.
inline double jaccard(const adaspa::BlockMask& a, const adaspa::BlockMask& b) {
    std::size_t both = 0, either = 0;
    for (std::size_t h = 0; h < a.heads(); ++h)
        for (std::size_t p = 0; p < a.blocks(); ++p)
            for (std::size_t q = 0; q < a.blocks(); ++q) {
                both += a(h, p, q) && b(h, p, q);
                either += a(h, p, q) || b(h, p, q);
            }
    return either ? static_cast<double>(both) / static_cast<double>(either) : 1.0;
}

}  // namespace testutil
