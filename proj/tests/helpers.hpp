#pragma once

#include <cmath>

#include "blendcore/rng.hpp"
#include "blendcore/tensor.hpp"

namespace testutil {

template <typename T>
blendcore::Tensor4<T> random_tensor(blendcore::Rng& rng, std::int64_t n, std::int64_t c,
                                    std::int64_t h, std::int64_t w, double lo = -1.0,
                                    double hi = 1.0) {
    blendcore::Tensor4<T> t(n, c, h, w);
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
double max_abs_diff(const blendcore::Tensor4<T>& a, const blendcore::Tensor4<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

template <typename T>
bool bit_equal(const blendcore::Tensor4<T>& a, const blendcore::Tensor4<T>& b) {
    return a.same_shape(b) && a.data == b.data;
}

}  // namespace testutil
