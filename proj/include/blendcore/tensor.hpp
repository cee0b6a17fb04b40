#pragma once

#include <cstdint>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace blendcore {

// Dense rank-4 array in (n, c, h, w) layout, row-major, w fastest.
// All pixel/feature maps in the library are carried in this type.
template <typename T>
struct Tensor4 {
    std::int64_t n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor4() = default;
    Tensor4(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_, T fill = T(0))
        : n(n_), c(c_), h(h_), w(w_) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
            throw std::invalid_argument("Tensor4: negative dimension");
        data.assign(static_cast<std::size_t>(n_ * c_ * h_ * w_), fill);
    }

    std::int64_t size() const { return n * c * h * w; }

    std::int64_t index(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) const {
        return ((in * c + ic) * h + ih) * w + iw;
    }

    T& at(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) {
        return data[static_cast<std::size_t>(index(in, ic, ih, iw))];
    }
    const T& at(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) const {
        return data[static_cast<std::size_t>(index(in, ic, ih, iw))];
    }

    T* plane(std::int64_t in, std::int64_t ic) { return data.data() + index(in, ic, 0, 0); }
    const T* plane(std::int64_t in, std::int64_t ic) const { return data.data() + index(in, ic, 0, 0); }

    bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }

    std::string shape_str() const {
        return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
               std::to_string(w);
    }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

template <typename T>
Tensor4<T> zeros_like(const Tensor4<T>& t) {
    return Tensor4<T>(t.n, t.c, t.h, t.w);
}

template <typename T>
void require_shape_match(const Tensor4<T>& a, const Tensor4<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

// Lossy conversion between the two supported precisions.
template <typename To, typename From>
Tensor4<To> cast_tensor(const Tensor4<From>& t) {
    Tensor4<To> out(t.n, t.c, t.h, t.w);
    for (std::size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
    return out;
}

}  // namespace blendcore
