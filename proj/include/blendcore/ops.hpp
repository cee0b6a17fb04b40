#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "blendcore/parallel.hpp"
#include "blendcore/tensor.hpp"

// Elementary differentiable operations. Every op is a pure function, and any
// internal parallelism assigns each output element to exactly one thread with
// a fixed accumulation order, so results do not depend on the thread count.
//
// Resampling convention (used by both resizers and, in roi.hpp, by the RoI
// samplers): source coordinates are half-pixel centered. The sample point for
// output index i at scale = in/out is
//     src(i) = (i + 0.5) * scale - 0.5
// clamped to [0, in-1] for resizing. Nearest rounding breaks half-ties toward
// the lower index.

namespace blendcore {

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}
inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    return a >= 0 ? a / b : -((-a + b - 1) / b);
}

// nearest integer to x with half-ties toward the lower index
inline std::int64_t nearest_index(double x) {
    return static_cast<std::int64_t>(std::ceil(x - 0.5));
}

inline std::int64_t clamp_index(std::int64_t i, std::int64_t n) {
    return i < 0 ? 0 : (i >= n ? n - 1 : i);
}

// ---------------------------------------------------------------------------
// conv2d

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& input, const Tensor4<T>& weights, const std::vector<T>& bias,
                  std::int64_t stride, std::int64_t pad) {
    require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
    require(input.c == weights.c, "conv2d: input channels " + std::to_string(input.c) +
                                      " != weight c_in " + std::to_string(weights.c));
    require(bias.empty() || static_cast<std::int64_t>(bias.size()) == weights.n,
            "conv2d: bias length != c_out");
    const std::int64_t kh = weights.h, kw = weights.w;
    const std::int64_t oh = conv_out_dim(input.h, kh, stride, pad);
    const std::int64_t ow = conv_out_dim(input.w, kw, stride, pad);
    require(oh >= 1 && ow >= 1, "conv2d: output would be empty");

    Tensor4<T> out(input.n, weights.n, oh, ow);
    parallel_for(0, input.n * weights.n, [&](std::int64_t task) {
        const std::int64_t in_ = task / weights.n;
        const std::int64_t co = task % weights.n;
        T* op = out.plane(in_, co);
        const T b = bias.empty() ? T(0) : bias[static_cast<std::size_t>(co)];
        std::fill(op, op + oh * ow, b);
        for (std::int64_t ci = 0; ci < input.c; ++ci) {
            const T* ip = input.plane(in_, ci);
            for (std::int64_t r = 0; r < kh; ++r) {
                for (std::int64_t s = 0; s < kw; ++s) {
                    const T wv = weights.at(co, ci, r, s);
                    const std::int64_t wo_lo = std::max<std::int64_t>(0, ceil_div(pad - s, stride));
                    const std::int64_t wo_hi =
                        std::min<std::int64_t>(ow - 1, floor_div(input.w - 1 + pad - s, stride));
                    for (std::int64_t ho = 0; ho < oh; ++ho) {
                        const std::int64_t hi = ho * stride + r - pad;
                        if (hi < 0 || hi >= input.h) continue;
                        T* orow = op + ho * ow;
                        const T* irow = ip + hi * input.w + s - pad;
                        for (std::int64_t wo = wo_lo; wo <= wo_hi; ++wo)
                            orow[wo] += wv * irow[wo * stride];
                    }
                }
            }
        }
    });
    return out;
}

// Single-location evaluation of the same convolution: returns the c_out vector
// at output position (ho, wo). Accumulation order matches conv2d.
template <typename T>
std::vector<T> conv2d_at(const Tensor4<T>& input, const Tensor4<T>& weights,
                         const std::vector<T>& bias, std::int64_t stride, std::int64_t pad,
                         std::int64_t in_, std::int64_t ho, std::int64_t wo) {
    std::vector<T> out(static_cast<std::size_t>(weights.n));
    for (std::int64_t co = 0; co < weights.n; ++co) {
        T acc = bias.empty() ? T(0) : bias[static_cast<std::size_t>(co)];
        for (std::int64_t ci = 0; ci < input.c; ++ci) {
            const T* ip = input.plane(in_, ci);
            for (std::int64_t r = 0; r < weights.h; ++r) {
                const std::int64_t hi = ho * stride + r - pad;
                if (hi < 0 || hi >= input.h) continue;
                for (std::int64_t s = 0; s < weights.w; ++s) {
                    const std::int64_t wi = wo * stride + s - pad;
                    if (wi < 0 || wi >= input.w) continue;
                    acc += weights.at(co, ci, r, s) * ip[hi * input.w + wi];
                }
            }
        }
        out[static_cast<std::size_t>(co)] = acc;
    }
    return out;
}

template <typename T>
std::vector<T> conv2d_backward_bias(const Tensor4<T>& g_out) {
    std::vector<T> g(static_cast<std::size_t>(g_out.c), T(0));
    for (std::int64_t n = 0; n < g_out.n; ++n)
        for (std::int64_t co = 0; co < g_out.c; ++co) {
            const T* gp = g_out.plane(n, co);
            T acc = T(0);
            for (std::int64_t i = 0; i < g_out.h * g_out.w; ++i) acc += gp[i];
            g[static_cast<std::size_t>(co)] += acc;
        }
    return g;
}

template <typename T>
Tensor4<T> conv2d_backward_weights(const Tensor4<T>& input, const Tensor4<T>& g_out,
                                   std::int64_t kh, std::int64_t kw, std::int64_t stride,
                                   std::int64_t pad) {
    Tensor4<T> g_w(g_out.c, input.c, kh, kw);
    parallel_for(0, g_out.c * input.c, [&](std::int64_t task) {
        const std::int64_t co = task / input.c;
        const std::int64_t ci = task % input.c;
        for (std::int64_t r = 0; r < kh; ++r) {
            for (std::int64_t s = 0; s < kw; ++s) {
                const std::int64_t wo_lo = std::max<std::int64_t>(0, ceil_div(pad - s, stride));
                const std::int64_t wo_hi =
                    std::min<std::int64_t>(g_out.w - 1, floor_div(input.w - 1 + pad - s, stride));
                T acc = T(0);
                for (std::int64_t n = 0; n < input.n; ++n) {
                    const T* ip = input.plane(n, ci);
                    const T* gp = g_out.plane(n, co);
                    for (std::int64_t ho = 0; ho < g_out.h; ++ho) {
                        const std::int64_t hi = ho * stride + r - pad;
                        if (hi < 0 || hi >= input.h) continue;
                        const T* grow = gp + ho * g_out.w;
                        const T* irow = ip + hi * input.w + s - pad;
                        for (std::int64_t wo = wo_lo; wo <= wo_hi; ++wo)
                            acc += grow[wo] * irow[wo * stride];
                    }
                }
                g_w.at(co, ci, r, s) = acc;
            }
        }
    });
    return g_w;
}

template <typename T>
Tensor4<T> conv2d_backward_input(const Tensor4<T>& weights, const Tensor4<T>& g_out,
                                 std::int64_t in_n, std::int64_t in_c, std::int64_t in_h,
                                 std::int64_t in_w, std::int64_t stride, std::int64_t pad) {
    Tensor4<T> g_in(in_n, in_c, in_h, in_w);
    parallel_for(0, in_n * in_c, [&](std::int64_t task) {
        const std::int64_t n = task / in_c;
        const std::int64_t ci = task % in_c;
        T* gip = g_in.plane(n, ci);
        for (std::int64_t co = 0; co < weights.n; ++co) {
            const T* gp = g_out.plane(n, co);
            for (std::int64_t r = 0; r < weights.h; ++r) {
                for (std::int64_t s = 0; s < weights.w; ++s) {
                    const T wv = weights.at(co, ci, r, s);
                    const std::int64_t wo_lo = std::max<std::int64_t>(0, ceil_div(pad - s, stride));
                    const std::int64_t wo_hi =
                        std::min<std::int64_t>(g_out.w - 1, floor_div(in_w - 1 + pad - s, stride));
                    for (std::int64_t ho = 0; ho < g_out.h; ++ho) {
                        const std::int64_t hi = ho * stride + r - pad;
                        if (hi < 0 || hi >= in_h) continue;
                        T* girow = gip + hi * in_w + s - pad;
                        const T* grow = gp + ho * g_out.w;
                        for (std::int64_t wo = wo_lo; wo <= wo_hi; ++wo)
                            girow[wo * stride] += wv * grow[wo];
                    }
                }
            }
        }
    });
    return g_in;
}

// ---------------------------------------------------------------------------
// pointwise ops

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
    Tensor4<T> out = x;
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    return out;
}

// subgradient at 0 is 0
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& g) {
    Tensor4<T> gx = zeros_like(x);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        gx.data[i] = x.data[i] > T(0) ? g.data[i] : T(0);
    return gx;
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
    Tensor4<T> out = x;
    for (T& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return out;
}

// takes the forward output y = sigmoid(x)
template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& g) {
    Tensor4<T> gx = zeros_like(y);
    for (std::size_t i = 0; i < y.data.size(); ++i)
        gx.data[i] = g.data[i] * y.data[i] * (T(1) - y.data[i]);
    return gx;
}

template <typename T>
Tensor4<T> elementwise_mul(const Tensor4<T>& a, const Tensor4<T>& b) {
    require_shape_match(a, b, "elementwise_mul");
    Tensor4<T> out = a;
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] * b.data[i];
    return out;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    require_shape_match(a, b, "add");
    Tensor4<T> out = a;
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

template <typename T>
Tensor4<T> scale(const Tensor4<T>& a, T s) {
    Tensor4<T> out = a;
    for (T& v : out.data) v *= s;
    return out;
}

template <typename T>
T tensor_sum(const Tensor4<T>& a) {
    T acc = T(0);
    for (const T& v : a.data) acc += v;
    return acc;
}

template <typename T>
T tensor_dot(const Tensor4<T>& a, const Tensor4<T>& b) {
    require_shape_match(a, b, "tensor_dot");
    T acc = T(0);
    for (std::size_t i = 0; i < a.data.size(); ++i) acc += a.data[i] * b.data[i];
    return acc;
}

// ---------------------------------------------------------------------------
// channel softmax / reduction

template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& x) {
    require(x.c >= 1, "softmax_channels: c must be >= 1");
    Tensor4<T> out = x;
    const std::int64_t plane = x.h * x.w;
    for (std::int64_t n = 0; n < x.n; ++n) {
        const T* xp = x.data.data() + n * x.c * plane;
        T* op = out.data.data() + n * x.c * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            T mx = xp[i];
            for (std::int64_t k = 1; k < x.c; ++k) mx = std::max(mx, xp[k * plane + i]);
            T denom = T(0);
            for (std::int64_t k = 0; k < x.c; ++k) {
                const T e = std::exp(xp[k * plane + i] - mx);
                op[k * plane + i] = e;
                denom += e;
            }
            for (std::int64_t k = 0; k < x.c; ++k) op[k * plane + i] /= denom;
        }
    }
    return out;
}

// takes the forward output y
template <typename T>
Tensor4<T> softmax_channels_backward(const Tensor4<T>& y, const Tensor4<T>& g) {
    Tensor4<T> gx = zeros_like(y);
    const std::int64_t plane = y.h * y.w;
    for (std::int64_t n = 0; n < y.n; ++n) {
        const T* yp = y.data.data() + n * y.c * plane;
        const T* gp = g.data.data() + n * y.c * plane;
        T* op = gx.data.data() + n * y.c * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            T dot = T(0);
            for (std::int64_t k = 0; k < y.c; ++k) dot += gp[k * plane + i] * yp[k * plane + i];
            for (std::int64_t k = 0; k < y.c; ++k)
                op[k * plane + i] = yp[k * plane + i] * (gp[k * plane + i] - dot);
        }
    }
    return gx;
}

template <typename T>
Tensor4<T> reduce_sum_channels(const Tensor4<T>& x) {
    require(x.c >= 1, "reduce_sum_channels: c must be >= 1");
    Tensor4<T> out(x.n, 1, x.h, x.w);
    const std::int64_t plane = x.h * x.w;
    for (std::int64_t n = 0; n < x.n; ++n) {
        const T* xp = x.data.data() + n * x.c * plane;
        T* op = out.plane(n, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
            T acc = T(0);
            for (std::int64_t k = 0; k < x.c; ++k) acc += xp[k * plane + i];
            op[i] = acc;
        }
    }
    return out;
}

template <typename T>
Tensor4<T> reduce_sum_channels_backward(const Tensor4<T>& g, std::int64_t c) {
    Tensor4<T> gx(g.n, c, g.h, g.w);
    const std::int64_t plane = g.h * g.w;
    for (std::int64_t n = 0; n < g.n; ++n) {
        const T* gp = g.plane(n, 0);
        for (std::int64_t k = 0; k < c; ++k)
            std::copy(gp, gp + plane, gx.plane(n, k));
    }
    return gx;
}

// ---------------------------------------------------------------------------
// resizing

template <typename T>
Tensor4<T> bilinear_resize(const Tensor4<T>& x, std::int64_t out_h, std::int64_t out_w) {
    require(out_h >= 1 && out_w >= 1, "bilinear_resize: output dims must be >= 1");
    Tensor4<T> out(x.n, x.c, out_h, out_w);
    const double sy = static_cast<double>(x.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(x.w) / static_cast<double>(out_w);
    for (std::int64_t n = 0; n < x.n; ++n) {
        for (std::int64_t ci = 0; ci < x.c; ++ci) {
            const T* ip = x.plane(n, ci);
            T* op = out.plane(n, ci);
            for (std::int64_t i = 0; i < out_h; ++i) {
                double v = (static_cast<double>(i) + 0.5) * sy - 0.5;
                v = std::clamp(v, 0.0, static_cast<double>(x.h - 1));
                const std::int64_t y0 = static_cast<std::int64_t>(std::floor(v));
                const std::int64_t y1 = std::min(y0 + 1, x.h - 1);
                const T ty = static_cast<T>(v - static_cast<double>(y0));
                for (std::int64_t j = 0; j < out_w; ++j) {
                    double u = (static_cast<double>(j) + 0.5) * sx - 0.5;
                    u = std::clamp(u, 0.0, static_cast<double>(x.w - 1));
                    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(u));
                    const std::int64_t x1 = std::min(x0 + 1, x.w - 1);
                    const T tx = static_cast<T>(u - static_cast<double>(x0));
                    const T top = ip[y0 * x.w + x0] * (T(1) - tx) + ip[y0 * x.w + x1] * tx;
                    const T bot = ip[y1 * x.w + x0] * (T(1) - tx) + ip[y1 * x.w + x1] * tx;
                    op[i * out_w + j] = top * (T(1) - ty) + bot * ty;
                }
            }
        }
    }
    return out;
}

// transpose of the (linear) forward: scatters each output gradient back onto
// the four source cells with the forward interpolation weights
template <typename T>
Tensor4<T> bilinear_resize_backward(const Tensor4<T>& g, std::int64_t in_h, std::int64_t in_w) {
    Tensor4<T> gx(g.n, g.c, in_h, in_w);
    const double sy = static_cast<double>(in_h) / static_cast<double>(g.h);
    const double sx = static_cast<double>(in_w) / static_cast<double>(g.w);
    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t ci = 0; ci < g.c; ++ci) {
            const T* gp = g.plane(n, ci);
            T* op = gx.plane(n, ci);
            for (std::int64_t i = 0; i < g.h; ++i) {
                double v = (static_cast<double>(i) + 0.5) * sy - 0.5;
                v = std::clamp(v, 0.0, static_cast<double>(in_h - 1));
                const std::int64_t y0 = static_cast<std::int64_t>(std::floor(v));
                const std::int64_t y1 = std::min(y0 + 1, in_h - 1);
                const T ty = static_cast<T>(v - static_cast<double>(y0));
                for (std::int64_t j = 0; j < g.w; ++j) {
                    double u = (static_cast<double>(j) + 0.5) * sx - 0.5;
                    u = std::clamp(u, 0.0, static_cast<double>(in_w - 1));
                    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(u));
                    const std::int64_t x1 = std::min(x0 + 1, in_w - 1);
                    const T tx = static_cast<T>(u - static_cast<double>(x0));
                    const T gv = gp[i * g.w + j];
                    op[y0 * in_w + x0] += gv * (T(1) - ty) * (T(1) - tx);
                    op[y0 * in_w + x1] += gv * (T(1) - ty) * tx;
                    op[y1 * in_w + x0] += gv * ty * (T(1) - tx);
                    op[y1 * in_w + x1] += gv * ty * tx;
                }
            }
        }
    }
    return gx;
}

template <typename T>
Tensor4<T> nearest_resize(const Tensor4<T>& x, std::int64_t out_h, std::int64_t out_w) {
    require(out_h >= 1 && out_w >= 1, "nearest_resize: output dims must be >= 1");
    Tensor4<T> out(x.n, x.c, out_h, out_w);
    const double sy = static_cast<double>(x.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(x.w) / static_cast<double>(out_w);
    std::vector<std::int64_t> col(static_cast<std::size_t>(out_w));
    for (std::int64_t j = 0; j < out_w; ++j)
        col[static_cast<std::size_t>(j)] =
            clamp_index(nearest_index((static_cast<double>(j) + 0.5) * sx - 0.5), x.w);
    for (std::int64_t n = 0; n < x.n; ++n) {
        for (std::int64_t ci = 0; ci < x.c; ++ci) {
            const T* ip = x.plane(n, ci);
            T* op = out.plane(n, ci);
            for (std::int64_t i = 0; i < out_h; ++i) {
                const std::int64_t y =
                    clamp_index(nearest_index((static_cast<double>(i) + 0.5) * sy - 0.5), x.h);
                for (std::int64_t j = 0; j < out_w; ++j)
                    op[i * out_w + j] = ip[y * x.w + col[static_cast<std::size_t>(j)]];
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> nearest_resize_backward(const Tensor4<T>& g, std::int64_t in_h, std::int64_t in_w) {
    Tensor4<T> gx(g.n, g.c, in_h, in_w);
    const double sy = static_cast<double>(in_h) / static_cast<double>(g.h);
    const double sx = static_cast<double>(in_w) / static_cast<double>(g.w);
    for (std::int64_t n = 0; n < g.n; ++n) {
        for (std::int64_t ci = 0; ci < g.c; ++ci) {
            const T* gp = g.plane(n, ci);
            T* op = gx.plane(n, ci);
            for (std::int64_t i = 0; i < g.h; ++i) {
                const std::int64_t y =
                    clamp_index(nearest_index((static_cast<double>(i) + 0.5) * sy - 0.5), in_h);
                for (std::int64_t j = 0; j < g.w; ++j) {
                    const std::int64_t x =
                        clamp_index(nearest_index((static_cast<double>(j) + 0.5) * sx - 0.5), in_w);
                    op[y * in_w + x] += gp[i * g.w + j];
                }
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------------------
// losses

// mean over all elements of BCE between sigmoid(logit) and target, evaluated
// in the standard overflow-safe form
template <typename T>
T bce_with_logits(const Tensor4<T>& logits, const Tensor4<T>& target) {
    require_shape_match(logits, target, "bce_with_logits");
    T acc = T(0);
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const T m = logits.data[i];
        const T t = target.data[i];
        acc += std::max(m, T(0)) - m * t + std::log1p(std::exp(-std::abs(m)));
    }
    return acc / static_cast<T>(logits.size());
}

template <typename T>
Tensor4<T> bce_with_logits_backward(const Tensor4<T>& logits, const Tensor4<T>& target, T g) {
    Tensor4<T> gx = zeros_like(logits);
    const T inv = g / static_cast<T>(logits.size());
    for (std::size_t i = 0; i < logits.data.size(); ++i) {
        const T p = T(1) / (T(1) + std::exp(-logits.data[i]));
        gx.data[i] = inv * (p - target.data[i]);
    }
    return gx;
}

// probability-space BCE, used by the single-basis sigmoid variant whose mask
// head already emits values in (0, 1)
template <typename T>
T bce_on_probs(const Tensor4<T>& probs, const Tensor4<T>& target) {
    require_shape_match(probs, target, "bce_on_probs");
    const T eps = static_cast<T>(1e-7);
    T acc = T(0);
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
        const T p = std::clamp(probs.data[i], eps, T(1) - eps);
        const T t = target.data[i];
        acc += -(t * std::log(p) + (T(1) - t) * std::log(T(1) - p));
    }
    return acc / static_cast<T>(probs.size());
}

template <typename T>
Tensor4<T> bce_on_probs_backward(const Tensor4<T>& probs, const Tensor4<T>& target, T g) {
    Tensor4<T> gx = zeros_like(probs);
    const T eps = static_cast<T>(1e-7);
    const T inv = g / static_cast<T>(probs.size());
    for (std::size_t i = 0; i < probs.data.size(); ++i) {
        const T p = probs.data[i];
        if (p < eps || p > T(1) - eps) continue;  // clamped region, zero slope
        gx.data[i] = inv * (p - target.data[i]) / (p * (T(1) - p));
    }
    return gx;
}

}  // namespace blendcore
