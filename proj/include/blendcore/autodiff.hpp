#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "blendcore/blender.hpp"
#include "blendcore/ops.hpp"
#include "blendcore/rng.hpp"
#include "blendcore/roi.hpp"
#include "blendcore/tensor.hpp"

// Reverse-mode differentiation. A Tape records one forward computation as a
// sequence of nodes in topological order; backward replays the node list in
// exact reverse order, accumulating gradients additively per value. Tapes are
// single-use and never shared across threads.

namespace blendcore {

template <typename T>
class Tape {
public:
    using ValueId = std::size_t;

    // backward(grad_of_output, tape, grads): accumulate into parents' grads
    using BackwardFn =
        std::function<void(const Tensor4<T>&, const Tape<T>&, std::vector<Tensor4<T>>&)>;

    ValueId leaf(Tensor4<T> v) { return record(std::move(v), nullptr); }

    ValueId record(Tensor4<T> v, BackwardFn back) {
        nodes_.push_back(Node{std::move(v), std::move(back)});
        return nodes_.size() - 1;
    }

    const Tensor4<T>& value(ValueId id) const { return nodes_[id].value; }
    std::size_t size() const { return nodes_.size(); }

    // Gradients of a scalar loss w.r.t. every recorded value, indexed by id.
    std::vector<Tensor4<T>> backward(ValueId loss) const {
        if (loss >= nodes_.size()) throw std::invalid_argument("backward: loss not on tape");
        if (nodes_[loss].value.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar");
        std::vector<Tensor4<T>> grads(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) grads[i] = zeros_like(nodes_[i].value);
        grads[loss].data[0] = T(1);
        for (std::size_t i = loss + 1; i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(grads[i], *this, grads);
        }
        return grads;
    }

private:
    struct Node {
        Tensor4<T> value;
        BackwardFn back;
    };
    std::vector<Node> nodes_;
};

namespace tape_ops {

template <typename T>
using Id = typename Tape<T>::ValueId;

template <typename T>
void accumulate(std::vector<Tensor4<T>>& grads, Id<T> id, const Tensor4<T>& g) {
    Tensor4<T>& dst = grads[id];
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += g.data[i];
}

template <typename T>
Id<T> relu(Tape<T>& tape, Id<T> x) {
    return tape.record(blendcore::relu(tape.value(x)),
                       [x](const Tensor4<T>& g, const Tape<T>& t, std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, x, relu_backward(t.value(x), g));
                       });
}

template <typename T>
Id<T> sigmoid(Tape<T>& tape, Id<T> x) {
    auto out = blendcore::sigmoid(tape.value(x));
    // backward uses the forward output, fetched from the tape by this node's id
    struct Slot { Id<T> self = 0; };
    auto slot = std::make_shared<Slot>();
    Id<T> id = tape.record(std::move(out),
                           [x, slot](const Tensor4<T>& g, const Tape<T>& t,
                                     std::vector<Tensor4<T>>& gr) {
                               accumulate(gr, x, sigmoid_backward(t.value(slot->self), g));
                           });
    slot->self = id;
    return id;
}

template <typename T>
Id<T> softmax_channels(Tape<T>& tape, Id<T> x) {
    auto out = blendcore::softmax_channels(tape.value(x));
    // self-referencing node: the closure reads its own output value
    struct Slot { Id<T> self = 0; };
    auto slot = std::make_shared<Slot>();
    Id<T> id = tape.record(std::move(out),
                           [x, slot](const Tensor4<T>& g, const Tape<T>& t,
                                     std::vector<Tensor4<T>>& gr) {
                               accumulate(gr, x, softmax_channels_backward(t.value(slot->self), g));
                           });
    slot->self = id;
    return id;
}

template <typename T>
Id<T> conv2d(Tape<T>& tape, Id<T> x, Id<T> w, Id<T> b, std::int64_t stride, std::int64_t pad) {
    const Tensor4<T>& bias_t = tape.value(b);
    require(bias_t.n == 1 && bias_t.h == 1 && bias_t.w == 1, "conv2d: bias must be 1 x c x 1 x 1");
    std::vector<T> bias(bias_t.data.begin(), bias_t.data.end());
    auto out = blendcore::conv2d(tape.value(x), tape.value(w), bias, stride, pad);
    return tape.record(
        std::move(out),
        [x, w, b, stride, pad](const Tensor4<T>& g, const Tape<T>& t,
                               std::vector<Tensor4<T>>& gr) {
            const Tensor4<T>& xin = t.value(x);
            const Tensor4<T>& wt = t.value(w);
            accumulate(gr, x, conv2d_backward_input(wt, g, xin.n, xin.c, xin.h, xin.w, stride, pad));
            accumulate(gr, w, conv2d_backward_weights(xin, g, wt.h, wt.w, stride, pad));
            const auto gb = conv2d_backward_bias(g);
            Tensor4<T> gbt(1, wt.n, 1, 1);
            std::copy(gb.begin(), gb.end(), gbt.data.begin());
            accumulate(gr, b, gbt);
        });
}

template <typename T>
Id<T> elementwise_mul(Tape<T>& tape, Id<T> a, Id<T> b) {
    return tape.record(blendcore::elementwise_mul(tape.value(a), tape.value(b)),
                       [a, b](const Tensor4<T>& g, const Tape<T>& t, std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, a, blendcore::elementwise_mul(g, t.value(b)));
                           accumulate(gr, b, blendcore::elementwise_mul(g, t.value(a)));
                       });
}

template <typename T>
Id<T> reduce_sum_channels(Tape<T>& tape, Id<T> x) {
    const std::int64_t c = tape.value(x).c;
    return tape.record(blendcore::reduce_sum_channels(tape.value(x)),
                       [x, c](const Tensor4<T>& g, const Tape<T>&, std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, x, reduce_sum_channels_backward(g, c));
                       });
}

template <typename T>
Id<T> bilinear_resize(Tape<T>& tape, Id<T> x, std::int64_t out_h, std::int64_t out_w) {
    const std::int64_t in_h = tape.value(x).h, in_w = tape.value(x).w;
    return tape.record(blendcore::bilinear_resize(tape.value(x), out_h, out_w),
                       [x, in_h, in_w](const Tensor4<T>& g, const Tape<T>&,
                                       std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, x, bilinear_resize_backward(g, in_h, in_w));
                       });
}

// piecewise constant in position; gradients flow through the selected values
template <typename T>
Id<T> nearest_resize(Tape<T>& tape, Id<T> x, std::int64_t out_h, std::int64_t out_w) {
    const std::int64_t in_h = tape.value(x).h, in_w = tape.value(x).w;
    return tape.record(blendcore::nearest_resize(tape.value(x), out_h, out_w),
                       [x, in_h, in_w](const Tensor4<T>& g, const Tape<T>&,
                                       std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, x, nearest_resize_backward(g, in_h, in_w));
                       });
}

template <typename T>
Id<T> roi_align_bilinear(Tape<T>& tape, Id<T> bases, std::vector<BoxProposal> boxes,
                         std::int64_t R, double stride) {
    const std::int64_t bh = tape.value(bases).h, bw = tape.value(bases).w;
    auto out = blendcore::roi_align_bilinear(tape.value(bases), boxes, R, stride);
    return tape.record(std::move(out.data),
                       [bases, boxes = std::move(boxes), bh, bw, stride](
                           const Tensor4<T>& g, const Tape<T>&, std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, bases, roi_align_bilinear_backward(g, boxes, bh, bw, stride));
                       });
}

template <typename T>
Id<T> roi_pool_nearest(Tape<T>& tape, Id<T> bases, std::vector<BoxProposal> boxes, std::int64_t R,
                       double stride) {
    const std::int64_t bh = tape.value(bases).h, bw = tape.value(bases).w;
    auto out = blendcore::roi_pool_nearest(tape.value(bases), boxes, R, stride);
    return tape.record(std::move(out.data),
                       [bases, boxes = std::move(boxes), bh, bw, stride](
                           const Tensor4<T>& g, const Tape<T>&, std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, bases, roi_pool_nearest_backward(g, boxes, bh, bw, stride));
                       });
}

// m = sum_k s o r over the basis dimension (softmax-mode blend)
template <typename T>
Id<T> blend(Tape<T>& tape, Id<T> regions, Id<T> scores) {
    RoiRegion<T> rr{tape.value(regions), 1.0};
    auto out = blendcore::blend(rr, ScoreMaps<T>{tape.value(scores)});
    return tape.record(
        std::move(out.data),
        [regions, scores](const Tensor4<T>& g, const Tape<T>& t, std::vector<Tensor4<T>>& gr) {
            Tensor4<T> g_r = zeros_like(t.value(regions));
            Tensor4<T> g_s = zeros_like(t.value(scores));
            RoiRegion<T> rr2{t.value(regions), 1.0};
            ScoreMaps<T> sm{t.value(scores)};
            blend_backward(g, rr2.data, sm.data, g_r, g_s);
            accumulate(gr, regions, g_r);
            accumulate(gr, scores, g_s);
        });
}

// Reads the convolution output vector at a fixed spatial location per
// instance; the result is stacked as D x c_out x 1 x 1. Equivalent to slicing
// a full conv2d output, evaluated pointwise.
struct ReadLocation {
    std::int64_t n, y, x;
};

template <typename T>
Id<T> conv2d_read_at(Tape<T>& tape, Id<T> x, Id<T> w, Id<T> b,
                     std::vector<ReadLocation> locations, std::int64_t stride, std::int64_t pad) {
    const Tensor4<T>& input = tape.value(x);
    const Tensor4<T>& weights = tape.value(w);
    const Tensor4<T>& bias_t = tape.value(b);
    std::vector<T> bias(bias_t.data.begin(), bias_t.data.end());
    const auto D = static_cast<std::int64_t>(locations.size());
    Tensor4<T> out(D, weights.n, 1, 1);
    for (std::int64_t d = 0; d < D; ++d) {
        const auto& loc = locations[static_cast<std::size_t>(d)];
        const auto v = conv2d_at(input, weights, bias, stride, pad, loc.n, loc.y, loc.x);
        std::copy(v.begin(), v.end(), out.data.begin() + d * weights.n);
    }
    return tape.record(
        std::move(out),
        [x, w, b, locations = std::move(locations), stride, pad](
            const Tensor4<T>& g, const Tape<T>& t, std::vector<Tensor4<T>>& gr) {
            const Tensor4<T>& input = t.value(x);
            const Tensor4<T>& weights = t.value(w);
            Tensor4<T> g_in = zeros_like(input);
            Tensor4<T> g_w = zeros_like(weights);
            Tensor4<T> g_b = zeros_like(t.value(b));
            for (std::size_t d = 0; d < locations.size(); ++d) {
                const auto& loc = locations[d];
                for (std::int64_t co = 0; co < weights.n; ++co) {
                    const T gv = g.data[d * static_cast<std::size_t>(weights.n) +
                                        static_cast<std::size_t>(co)];
                    if (gv == T(0)) continue;
                    g_b.data[static_cast<std::size_t>(co)] += gv;
                    for (std::int64_t ci = 0; ci < input.c; ++ci) {
                        for (std::int64_t r = 0; r < weights.h; ++r) {
                            const std::int64_t hi = loc.y * stride + r - pad;
                            if (hi < 0 || hi >= input.h) continue;
                            for (std::int64_t s = 0; s < weights.w; ++s) {
                                const std::int64_t wi = loc.x * stride + s - pad;
                                if (wi < 0 || wi >= input.w) continue;
                                g_w.at(co, ci, r, s) += gv * input.at(loc.n, ci, hi, wi);
                                g_in.at(loc.n, ci, hi, wi) += gv * weights.at(co, ci, r, s);
                            }
                        }
                    }
                }
            }
            accumulate(gr, x, g_in);
            accumulate(gr, w, g_w);
            accumulate(gr, b, g_b);
        });
}

// stacked D x c x 1 x 1 -> D x K x M x M view (c == K*M*M)
template <typename T>
Id<T> reshape_to_attention(Tape<T>& tape, Id<T> x, std::int64_t K, std::int64_t M) {
    const Tensor4<T>& v = tape.value(x);
    require(v.c == K * M * M && v.h == 1 && v.w == 1, "reshape_to_attention: bad input shape");
    Tensor4<T> out(v.n, K, M, M);
    out.data = v.data;
    return tape.record(std::move(out),
                       [x](const Tensor4<T>& g, const Tape<T>& t, std::vector<Tensor4<T>>& gr) {
                           Tensor4<T> gx = zeros_like(t.value(x));
                           gx.data = g.data;
                           accumulate(gr, x, gx);
                       });
}

template <typename T>
Id<T> bce_with_logits(Tape<T>& tape, Id<T> logits, Tensor4<T> target) {
    Tensor4<T> out(1, 1, 1, 1);
    out.data[0] = blendcore::bce_with_logits(tape.value(logits), target);
    return tape.record(std::move(out),
                       [logits, target = std::move(target)](
                           const Tensor4<T>& g, const Tape<T>& t, std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, logits,
                                      bce_with_logits_backward(t.value(logits), target, g.data[0]));
                       });
}

template <typename T>
Id<T> bce_on_probs(Tape<T>& tape, Id<T> probs, Tensor4<T> target) {
    Tensor4<T> out(1, 1, 1, 1);
    out.data[0] = blendcore::bce_on_probs(tape.value(probs), target);
    return tape.record(std::move(out),
                       [probs, target = std::move(target)](
                           const Tensor4<T>& g, const Tape<T>& t, std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, probs,
                                      bce_on_probs_backward(t.value(probs), target, g.data[0]));
                       });
}

// loss = sum_i weights[i] * scalars[i]
template <typename T>
Id<T> weighted_sum_scalars(Tape<T>& tape, std::vector<Id<T>> ids, std::vector<T> weights) {
    require(ids.size() == weights.size() && !ids.empty(), "weighted_sum_scalars: bad arity");
    Tensor4<T> out(1, 1, 1, 1);
    for (std::size_t i = 0; i < ids.size(); ++i)
        out.data[0] += weights[i] * tape.value(ids[i]).data[0];
    return tape.record(std::move(out),
                       [ids = std::move(ids), weights = std::move(weights)](
                           const Tensor4<T>& g, const Tape<T>&, std::vector<Tensor4<T>>& gr) {
                           for (std::size_t i = 0; i < ids.size(); ++i) {
                               Tensor4<T> gi(1, 1, 1, 1);
                               gi.data[0] = g.data[0] * weights[i];
                               accumulate(gr, ids[i], gi);
                           }
                       });
}

// scalar projection sum(x o p), used to reduce tensor outputs for checks
template <typename T>
Id<T> project(Tape<T>& tape, Id<T> x, Tensor4<T> p) {
    require_shape_match(tape.value(x), p, "project");
    Tensor4<T> out(1, 1, 1, 1);
    out.data[0] = tensor_dot(tape.value(x), p);
    return tape.record(std::move(out),
                       [x, p = std::move(p)](const Tensor4<T>& g, const Tape<T>&,
                                             std::vector<Tensor4<T>>& gr) {
                           accumulate(gr, x, scale(p, g.data[0]));
                       });
}

}  // namespace tape_ops

// ---------------------------------------------------------------------------
// finite-difference verification

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0;
    double tolerance = 1e-4;
    bool pass = false;
};

// One check: leaves plus a loss builder over them. Double precision only.
struct GradCheckCase {
    std::string op;
    std::vector<Tensor4<double>> inputs;
    std::function<Tape<double>::ValueId(Tape<double>&, const std::vector<Tape<double>::ValueId>&)>
        build_loss;
    double tolerance = 1e-4;
};

// Central differences, eps = 1e-5, against the tape gradient. Relative error
// is max |g_a - g_f| / max(1e-8, |g_a| + |g_f|) over every input element.
inline GradCheckReport run_grad_check(const GradCheckCase& c, double eps = 1e-5) {
    const auto forward = [&](const std::vector<Tensor4<double>>& inputs) {
        Tape<double> tape;
        std::vector<Tape<double>::ValueId> ids;
        ids.reserve(inputs.size());
        for (const auto& in : inputs) ids.push_back(tape.leaf(in));
        const auto loss = c.build_loss(tape, ids);
        return tape.value(loss).data[0];
    };

    Tape<double> tape;
    std::vector<Tape<double>::ValueId> ids;
    for (const auto& in : c.inputs) ids.push_back(tape.leaf(in));
    const auto loss = c.build_loss(tape, ids);
    const auto grads = tape.backward(loss);

    double max_rel = 0;
    std::vector<Tensor4<double>> probe = c.inputs;
    for (std::size_t li = 0; li < probe.size(); ++li) {
        for (std::size_t e = 0; e < probe[li].data.size(); ++e) {
            const double orig = probe[li].data[e];
            probe[li].data[e] = orig + eps;
            const double lp = forward(probe);
            probe[li].data[e] = orig - eps;
            const double lm = forward(probe);
            probe[li].data[e] = orig;
            const double gf = (lp - lm) / (2 * eps);
            const double ga = grads[ids[li]].data[e];
            const double rel = std::abs(ga - gf) / std::max(1e-8, std::abs(ga) + std::abs(gf));
            max_rel = std::max(max_rel, rel);
        }
    }
    return {c.op, max_rel, c.tolerance, max_rel <= c.tolerance};
}

namespace detail {

inline Tensor4<double> random_tensor(Rng& rng, std::int64_t n, std::int64_t c, std::int64_t h,
                                     std::int64_t w, double lo = -1.0, double hi = 1.0) {
    Tensor4<double> t(n, c, h, w);
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// keep relu-style kinks at least nudge away from zero
inline Tensor4<double> nudged_tensor(Rng& rng, std::int64_t n, std::int64_t c, std::int64_t h,
                                     std::int64_t w, double nudge = 1e-3) {
    Tensor4<double> t = random_tensor(rng, n, c, h, w);
    for (auto& v : t.data)
        if (std::abs(v) < nudge) v = v < 0 ? -nudge : nudge;
    return t;
}

inline Tensor4<double> random_binary(Rng& rng, std::int64_t n, std::int64_t c, std::int64_t h,
                                     std::int64_t w) {
    Tensor4<double> t(n, c, h, w);
    for (auto& v : t.data) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    return t;
}

}  // namespace detail

// The registered checks: every differentiable op plus the composed
// crop/interpolate/normalize/blend pipeline.
inline std::vector<GradCheckCase> default_grad_checks(std::uint64_t seed) {
    namespace to = tape_ops;
    using Ids = std::vector<Tape<double>::ValueId>;
    std::vector<GradCheckCase> cases;
    Rng rng(derive_seed(seed, 101));

    const auto proj = [](Rng& r, std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
        return detail::random_tensor(r, n, c, h, w);
    };

    {
        GradCheckCase c{"relu", {detail::nudged_tensor(rng, 1, 3, 4, 4)}, nullptr};
        auto p = proj(rng, 1, 3, 4, 4);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::relu(t, ids[0]), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"sigmoid", {detail::random_tensor(rng, 1, 3, 4, 4)}, nullptr};
        auto p = proj(rng, 1, 3, 4, 4);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::sigmoid(t, ids[0]), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"softmax_channels", {detail::random_tensor(rng, 1, 4, 2, 2)}, nullptr};
        auto p = proj(rng, 1, 4, 2, 2);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::softmax_channels(t, ids[0]), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"conv2d",
                        {detail::random_tensor(rng, 1, 3, 6, 6),
                         detail::random_tensor(rng, 4, 3, 3, 3),
                         detail::random_tensor(rng, 1, 4, 1, 1)},
                        nullptr};
        auto p = proj(rng, 1, 4, 6, 6);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::conv2d(t, ids[0], ids[1], ids[2], 1, 1), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"conv2d_stride2",
                        {detail::random_tensor(rng, 1, 3, 8, 8),
                         detail::random_tensor(rng, 2, 3, 1, 1),
                         detail::random_tensor(rng, 1, 2, 1, 1)},
                        nullptr};
        auto p = proj(rng, 1, 2, 4, 4);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::conv2d(t, ids[0], ids[1], ids[2], 2, 0), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"bilinear_resize", {detail::random_tensor(rng, 1, 2, 3, 5)}, nullptr};
        auto p = proj(rng, 1, 2, 7, 6);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::bilinear_resize(t, ids[0], 7, 6), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"nearest_resize", {detail::random_tensor(rng, 1, 2, 3, 5)}, nullptr};
        auto p = proj(rng, 1, 2, 7, 6);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::nearest_resize(t, ids[0], 7, 6), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"elementwise_mul",
                        {detail::random_tensor(rng, 1, 3, 4, 4),
                         detail::random_tensor(rng, 1, 3, 4, 4)},
                        nullptr};
        auto p = proj(rng, 1, 3, 4, 4);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::elementwise_mul(t, ids[0], ids[1]), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"reduce_sum_channels", {detail::random_tensor(rng, 1, 5, 3, 3)}, nullptr};
        auto p = proj(rng, 1, 1, 3, 3);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::reduce_sum_channels(t, ids[0]), p);
        };
        cases.push_back(std::move(c));
    }

    const std::vector<BoxProposal> roi_boxes = {{3.1, 2.4, 11.7, 12.2}, {-2.0, 1.0, 9.5, 15.9}};
    {
        GradCheckCase c{"roi_align_bilinear", {detail::random_tensor(rng, 1, 3, 8, 8)}, nullptr};
        auto p = proj(rng, 2, 3, 4, 4);
        c.build_loss = [p, roi_boxes](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::roi_align_bilinear(t, ids[0], roi_boxes, 4, 2.0), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"roi_pool_nearest", {detail::random_tensor(rng, 1, 3, 8, 8)}, nullptr};
        auto p = proj(rng, 2, 3, 4, 4);
        c.build_loss = [p, roi_boxes](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::roi_pool_nearest(t, ids[0], roi_boxes, 4, 2.0), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"interpolate_attention",
                        {detail::random_tensor(rng, 2, 4, 2, 2)},
                        nullptr};
        auto p = proj(rng, 2, 4, 4, 4);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::bilinear_resize(t, ids[0], 4, 4), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"normalize_scores",
                        {detail::random_tensor(rng, 2, 4, 4, 4)},
                        nullptr};
        auto p = proj(rng, 2, 4, 4, 4);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::softmax_channels(t, ids[0]), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"blend",
                        {detail::random_tensor(rng, 2, 4, 4, 4),
                         detail::random_tensor(rng, 2, 4, 4, 4)},
                        nullptr};
        auto p = proj(rng, 2, 1, 4, 4);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            return to::project(t, to::blend(t, ids[0], ids[1]), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"attention_read",
                        {detail::random_tensor(rng, 1, 3, 8, 8),
                         detail::random_tensor(rng, 8, 3, 3, 3),
                         detail::random_tensor(rng, 1, 8, 1, 1)},
                        nullptr};
        auto p = proj(rng, 2, 8, 1, 1);
        c.build_loss = [p](Tape<double>& t, const Ids& ids) {
            std::vector<to::ReadLocation> locs = {{0, 2, 3}, {0, 7, 0}};
            return to::project(t, to::conv2d_read_at(t, ids[0], ids[1], ids[2], locs, 1, 1), p);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"loss_bce", {detail::random_tensor(rng, 2, 1, 4, 4)}, nullptr};
        auto target = detail::random_binary(rng, 2, 1, 4, 4);
        c.build_loss = [target](Tape<double>& t, const Ids& ids) {
            return to::bce_with_logits(t, ids[0], target);
        };
        cases.push_back(std::move(c));
    }
    {
        GradCheckCase c{"loss_bce_probs",
                        {detail::random_tensor(rng, 2, 1, 4, 4, 0.05, 0.95)},
                        nullptr};
        auto target = detail::random_binary(rng, 2, 1, 4, 4);
        c.build_loss = [target](Tape<double>& t, const Ids& ids) {
            return to::bce_on_probs(t, ids[0], target);
        };
        cases.push_back(std::move(c));
    }

    // composed crop -> interpolate -> softmax -> blend -> BCE (Eqs. 1-4 shape)
    {
        GradCheckCase c{"blend_pipeline",
                        {detail::random_tensor(rng, 1, 4, 8, 8),
                         detail::random_tensor(rng, 2, 4, 2, 2)},
                        nullptr};
        auto target = detail::random_binary(rng, 2, 1, 4, 4);
        c.build_loss = [target, roi_boxes](Tape<double>& t, const Ids& ids) {
            auto regions = to::roi_align_bilinear(t, ids[0], roi_boxes, 4, 2.0);
            auto up = to::bilinear_resize(t, ids[1], 4, 4);
            auto scores = to::softmax_channels(t, up);
            auto m = to::blend(t, regions, scores);
            return to::bce_with_logits(t, m, target);
        };
        cases.push_back(std::move(c));
    }
    // single-basis sigmoid variant of the same pipeline
    {
        GradCheckCase c{"single_basis_pipeline",
                        {detail::random_tensor(rng, 1, 1, 8, 8),
                         detail::random_tensor(rng, 2, 1, 2, 2)},
                        nullptr};
        auto target = detail::random_binary(rng, 2, 1, 4, 4);
        c.build_loss = [target, roi_boxes](Tape<double>& t, const Ids& ids) {
            auto regions = to::roi_align_bilinear(t, ids[0], roi_boxes, 4, 2.0);
            auto up = to::bilinear_resize(t, ids[1], 4, 4);
            auto probs = to::elementwise_mul(t, to::sigmoid(t, up), to::sigmoid(t, regions));
            return to::bce_on_probs(t, probs, target);
        };
        cases.push_back(std::move(c));
    }
    return cases;
}

inline std::vector<GradCheckReport> run_all_grad_checks(std::uint64_t seed) {
    std::vector<GradCheckReport> reports;
    for (const auto& c : default_grad_checks(seed)) reports.push_back(run_grad_check(c));
    return reports;
}

}  // namespace blendcore
