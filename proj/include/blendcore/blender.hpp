#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blendcore/ops.hpp"
#include "blendcore/roi.hpp"
#include "blendcore/tensor.hpp"

// Per-instance mask generation: cropped bases are weighted pixelwise by
// interpolated, channel-normalized attention maps and summed over the basis
// dimension. The weighted-sum (M = 1) and assembler (fixed one-hot attentions,
// K = M^2) merging strategies are exact degenerate cases of the same path.

namespace blendcore {

enum class InterpMode { Nearest, Bilinear };
enum class MergeMode { Blender, WeightedSum, Assembler, SingleBasisSigmoid };

inline std::string to_string(InterpMode m) {
    return m == InterpMode::Nearest ? "nearest" : "bilinear";
}
inline std::string to_string(MergeMode m) {
    switch (m) {
        case MergeMode::Blender: return "blender";
        case MergeMode::WeightedSum: return "weighted_sum";
        case MergeMode::Assembler: return "assembler";
        case MergeMode::SingleBasisSigmoid: return "single_basis_sigmoid";
    }
    return "?";
}

inline InterpMode interp_mode_from_string(const std::string& s) {
    if (s == "nearest") return InterpMode::Nearest;
    if (s == "bilinear") return InterpMode::Bilinear;
    throw std::invalid_argument("unknown interpolation mode '" + s + "'");
}

inline MergeMode merge_mode_from_string(const std::string& s) {
    if (s == "blender") return MergeMode::Blender;
    if (s == "weighted_sum") return MergeMode::WeightedSum;
    if (s == "assembler") return MergeMode::Assembler;
    if (s == "single_basis_sigmoid") return MergeMode::SingleBasisSigmoid;
    throw std::invalid_argument("unknown merge_mode '" + s + "'");
}

template <typename T>
struct AttentionSet {
    Tensor4<T> data;  // D x K x M x M
    InterpMode interp_mode = InterpMode::Bilinear;
};

template <typename T>
struct ScoreMaps {
    Tensor4<T> data;  // D x K x R x R
};

// Blended mask logits, D x 1 x R x R. The single-basis sigmoid variant
// produces probabilities rather than logits; probability_space records which
// scale the values live on so the loss and pasting stay consistent.
template <typename T>
struct MaskLogits {
    Tensor4<T> data;
    bool probability_space = false;
};

struct BlendConfig {
    std::int64_t R = 56;
    std::int64_t M = 14;
    std::int64_t K = 4;
    InterpMode top_interp = InterpMode::Bilinear;
    InterpMode bottom_sampling = InterpMode::Bilinear;
    MergeMode merge_mode = MergeMode::Blender;

    // "R_K_M"
    std::string abbrev() const {
        return std::to_string(R) + "_" + std::to_string(K) + "_" + std::to_string(M);
    }
    std::string label() const { return abbrev() + "/" + to_string(merge_mode); }

    void validate() const {
        require(R >= 1 && M >= 1 && K >= 1, "blend config: R, K, M must be >= 1");
        require(M <= R, "blend config: M must not exceed R");
        switch (merge_mode) {
            case MergeMode::WeightedSum:
                require(M == 1, "blend config: weighted_sum requires M == 1");
                break;
            case MergeMode::SingleBasisSigmoid:
                require(K == 1, "blend config: single_basis_sigmoid requires K == 1");
                break;
            case MergeMode::Assembler:
                require(K == M * M, "blend config: assembler requires K == M*M");
                require(R % M == 0, "blend config: assembler requires M to divide R");
                break;
            case MergeMode::Blender: break;
        }
    }
};

// Eq-style attention upsampling, M x M -> R x R per instance and basis.
template <typename T>
Tensor4<T> interpolate_attention(const AttentionSet<T>& att, std::int64_t R) {
    require(att.data.h == att.data.w, "attention: maps must be square");
    require(R >= att.data.h, "attention: R must be >= M");
    if (att.interp_mode == InterpMode::Bilinear) return bilinear_resize(att.data, R, R);
    return nearest_resize(att.data, R, R);
}

// Softmax over the basis dimension; the single-basis variant uses an
// elementwise sigmoid instead.
template <typename T>
ScoreMaps<T> normalize_scores(const Tensor4<T>& att_up, MergeMode mode) {
    if (mode == MergeMode::SingleBasisSigmoid) return {sigmoid(att_up)};
    return {softmax_channels(att_up)};
}

// m_d = sum_k s_d^k o r_d^k. In the single-basis variant the cropped base is
// squashed through a sigmoid before the product.
template <typename T>
MaskLogits<T> blend(const RoiRegion<T>& regions, const ScoreMaps<T>& scores,
                    MergeMode mode = MergeMode::Blender) {
    require_shape_match(regions.data, scores.data, "blend");
    const Tensor4<T>& r = regions.data;
    const Tensor4<T>& s = scores.data;
    const bool squash = mode == MergeMode::SingleBasisSigmoid;
    Tensor4<T> out(r.n, 1, r.h, r.w);
    const std::int64_t plane = r.h * r.w;
    for (std::int64_t d = 0; d < r.n; ++d) {
        const T* rp = r.data.data() + d * r.c * plane;
        const T* sp = s.data.data() + d * r.c * plane;
        T* op = out.plane(d, 0);
        for (std::int64_t i = 0; i < plane; ++i) {
            T acc = T(0);
            for (std::int64_t k = 0; k < r.c; ++k) {
                const T rv = squash ? T(1) / (T(1) + std::exp(-rp[k * plane + i]))
                                    : rp[k * plane + i];
                acc += sp[k * plane + i] * rv;
            }
            op[i] = acc;
        }
    }
    return {std::move(out), squash};
}

// backward of blend w.r.t. regions and scores (softmax-mode path; the sigmoid
// variant is differentiated through the tape's primitive ops instead)
template <typename T>
void blend_backward(const Tensor4<T>& g, const Tensor4<T>& regions, const Tensor4<T>& scores,
                    Tensor4<T>& g_regions, Tensor4<T>& g_scores) {
    const std::int64_t plane = regions.h * regions.w;
    for (std::int64_t d = 0; d < regions.n; ++d) {
        const T* gp = g.plane(d, 0);
        const T* rp = regions.data.data() + d * regions.c * plane;
        const T* sp = scores.data.data() + d * regions.c * plane;
        T* grp = g_regions.data.data() + d * regions.c * plane;
        T* gsp = g_scores.data.data() + d * regions.c * plane;
        for (std::int64_t k = 0; k < regions.c; ++k) {
            for (std::int64_t i = 0; i < plane; ++i) {
                grp[k * plane + i] += gp[i] * sp[k * plane + i];
                gsp[k * plane + i] += gp[i] * rp[k * plane + i];
            }
        }
    }
}

// Fixed one-hot attention maps for the assembler: basis i*M+j owns tile
// (i, j) of the M x M partition.
template <typename T>
AttentionSet<T> make_onehot_attentions(std::int64_t D, std::int64_t M) {
    AttentionSet<T> att{Tensor4<T>(D, M * M, M, M), InterpMode::Nearest};
    for (std::int64_t d = 0; d < D; ++d)
        for (std::int64_t i = 0; i < M; ++i)
            for (std::int64_t j = 0; j < M; ++j) att.data.at(d, i * M + j, i, j) = T(1);
    return att;
}

// FCIS-style assembly: one-hot attentions upsampled with nearest neighbour
// and fed through the same blend kernel.
template <typename T>
MaskLogits<T> assemble_fcis(const RoiRegion<T>& regions, std::int64_t R, std::int64_t M) {
    require(regions.data.c == M * M,
            "assemble_fcis: K must equal M*M, got K=" + std::to_string(regions.data.c));
    require(regions.data.h == R && regions.data.w == R, "assemble_fcis: region resolution != R");
    require(R % M == 0, "assemble_fcis: M must divide R");
    const auto att = make_onehot_attentions<T>(regions.data.n, M);
    const Tensor4<T> up = interpolate_attention(att, R);
    return blend(regions, ScoreMaps<T>{up});
}

// YOLACT-style weighted sum: per-instance softmax-normalized coefficients,
// broadcast over the crop and fed through the same blend kernel. Identical to
// blend() with M = 1 attentions.
template <typename T>
MaskLogits<T> weighted_sum_yolact(const RoiRegion<T>& regions,
                                  const std::vector<std::vector<T>>& coeffs) {
    const std::int64_t D = regions.data.n, K = regions.data.c, R = regions.data.h;
    require(static_cast<std::int64_t>(coeffs.size()) == D, "weighted_sum: need one row per instance");
    ScoreMaps<T> scores{Tensor4<T>(D, K, R, R)};
    for (std::int64_t d = 0; d < D; ++d) {
        require(static_cast<std::int64_t>(coeffs[static_cast<std::size_t>(d)].size()) == K,
                "weighted_sum: coefficient row length != K");
        for (std::int64_t k = 0; k < K; ++k) {
            const T v = coeffs[static_cast<std::size_t>(d)][static_cast<std::size_t>(k)];
            T* sp = scores.data.plane(d, k);
            std::fill(sp, sp + R * R, v);
        }
    }
    return blend(regions, scores);
}

// Renders one instance mask into image space: mask scores resampled from the
// R x R grid to the box extent and thresholded. Canvas pixels participate when
// their center falls inside the box; writes are clipped at the image border.
template <typename T>
Tensor4<std::uint8_t> paste_mask(const MaskLogits<T>& logits, const BoxProposal& box,
                                 std::int64_t image_h, std::int64_t image_w, double threshold = 0.5,
                                 std::int64_t d = 0) {
    require(image_h >= 1 && image_w >= 1, "paste_mask: image dims must be positive");
    require(threshold > 0.0 && threshold < 1.0, "paste_mask: threshold must be in (0,1)");
    require_valid_box(box);
    const std::int64_t R = logits.data.h;
    Tensor4<std::uint8_t> canvas(1, 1, image_h, image_w);

    // probabilities first, then resample (sigmoid does not commute with the
    // bilinear kernel)
    std::vector<double> prob(static_cast<std::size_t>(R * R));
    const T* mp = logits.data.plane(d, 0);
    for (std::int64_t i = 0; i < R * R; ++i) {
        const double m = static_cast<double>(mp[i]);
        prob[static_cast<std::size_t>(i)] =
            logits.probability_space ? m : 1.0 / (1.0 + std::exp(-m));
    }

    const std::int64_t px_lo =
        clamp_index(static_cast<std::int64_t>(std::ceil(box.x1 - 0.5)), image_w);
    const std::int64_t py_lo =
        clamp_index(static_cast<std::int64_t>(std::ceil(box.y1 - 0.5)), image_h);
    for (std::int64_t py = py_lo; py < image_h; ++py) {
        const double cy = static_cast<double>(py) + 0.5;
        if (cy >= box.y2) break;
        if (cy < box.y1) continue;
        double v = (cy - box.y1) / box.height() * static_cast<double>(R) - 0.5;
        v = std::clamp(v, 0.0, static_cast<double>(R - 1));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(v));
        const std::int64_t y1 = std::min(y0 + 1, R - 1);
        const double ty = v - static_cast<double>(y0);
        for (std::int64_t px = px_lo; px < image_w; ++px) {
            const double cx = static_cast<double>(px) + 0.5;
            if (cx >= box.x2) break;
            if (cx < box.x1) continue;
            double u = (cx - box.x1) / box.width() * static_cast<double>(R) - 0.5;
            u = std::clamp(u, 0.0, static_cast<double>(R - 1));
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(u));
            const std::int64_t x1 = std::min(x0 + 1, R - 1);
            const double tx = u - static_cast<double>(x0);
            const double p =
                (prob[static_cast<std::size_t>(y0 * R + x0)] * (1.0 - tx) +
                 prob[static_cast<std::size_t>(y0 * R + x1)] * tx) * (1.0 - ty) +
                (prob[static_cast<std::size_t>(y1 * R + x0)] * (1.0 - tx) +
                 prob[static_cast<std::size_t>(y1 * R + x1)] * tx) * ty;
            if (p >= threshold) canvas.at(0, 0, py, px) = 1;
        }
    }
    return canvas;
}

}  // namespace blendcore
