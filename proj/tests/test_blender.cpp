#include <catch2/catch_amalgamated.hpp>

#include "blendcore/blender.hpp"

#include "helpers.hpp"

using namespace blendcore;
using testutil::bit_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

template <typename T>
RoiRegion<T> random_region(Rng& rng, std::int64_t D, std::int64_t K, std::int64_t R) {
    return {random_tensor<T>(rng, D, K, R, R), 1.0};
}

// direct tile oracle for the assembler: output pixel (y, x) reads channel
// tile_row * M + tile_col
template <typename T>
Tensor4<T> assemble_tiles_oracle(const Tensor4<T>& regions, std::int64_t M) {
    const std::int64_t R = regions.h;
    Tensor4<T> out(regions.n, 1, R, R);
    for (std::int64_t d = 0; d < regions.n; ++d)
        for (std::int64_t y = 0; y < R; ++y)
            for (std::int64_t x = 0; x < R; ++x) {
                const std::int64_t k = (y * M / R) * M + (x * M / R);
                out.at(d, 0, y, x) = regions.at(d, k, y, x);
            }
    return out;
}

}  // namespace

TEST_CASE("interpolate_attention identity, broadcast, and resize delegation") {
    Rng rng(31);
    AttentionSet<float> att{random_tensor<float>(rng, 2, 3, 4, 4), InterpMode::Bilinear};
    REQUIRE(bit_equal(interpolate_attention(att, 4), att.data));

    AttentionSet<float> point{random_tensor<float>(rng, 2, 3, 1, 1), InterpMode::Bilinear};
    const auto up = interpolate_attention(point, 5);
    for (std::int64_t d = 0; d < 2; ++d)
        for (std::int64_t k = 0; k < 3; ++k)
            for (std::int64_t i = 0; i < 25; ++i)
                REQUIRE(up.at(d, k, i / 5, i % 5) == point.data.at(d, k, 0, 0));

    AttentionSet<float> small{random_tensor<float>(rng, 1, 2, 2, 2), InterpMode::Bilinear};
    REQUIRE(bit_equal(interpolate_attention(small, 4), bilinear_resize(small.data, 4, 4)));

    small.interp_mode = InterpMode::Nearest;
    REQUIRE(bit_equal(interpolate_attention(small, 4), nearest_resize(small.data, 4, 4)));

    REQUIRE_THROWS_AS(interpolate_attention(small, 1), std::invalid_argument);
}

TEST_CASE("normalize_scores softmax and sigmoid modes") {
    Rng rng(32);
    Tensor4<float> single = random_tensor<float>(rng, 2, 1, 3, 3);
    for (const float v : normalize_scores(single, MergeMode::Blender).data.data)
        REQUIRE(v == 1.0f);

    Tensor4<float> equal(1, 4, 2, 2, 0.3f);
    for (const float v : normalize_scores(equal, MergeMode::Blender).data.data)
        REQUIRE(v == Catch::Approx(0.25f).margin(1e-6));

    Tensor4<double> pair(1, 2, 1, 1);
    pair.data = {0.0, std::log(3.0)};
    const auto s = normalize_scores(pair, MergeMode::WeightedSum);
    REQUIRE(s.data.data[0] == Catch::Approx(0.25).margin(1e-12));
    REQUIRE(s.data.data[1] == Catch::Approx(0.75).margin(1e-12));

    Tensor4<double> zero(1, 1, 1, 1, 0.0);
    REQUIRE(normalize_scores(zero, MergeMode::SingleBasisSigmoid).data.data[0] == 0.5);
}

TEST_CASE("blend selects a channel under one-hot scores") {
    Rng rng(33);
    const auto region = random_region<float>(rng, 2, 4, 5);
    ScoreMaps<float> scores{Tensor4<float>(2, 4, 5, 5)};
    for (std::int64_t d = 0; d < 2; ++d) {
        float* p = scores.data.plane(d, 2);
        std::fill(p, p + 25, 1.0f);
    }
    const auto m = blend(region, scores);
    for (std::int64_t d = 0; d < 2; ++d)
        for (std::int64_t i = 0; i < 25; ++i)
            REQUIRE(m.data.at(d, 0, i / 5, i % 5) == region.data.at(d, 2, i / 5, i % 5));
}

TEST_CASE("blend of constant bases under normalized scores is that constant") {
    Rng rng(34);
    RoiRegion<float> region{Tensor4<float>(1, 4, 4, 4, 2.5f), 1.0};
    const auto scores = normalize_scores(random_tensor<float>(rng, 1, 4, 4, 4), MergeMode::Blender);
    const auto m = blend(region, scores);
    for (const float v : m.data.data) REQUIRE(v == Catch::Approx(2.5f).margin(1e-5));
}

TEST_CASE("blend matches a triple-loop oracle on random input") {
    Rng rng(35);
    const auto region = random_region<double>(rng, 2, 4, 8);
    const auto scores = normalize_scores(random_tensor<double>(rng, 2, 4, 8, 8),
                                         MergeMode::Blender);
    const auto m = blend(region, scores);
    for (std::int64_t d = 0; d < 2; ++d)
        for (std::int64_t y = 0; y < 8; ++y)
            for (std::int64_t x = 0; x < 8; ++x) {
                double want = 0;
                for (std::int64_t k = 0; k < 4; ++k)
                    want += scores.data.at(d, k, y, x) * region.data.at(d, k, y, x);
                REQUIRE(m.data.at(d, 0, y, x) == Catch::Approx(want).margin(1e-12));
            }
}

TEST_CASE("blend output is convex in the crop values per pixel") {
    Rng rng(36);
    for (int trial = 0; trial < 100; ++trial) {
        const auto region = random_region<float>(rng, 1, 4, 6);
        const auto scores =
            normalize_scores(random_tensor<float>(rng, 1, 4, 6, 6, -5.0, 5.0), MergeMode::Blender);
        const auto m = blend(region, scores);
        for (std::int64_t y = 0; y < 6; ++y)
            for (std::int64_t x = 0; x < 6; ++x) {
                float lo = region.data.at(0, 0, y, x), hi = lo;
                for (std::int64_t k = 1; k < 4; ++k) {
                    lo = std::min(lo, region.data.at(0, k, y, x));
                    hi = std::max(hi, region.data.at(0, k, y, x));
                }
                REQUIRE(m.data.at(0, 0, y, x) >= lo - 1e-6f);
                REQUIRE(m.data.at(0, 0, y, x) <= hi + 1e-6f);
            }
    }
}

TEST_CASE("blend is equivariant under joint channel permutation") {
    Rng rng(37);
    const auto region = random_region<double>(rng, 1, 4, 4);
    const auto att = random_tensor<double>(rng, 1, 4, 4, 4);
    const std::int64_t perm[4] = {2, 0, 3, 1};
    RoiRegion<double> region_p{Tensor4<double>(1, 4, 4, 4), 1.0};
    Tensor4<double> att_p(1, 4, 4, 4);
    for (std::int64_t k = 0; k < 4; ++k) {
        std::copy(region.data.plane(0, perm[k]), region.data.plane(0, perm[k]) + 16,
                  region_p.data.plane(0, k));
        std::copy(att.plane(0, perm[k]), att.plane(0, perm[k]) + 16, att_p.plane(0, k));
    }
    const auto m = blend(region, normalize_scores(att, MergeMode::Blender));
    const auto mp = blend(region_p, normalize_scores(att_p, MergeMode::Blender));
    REQUIRE(max_abs_diff(m.data, mp.data) < 1e-12);
}

TEST_CASE("adding a constant to all attention logits leaves blend unchanged") {
    Rng rng(38);
    const auto region = random_region<double>(rng, 1, 4, 4);
    const auto att = random_tensor<double>(rng, 1, 4, 4, 4);
    auto shifted = att;
    for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 4; ++x)
            for (std::int64_t k = 0; k < 4; ++k) shifted.at(0, k, y, x) += 7.25;
    const auto m = blend(region, normalize_scores(att, MergeMode::Blender));
    const auto ms = blend(region, normalize_scores(shifted, MergeMode::Blender));
    REQUIRE(max_abs_diff(m.data, ms.data) < 1e-9);
}

TEST_CASE("weighted_sum degenerates from blend at M=1, bit-exact") {
    Rng rng(39);
    for (int trial = 0; trial < 100; ++trial) {
        const std::int64_t D = 1 + static_cast<std::int64_t>(rng.below(3));
        const std::int64_t K = 1 + static_cast<std::int64_t>(rng.below(5));
        const std::int64_t R = 2 + static_cast<std::int64_t>(rng.below(6));
        const auto region = random_region<double>(rng, D, K, R);
        const auto logits = random_tensor<double>(rng, D, K, 1, 1, -4.0, 4.0);

        // blend path: M=1 attentions interpolated then softmaxed
        AttentionSet<double> att{logits, InterpMode::Bilinear};
        const auto scores = normalize_scores(interpolate_attention(att, R), MergeMode::Blender);
        const auto via_blend = blend(region, scores);

        // weighted-sum path: per-instance coefficient rows
        const auto coeff_maps = normalize_scores(logits, MergeMode::WeightedSum);
        std::vector<std::vector<double>> coeffs(static_cast<std::size_t>(D));
        for (std::int64_t d = 0; d < D; ++d)
            for (std::int64_t k = 0; k < K; ++k)
                coeffs[static_cast<std::size_t>(d)].push_back(coeff_maps.data.at(d, k, 0, 0));
        const auto via_ws = weighted_sum_yolact(region, coeffs);
        REQUIRE(bit_equal(via_blend.data, via_ws.data));
    }
}

TEST_CASE("weighted_sum one-hot and uniform coefficient rows") {
    Rng rng(40);
    const auto region = random_region<float>(rng, 1, 4, 3);
    const auto m1 = weighted_sum_yolact(region, {{0.0f, 0.0f, 1.0f, 0.0f}});
    for (std::int64_t i = 0; i < 9; ++i)
        REQUIRE(m1.data.at(0, 0, i / 3, i % 3) == region.data.at(0, 2, i / 3, i % 3));

    const auto m2 = weighted_sum_yolact(region, {{0.25f, 0.25f, 0.25f, 0.25f}});
    for (std::int64_t i = 0; i < 9; ++i) {
        float mean = 0;
        for (std::int64_t k = 0; k < 4; ++k) mean += 0.25f * region.data.at(0, k, i / 3, i % 3);
        REQUIRE(m2.data.at(0, 0, i / 3, i % 3) == Catch::Approx(mean).margin(1e-6));
    }
}

TEST_CASE("assemble_fcis single tile and 2x2 tile layout") {
    Rng rng(41);
    const auto single = random_region<float>(rng, 1, 1, 4);
    const auto m1 = assemble_fcis(single, 4, 1);
    REQUIRE(bit_equal(m1.data, [&] {
        Tensor4<float> t(1, 1, 4, 4);
        std::copy(single.data.plane(0, 0), single.data.plane(0, 0) + 16, t.plane(0, 0));
        return t;
    }()));

    // channel c constant at value c: tiles spell out the channel grid
    RoiRegion<float> region{Tensor4<float>(1, 4, 4, 4), 1.0};
    for (std::int64_t k = 0; k < 4; ++k) {
        float* p = region.data.plane(0, k);
        std::fill(p, p + 16, static_cast<float>(k));
    }
    const auto m = assemble_fcis(region, 4, 2);
    const std::vector<float> want = {0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3};
    REQUIRE(m.data.data == want);
}

TEST_CASE("assemble_fcis equals one-hot blend and the tile oracle") {
    Rng rng(42);
    const std::pair<std::int64_t, std::int64_t> rm[] = {
        {28, 2}, {28, 4}, {28, 7}, {28, 14}, {56, 2}, {56, 4}, {56, 7}, {56, 14}, {4, 2}, {8, 4}};
    for (const auto& [R, M] : rm) {
        const auto region = random_region<double>(rng, 2, M * M, R);
        const auto direct = assemble_fcis(region, R, M);
        const auto oracle = assemble_tiles_oracle(region.data, M);
        REQUIRE(bit_equal(direct.data, oracle));
    }
    RoiRegion<double> bad{Tensor4<double>(1, 3, 4, 4), 1.0};
    REQUIRE_THROWS_AS(assemble_fcis(bad, 4, 2), std::invalid_argument);
}

TEST_CASE("single-basis sigmoid blend squashes the crop") {
    RoiRegion<double> region{Tensor4<double>(1, 1, 2, 2, 0.0), 1.0};
    ScoreMaps<double> scores{Tensor4<double>(1, 1, 2, 2, 0.5)};
    const auto m = blend(region, scores, MergeMode::SingleBasisSigmoid);
    REQUIRE(m.probability_space);
    for (const double v : m.data.data) REQUIRE(v == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("paste_mask saturation and half-split geometry") {
    const BoxProposal box{8.0, 16.0, 24.0, 32.0};
    MaskLogits<float> neg{Tensor4<float>(1, 1, 8, 8, -50.0f), false};
    const auto empty = paste_mask(neg, box, 64, 64);
    for (const auto v : empty.data) REQUIRE(v == 0);

    MaskLogits<float> pos{Tensor4<float>(1, 1, 8, 8, 50.0f), false};
    const auto full = paste_mask(pos, box, 64, 64);
    for (std::int64_t y = 0; y < 64; ++y)
        for (std::int64_t x = 0; x < 64; ++x) {
            const bool inside = x >= 8 && x < 24 && y >= 16 && y < 32;
            REQUIRE(full.at(0, 0, y, x) == (inside ? 1 : 0));
        }

    // left half strongly positive, right half strongly negative
    MaskLogits<float> split{Tensor4<float>(1, 1, 8, 8), false};
    for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t x = 0; x < 8; ++x) split.data.at(0, 0, y, x) = x < 4 ? 50.0f : -50.0f;
    const auto half = paste_mask(split, box, 64, 64);
    for (std::int64_t y = 16; y < 32; ++y)
        for (std::int64_t x = 8; x < 24; ++x) {
            const bool want_on = x < 15;   // boundary pixel may land either side
            const bool want_off = x > 16;
            if (want_on) REQUIRE(half.at(0, 0, y, x) == 1);
            if (want_off) REQUIRE(half.at(0, 0, y, x) == 0);
        }

    // clipping at the image border
    const BoxProposal edge{-8.0, -8.0, 8.0, 8.0};
    const auto clipped = paste_mask(pos, edge, 16, 16);
    std::int64_t on = 0;
    for (const auto v : clipped.data) on += v;
    REQUIRE(on == 64);  // only the in-image quadrant

    REQUIRE_THROWS_AS(paste_mask(pos, box, 0, 64), std::invalid_argument);
    REQUIRE_THROWS_AS(paste_mask(pos, box, 64, 64, 1.5), std::invalid_argument);
}

TEST_CASE("blend config invariants") {
    BlendConfig ok;
    ok.validate();
    REQUIRE(ok.abbrev() == "56_4_14");
    REQUIRE(ok.label() == "56_4_14/blender");

    BlendConfig ws;
    ws.merge_mode = MergeMode::WeightedSum;
    ws.M = 2;
    REQUIRE_THROWS_AS(ws.validate(), std::invalid_argument);

    BlendConfig as;
    as.merge_mode = MergeMode::Assembler;
    as.M = 4;
    as.K = 15;
    REQUIRE_THROWS_AS(as.validate(), std::invalid_argument);
    as.K = 16;
    as.R = 28;
    as.validate();

    BlendConfig sb;
    sb.merge_mode = MergeMode::SingleBasisSigmoid;
    sb.K = 2;
    REQUIRE_THROWS_AS(sb.validate(), std::invalid_argument);

    BlendConfig big_m;
    big_m.M = 99;
    big_m.R = 56;
    REQUIRE_THROWS_AS(big_m.validate(), std::invalid_argument);
}
