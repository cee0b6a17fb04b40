#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "blendcore/roi.hpp"

#include "helpers.hpp"

using namespace blendcore;
using testutil::bit_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// independent per-bin oracle: evaluates the bin-center sample point and the
// four-cell interpolation by hand (zero outside the map)
template <typename T>
T bilinear_sample_oracle(const Tensor4<T>& bases, std::int64_t k, const BoxProposal& box,
                         double stride, std::int64_t R, std::int64_t i, std::int64_t j) {
    const double x = box.x1 / stride + (j + 0.5) * (box.width() / stride) / R;
    const double y = box.y1 / stride + (i + 0.5) * (box.height() / stride) / R;
    const double u = x - 0.5, v = y - 0.5;
    const auto cell = [&](std::int64_t yy, std::int64_t xx) -> double {
        if (yy < 0 || yy >= bases.h || xx < 0 || xx >= bases.w) return 0.0;
        return static_cast<double>(bases.at(0, k, yy, xx));
    };
    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(u));
    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(v));
    const double tx = u - x0, ty = v - y0;
    return static_cast<T>((cell(y0, x0) * (1 - tx) + cell(y0, x0 + 1) * tx) * (1 - ty) +
                          (cell(y0 + 1, x0) * (1 - tx) + cell(y0 + 1, x0 + 1) * tx) * ty);
}

template <typename T>
T nearest_sample_oracle(const Tensor4<T>& bases, std::int64_t k, const BoxProposal& box,
                        double stride, std::int64_t R, std::int64_t i, std::int64_t j) {
    const double x = box.x1 / stride + (j + 0.5) * (box.width() / stride) / R;
    const double y = box.y1 / stride + (i + 0.5) * (box.height() / stride) / R;
    const std::int64_t xx = static_cast<std::int64_t>(std::ceil(x - 0.5 - 0.5));
    const std::int64_t yy = static_cast<std::int64_t>(std::ceil(y - 0.5 - 0.5));
    if (yy < 0 || yy >= bases.h || xx < 0 || xx >= bases.w) return T(0);
    return bases.at(0, k, yy, xx);
}

}  // namespace

TEST_CASE("roi_align constant map inside box stays constant") {
    Tensor4<float> bases(1, 2, 8, 8, 3.5f);
    const std::vector<BoxProposal> boxes = {{4.0, 4.0, 12.0, 10.0}};
    const auto region = roi_align_bilinear(bases, boxes, 4, 2.0);
    REQUIRE(region.data.n == 1);
    REQUIRE(region.data.h == 4);
    for (const float v : region.data.data) REQUIRE(v == Catch::Approx(3.5f).margin(1e-6));
}

TEST_CASE("roi_align identity crop when box covers the map and R matches") {
    Rng rng(21);
    const auto bases = random_tensor<float>(rng, 1, 3, 6, 6);
    // full map in image coordinates at stride 2: [0, 12] x [0, 12]
    const std::vector<BoxProposal> boxes = {{0.0, 0.0, 12.0, 12.0}};
    const auto region = roi_align_bilinear(bases, boxes, 6, 2.0);
    for (std::int64_t k = 0; k < 3; ++k)
        for (std::int64_t i = 0; i < 6; ++i)
            for (std::int64_t j = 0; j < 6; ++j)
                REQUIRE(region.data.at(0, k, i, j) ==
                        Catch::Approx(bases.at(0, k, i, j)).margin(1e-6));
}

TEST_CASE("roi_align left half of a ramp matches hand-evaluated samples") {
    // 4x4 ramp, value = column index; stride 1; box covers the left half
    Tensor4<double> bases(1, 1, 4, 4);
    for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 4; ++x) bases.at(0, 0, y, x) = static_cast<double>(x);
    const BoxProposal box{0.0, 0.0, 2.0, 4.0};
    const auto region = roi_align_bilinear(bases, {box}, 2, 1.0);
    // bin centers x = 0.5, 1.5 land exactly on column centers 0 and 1
    for (std::int64_t i = 0; i < 2; ++i) {
        REQUIRE(region.data.at(0, 0, i, 0) == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(region.data.at(0, 0, i, 1) == Catch::Approx(1.0).margin(1e-12));
    }
    for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < 2; ++j)
            REQUIRE(region.data.at(0, 0, i, j) ==
                    Catch::Approx(bilinear_sample_oracle(bases, 0, box, 1.0, 2, i, j))
                        .margin(1e-12));
}

TEST_CASE("roi_align matches the per-bin oracle on random boxes") {
    Rng rng(22);
    const auto bases = random_tensor<float>(rng, 1, 3, 10, 12);
    for (int trial = 0; trial < 25; ++trial) {
        const double x1 = rng.uniform(-4.0, 20.0), y1 = rng.uniform(-4.0, 16.0);
        const BoxProposal box{x1, y1, x1 + rng.uniform(1.0, 14.0), y1 + rng.uniform(1.0, 12.0)};
        const std::int64_t R = 1 + static_cast<std::int64_t>(rng.below(6));
        const auto region = roi_align_bilinear(bases, {box}, R, 2.0);
        for (std::int64_t k = 0; k < 3; ++k)
            for (std::int64_t i = 0; i < R; ++i)
                for (std::int64_t j = 0; j < R; ++j)
                    REQUIRE(region.data.at(0, k, i, j) ==
                            Catch::Approx(bilinear_sample_oracle(bases, k, box, 2.0, R, i, j))
                                .margin(1e-6));
    }
}

TEST_CASE("roi_pool matches the nearest-index oracle on misaligned boxes") {
    Rng rng(23);
    const auto bases = random_tensor<float>(rng, 1, 2, 9, 9);
    for (int trial = 0; trial < 25; ++trial) {
        const double x1 = rng.uniform(-3.0, 14.0), y1 = rng.uniform(-3.0, 14.0);
        const BoxProposal box{x1, y1, x1 + rng.uniform(1.0, 10.0), y1 + rng.uniform(1.0, 10.0)};
        const std::int64_t R = 1 + static_cast<std::int64_t>(rng.below(5));
        const auto region = roi_pool_nearest(bases, {box}, R, 2.0);
        for (std::int64_t k = 0; k < 2; ++k)
            for (std::int64_t i = 0; i < R; ++i)
                for (std::int64_t j = 0; j < R; ++j)
                    REQUIRE(region.data.at(0, k, i, j) ==
                            nearest_sample_oracle(bases, k, box, 2.0, R, i, j));
    }
}

TEST_CASE("roi_pool copies an aligned integer sub-array exactly") {
    Rng rng(24);
    const auto bases = random_tensor<float>(rng, 1, 1, 8, 8);
    // cells [2..5) x [1..4) at stride 2 -> image box [4, 10) x [2, 8)
    const auto region = roi_pool_nearest(bases, {{4.0, 2.0, 10.0, 8.0}}, 3, 2.0);
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 3; ++j)
            REQUIRE(region.data.at(0, 0, i, j) == bases.at(0, 0, 1 + i, 2 + j));
}

TEST_CASE("constant map stays constant under roi_pool") {
    Tensor4<float> bases(1, 1, 6, 6, -2.25f);
    const auto region = roi_pool_nearest(bases, {{1.3, 2.7, 9.9, 11.1}}, 5, 2.0);
    for (const float v : region.data.data) REQUIRE(v == -2.25f);
}

TEST_CASE("aligned grid boxes make bilinear and nearest agree") {
    Rng rng(25);
    const auto bases = random_tensor<float>(rng, 1, 2, 8, 8);
    // box aligned to the cell grid, R equals the covered cell extent
    const BoxProposal box{2.0 * 1, 2.0 * 2, 2.0 * 6, 2.0 * 7};  // cells [1,6) x [2,7)
    const auto a = roi_align_bilinear(bases, {box}, 5, 2.0);
    const auto p = roi_pool_nearest(bases, {box}, 5, 2.0);
    REQUIRE(max_abs_diff(a.data, p.data) < 1e-6);
}

TEST_CASE("integer-cell translation leaves the crop unchanged") {
    Rng rng(26);
    Tensor4<float> bases(1, 1, 12, 12);
    // content confined to a block away from borders
    for (std::int64_t y = 2; y < 6; ++y)
        for (std::int64_t x = 2; x < 6; ++x)
            bases.at(0, 0, y, x) = static_cast<float>(rng.uniform(-1, 1));
    Tensor4<float> shifted(1, 1, 12, 12);
    for (std::int64_t y = 0; y < 9; ++y)
        for (std::int64_t x = 0; x < 9; ++x)
            shifted.at(0, 0, y + 3, x + 3) = bases.at(0, 0, y, x);

    const BoxProposal box{3.1, 3.7, 13.4, 12.9};
    const BoxProposal moved{box.x1 + 3 * 2.0, box.y1 + 3 * 2.0, box.x2 + 3 * 2.0,
                            box.y2 + 3 * 2.0};
    const auto a = roi_align_bilinear(bases, {box}, 4, 2.0);
    const auto b = roi_align_bilinear(shifted, {moved}, 4, 2.0);
    REQUIRE(max_abs_diff(a.data, b.data) < 1e-6);
}

TEST_CASE("bilinear samples stay within the contributing cell bounds") {
    Rng rng(27);
    const auto bases = random_tensor<float>(rng, 1, 1, 8, 8);
    float lo = bases.data[0], hi = bases.data[0];
    for (const float v : bases.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (int trial = 0; trial < 50; ++trial) {
        // boxes inside the map so zero padding never participates
        const double x1 = rng.uniform(2.0, 8.0), y1 = rng.uniform(2.0, 8.0);
        const BoxProposal box{x1, y1, x1 + rng.uniform(1.0, 5.0), y1 + rng.uniform(1.0, 5.0)};
        const auto region = roi_align_bilinear(bases, {box}, 3, 2.0);
        for (const float v : region.data.data) {
            REQUIRE(v >= lo - 1e-6f);
            REQUIRE(v <= hi + 1e-6f);
        }
    }
}

TEST_CASE("empty box list and degenerate boxes") {
    Tensor4<float> bases(1, 2, 4, 4, 1.0f);
    const auto region = roi_align_bilinear(bases, {}, 3, 1.0);
    REQUIRE(region.data.n == 0);
    REQUIRE(region.data.size() == 0);

    REQUIRE_THROWS_AS(roi_align_bilinear(bases, {{1.0, 1.0, 1.0, 3.0}}, 3, 1.0),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(roi_pool_nearest(bases, {{1.0, 2.0, 5.0, 2.0 + 1e-9}}, 3, 1.0),
                      std::invalid_argument);
}

TEST_CASE("boxes CSV round-trip with header") {
    std::stringstream ss;
    ss << "instance_id,x1,y1,x2,y2\n0,1.5,2.5,10,12\n1,-3,0,4.25,8\n";
    const auto boxes = read_boxes_csv(ss);
    REQUIRE(boxes.size() == 2);
    REQUIRE(boxes[0].x1 == 1.5);
    REQUIRE(boxes[1].x2 == 4.25);

    std::stringstream bad;
    bad << "instance_id,x1,y1,x2,y2\n0,1,2\n";
    REQUIRE_THROWS_AS(read_boxes_csv(bad), std::runtime_error);
}
