#include <catch2/catch_amalgamated.hpp>

#include "blendcore/metrics.hpp"

#include "helpers.hpp"

using namespace blendcore;

namespace {

Tensor4<std::uint8_t> rect_mask(std::int64_t h, std::int64_t w, std::int64_t y0, std::int64_t x0,
                                std::int64_t y1, std::int64_t x1) {
    Tensor4<std::uint8_t> m(1, 1, h, w);
    for (std::int64_t y = y0; y < y1; ++y)
        for (std::int64_t x = x0; x < x1; ++x) m.at(0, 0, y, x) = 1;
    return m;
}

}  // namespace

TEST_CASE("mask_iou basics") {
    const auto a = rect_mask(16, 16, 2, 2, 6, 10);
    REQUIRE(mask_iou(a, a) == 1.0);

    const auto b = rect_mask(16, 16, 10, 10, 14, 14);
    REQUIRE(mask_iou(a, b) == 0.0);

    // equal-area 2x4 rectangles overlapping on half their area: 4/12
    const auto r1 = rect_mask(8, 8, 0, 0, 2, 4);
    const auto r2 = rect_mask(8, 8, 0, 2, 2, 6);
    REQUIRE(mask_iou(r1, r2) == Catch::Approx(1.0 / 3.0).margin(1e-12));

    const Tensor4<std::uint8_t> empty(1, 1, 8, 8);
    REQUIRE(mask_iou(empty, empty) == 1.0);

    const Tensor4<std::uint8_t> other(1, 1, 4, 4);
    REQUIRE_THROWS_AS(mask_iou(a, other), std::invalid_argument);
}

TEST_CASE("mask_iou is symmetric and monotone under correct additions") {
    Rng rng(71);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor4<std::uint8_t> a(1, 1, 10, 10), b(1, 1, 10, 10);
        for (auto& v : a.data) v = rng.uniform() < 0.4 ? 1 : 0;
        for (auto& v : b.data) v = rng.uniform() < 0.4 ? 1 : 0;
        REQUIRE(mask_iou(a, b) == mask_iou(b, a));

        // adding one correctly-predicted pixel never lowers the IoU
        auto grown = a;
        for (std::size_t i = 0; i < b.data.size(); ++i)
            if (b.data[i] && !grown.data[i]) {
                grown.data[i] = 1;
                break;
            }
        REQUIRE(mask_iou(grown, b) >= mask_iou(a, b));
    }
}

TEST_CASE("mask_iou equals one only for identical masks") {
    const auto a = rect_mask(8, 8, 1, 1, 4, 4);
    auto b = a;
    REQUIRE(mask_iou(a, b) == 1.0);
    b.at(0, 0, 7, 7) = 1;
    REQUIRE(mask_iou(a, b) < 1.0);
}

TEST_CASE("saturated-positive model predicts exactly the box rectangles") {
    DatasetSpec spec;
    spec.seed = 2;
    spec.n_train = 1;
    spec.n_val = 4;
    const auto [train_scenes, val_scenes] = generate(spec);

    BlendConfig cfg;
    cfg.R = 28;
    cfg.M = 4;
    auto params = init_params<float>(cfg, 5);
    // huge positive base bias saturates every mask logit
    std::fill(params.bases_w.data.begin(), params.bases_w.data.end(), 0.0f);
    std::fill(params.bases_b.data.begin(), params.bases_b.data.end(), 60.0f);

    const auto report = evaluate(params, val_scenes, cfg);
    std::size_t idx = 0;
    for (const auto& scene : val_scenes)
        for (const auto& inst : scene.instances) {
            Tensor4<std::uint8_t> boxmask(1, 1, scene.image.h, scene.image.w);
            for (std::int64_t y = 0; y < scene.image.h; ++y)
                for (std::int64_t x = 0; x < scene.image.w; ++x)
                    if (x + 0.5 > inst.box.x1 && x + 0.5 < inst.box.x2 &&
                        y + 0.5 > inst.box.y1 && y + 0.5 < inst.box.y2)
                        boxmask.at(0, 0, y, x) = 1;
            REQUIRE(report.per_instance_iou[idx] ==
                    Catch::Approx(mask_iou(boxmask, inst.mask)).margin(1e-12));
            ++idx;
        }
    REQUIRE(report.n_instances() == static_cast<std::int64_t>(idx));
    REQUIRE(report.frac75 <= report.frac50);
}

TEST_CASE("saturated-negative model scores zero IoU everywhere") {
    DatasetSpec spec;
    spec.seed = 2;
    spec.n_train = 1;
    spec.n_val = 3;
    const auto [train_scenes, val_scenes] = generate(spec);

    BlendConfig cfg;
    cfg.R = 28;
    cfg.M = 4;
    auto params = init_params<float>(cfg, 5);
    std::fill(params.bases_w.data.begin(), params.bases_w.data.end(), 0.0f);
    std::fill(params.bases_b.data.begin(), params.bases_b.data.end(), -60.0f);

    const auto report = evaluate(params, val_scenes, cfg);
    REQUIRE(report.mean_iou == 0.0);
    REQUIRE(report.frac50 == 0.0);
}

TEST_CASE("evaluation replays bit-identically") {
    DatasetSpec spec;
    spec.seed = 8;
    spec.n_train = 1;
    spec.n_val = 5;
    const auto [train_scenes, val_scenes] = generate(spec);
    BlendConfig cfg;
    cfg.R = 28;
    cfg.M = 4;
    const auto params = init_params<float>(cfg, 6);
    const auto r1 = evaluate(params, val_scenes, cfg);
    const auto r2 = evaluate(params, val_scenes, cfg);
    REQUIRE(r1.per_instance_iou == r2.per_instance_iou);
    REQUIRE(r1.mean_iou == r2.mean_iou);
}

TEST_CASE("report CSV carries the documented header and one row per config") {
    EvalReport r;
    r.config_label = "56_4_14/blender";
    r.per_instance_iou = {0.9, 0.8};
    r.mean_iou = 0.85;
    r.frac50 = 1.0;
    r.frac75 = 0.5;
    const std::string path = "/tmp/blendcore_test_report.csv";
    write_report_csv(path, {r, r});
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "config,mean_iou,frac50,frac75,n_instances");
    std::size_t rows = 0;
    while (std::getline(is, line)) ++rows;
    REQUIRE(rows == 2);
    std::filesystem::remove(path);
}

TEST_CASE("overlap disagreement counts XOR pixels over the shape intersection") {
    // two synthetic instances with known overlap; a model that saturates
    // positive predicts both boxes, so the overlap region fully agrees
    DatasetSpec spec;
    spec.seed = 12;
    spec.n_train = 1;
    spec.n_val = 6;
    spec.overlap_fraction = 1.0;
    const auto [train_scenes, val_scenes] = generate(spec);

    BlendConfig cfg;
    cfg.R = 28;
    cfg.M = 4;
    auto params = init_params<float>(cfg, 5);
    std::fill(params.bases_w.data.begin(), params.bases_w.data.end(), 0.0f);
    std::fill(params.bases_b.data.begin(), params.bases_b.data.end(), 60.0f);

    for (const auto& scene : val_scenes) {
        const auto stats = overlap_disagreement(params, scene, cfg);
        REQUIRE(stats.overlap_pixels > 0);
        REQUIRE(stats.disagree == 0);  // both instances claim the whole region
    }
}
