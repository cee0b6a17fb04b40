#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "blendcore/bench.hpp"

using namespace blendcore;

namespace {

BlendConfig micro_cfg() {
    BlendConfig cfg;
    cfg.R = 12;
    cfg.M = 4;
    cfg.K = 3;
    return cfg;
}

}  // namespace

TEST_CASE("flop accounting: head exceeds blend by far at the default shape") {
    const double blend = blend_flops_per_instance(56, 4);
    const double head = roi_head_flops_per_instance(56, 4);
    REQUIRE(blend == Catch::Approx(56.0 * 56 * 4 * 26).margin(1));
    REQUIRE(head == Catch::Approx(2.0 * 9 * 56 * 56 * (4 * 16 + 3 * 16 * 16)).margin(1));
    REQUIRE(head / blend >= 50.0);
}

TEST_CASE("single-point D list reports exponent 1 by convention") {
    const auto r = bench_blend<float>(micro_cfg(), {1}, 20);
    REQUIRE(r.d_values.size() == 1);
    REQUIRE(r.exponent == 1.0);
}

TEST_CASE("more instances cost more time") {
    const auto r = bench_blend<float>(micro_cfg(), {2, 32}, 21);
    REQUIRE(r.median_us[0] > 0.0);
    REQUIRE(r.median_us[1] > r.median_us[0]);
}

TEST_CASE("timed kernels reproduce the reference outputs") {
    const auto serial = bench_blend<float>(micro_cfg(), {1, 4}, 20);
    REQUIRE(serial.outputs_match_reference);

    set_thread_count(2);
    const auto parallel = bench_blend<float>(micro_cfg(), {4}, 20, true);
    set_thread_count(1);
    REQUIRE(parallel.kernel == "blend_parallel");
    REQUIRE(parallel.outputs_match_reference);

    const auto head = bench_roi_head_baseline<float>(8, 3, {0, 2}, 20);
    REQUIRE(head.outputs_match_reference);
    REQUIRE(head.d_values.front() == 0);
}

TEST_CASE("repeats below the contract are rejected") {
    REQUIRE_THROWS_AS(bench_blend<float>(micro_cfg(), {1}, 5), std::invalid_argument);
}

TEST_CASE("bench CSV has one row per (kernel, D) with the exponent column") {
    const auto a = bench_blend<float>(micro_cfg(), {1, 2}, 20);
    const auto b = bench_roi_head_baseline<float>(8, 3, {1}, 20);
    const std::string path = "/tmp/blendcore_test_bench.csv";
    write_bench_csv(path, {a, b});
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "kernel,D,median_us,exponent");
    std::size_t rows = 0;
    bool saw_head = false;
    while (std::getline(is, line)) {
        ++rows;
        if (line.rfind("roi_head,", 0) == 0) saw_head = true;
    }
    REQUIRE(rows == 3);
    REQUIRE(saw_head);
    std::filesystem::remove(path);
}

TEST_CASE("least-squares scaling fit recovers a linear relationship") {
    BenchResult r;
    r.d_values = {1, 2, 4, 8, 16};
    for (const auto d : r.d_values) r.median_us.push_back(3.0 * static_cast<double>(d));
    detail::fit_scaling(r);
    REQUIRE(r.exponent == Catch::Approx(1.0).margin(1e-9));
    REQUIRE(r.marginal_us_per_instance == Catch::Approx(3.0).margin(1e-9));
}
