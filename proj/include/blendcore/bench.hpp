#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "blendcore/blender.hpp"
#include "blendcore/parallel.hpp"
#include "blendcore/rng.hpp"
#include "blendcore/roi.hpp"

// Latency of the blend stage versus instance count, against a simulated
// per-RoI convolutional head. Times are medians over repeated runs after a
// warmup discard and are only ever interpreted relatively, on one machine.

namespace blendcore {

struct BenchResult {
    std::string kernel;
    std::vector<std::int64_t> d_values;
    std::vector<double> median_us;
    double exponent = 1.0;                 // log-log least-squares slope
    double marginal_us_per_instance = 0;   // linear least-squares slope
    bool outputs_match_reference = true;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// slope of y over x by least squares
inline double lsq_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2) return 1.0;
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (x[i] - mx) * (y[i] - my);
        den += (x[i] - mx) * (x[i] - mx);
    }
    return den > 0 ? num / den : 1.0;
}

inline void fit_scaling(BenchResult& r) {
    std::vector<double> lx, ly, dx, dy;
    for (std::size_t i = 0; i < r.d_values.size(); ++i) {
        if (r.d_values[i] <= 0 || r.median_us[i] <= 0) continue;
        lx.push_back(std::log(static_cast<double>(r.d_values[i])));
        ly.push_back(std::log(r.median_us[i]));
        dx.push_back(static_cast<double>(r.d_values[i]));
        dy.push_back(r.median_us[i]);
    }
    r.exponent = lx.size() >= 2 ? lsq_slope(lx, ly) : 1.0;  // single point: 1 by convention
    r.marginal_us_per_instance = dx.size() >= 2 ? lsq_slope(dx, dy) : 0.0;
}

template <typename F>
std::vector<double> timed_runs(std::int64_t warmup, std::int64_t repeats, F&& fn) {
    using clock = std::chrono::steady_clock;
    for (std::int64_t i = 0; i < warmup; ++i) fn();
    std::vector<double> us;
    us.reserve(static_cast<std::size_t>(repeats));
    for (std::int64_t i = 0; i < repeats; ++i) {
        const auto t0 = clock::now();
        fn();
        const auto t1 = clock::now();
        us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    return us;
}

}  // namespace detail

// The full crop/interpolate/normalize/blend path on fixed inputs. The
// parallel variant splits instances across threads; outputs are identical to
// the serial path because each instance is computed independently either way.
template <typename T>
Tensor4<T> blend_pipeline_run(const Tensor4<T>& bases, const std::vector<BoxProposal>& boxes,
                              const AttentionSet<T>& att, const BlendConfig& cfg, bool parallel) {
    const auto D = static_cast<std::int64_t>(boxes.size());
    Tensor4<T> out(D, 1, cfg.R, cfg.R);
    const auto run_one = [&](std::int64_t d) {
        const std::vector<BoxProposal> one{boxes[static_cast<std::size_t>(d)]};
        RoiRegion<T> region = cfg.bottom_sampling == InterpMode::Bilinear
                                  ? roi_align_bilinear(bases, one, cfg.R, 2.0)
                                  : roi_pool_nearest(bases, one, cfg.R, 2.0);
        AttentionSet<T> a{Tensor4<T>(1, cfg.K, cfg.M, cfg.M), att.interp_mode};
        std::copy(att.data.plane(d, 0), att.data.plane(d, 0) + cfg.K * cfg.M * cfg.M,
                  a.data.data.begin());
        const auto scores = normalize_scores(interpolate_attention(a, cfg.R), cfg.merge_mode);
        const auto m = blend(region, scores, cfg.merge_mode);
        std::copy(m.data.data.begin(), m.data.data.end(), out.plane(d, 0));
    };
    if (parallel) {
        parallel_for(0, D, run_one);
    } else {
        for (std::int64_t d = 0; d < D; ++d) run_one(d);
    }
    return out;
}

template <typename T>
BenchResult bench_blend(const BlendConfig& cfg, const std::vector<std::int64_t>& d_list,
                        std::int64_t repeats, bool parallel = false, std::uint64_t seed = 0) {
    require(repeats >= 20, "bench: need >= 20 timed repeats");
    BenchResult result;
    result.kernel = parallel ? "blend_parallel" : "blend";
    Rng rng(derive_seed(seed, 77));
    Tensor4<T> bases(1, cfg.K, 32, 32);
    for (auto& v : bases.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));

    for (const std::int64_t D : d_list) {
        std::vector<BoxProposal> boxes;
        for (std::int64_t d = 0; d < D; ++d) {
            const double x1 = rng.uniform(0.0, 40.0), y1 = rng.uniform(0.0, 40.0);
            boxes.push_back({x1, y1, x1 + rng.uniform(8.0, 24.0), y1 + rng.uniform(8.0, 24.0)});
        }
        AttentionSet<T> att{Tensor4<T>(D, cfg.K, cfg.M, cfg.M), cfg.top_interp};
        for (auto& v : att.data.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));

        const auto reference = blend_pipeline_run(bases, boxes, att, cfg, false);
        Tensor4<T> last;
        const auto us = detail::timed_runs(3, repeats, [&] {
            last = blend_pipeline_run(bases, boxes, att, cfg, parallel);
        });
        if (D > 0 && last.data != reference.data) result.outputs_match_reference = false;
        result.d_values.push_back(D);
        result.median_us.push_back(detail::median(us));
    }
    detail::fit_scaling(result);
    return result;
}

// flop model, multiplies and adds counted separately, exp/div as one each:
//   roi bilinear sample: 11 per basis cell; attention upsample: 9;
//   softmax over K: 4 per basis cell; blend multiply-accumulate: 2
inline double blend_flops_per_instance(std::int64_t R, std::int64_t K) {
    return static_cast<double>(R * R * K) * (11.0 + 9.0 + 4.0 + 2.0);
}

// stand-in per-RoI head: conv K->16 then three conv 16->16, all 3x3 on R x R
inline double roi_head_flops_per_instance(std::int64_t R, std::int64_t K) {
    const double area = static_cast<double>(R * R);
    return 2.0 * 9.0 * area *
           (static_cast<double>(K) * 16.0 + 3.0 * 16.0 * 16.0);
}

template <typename T>
BenchResult bench_roi_head_baseline(std::int64_t R, std::int64_t K,
                                    const std::vector<std::int64_t>& d_list, std::int64_t repeats,
                                    std::uint64_t seed = 0) {
    require(repeats >= 20, "bench: need >= 20 timed repeats");
    BenchResult result;
    result.kernel = "roi_head";
    Rng rng(derive_seed(seed, 78));
    const auto random_tensor = [&rng](std::int64_t n, std::int64_t c, std::int64_t h,
                                      std::int64_t w) {
        Tensor4<T> t(n, c, h, w);
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
        return t;
    };
    const auto w0 = random_tensor(16, K, 3, 3);
    const auto w1 = random_tensor(16, 16, 3, 3);
    const auto w2 = random_tensor(16, 16, 3, 3);
    const auto w3 = random_tensor(16, 16, 3, 3);
    const std::vector<T> bias(16, T(0));

    const auto head = [&](const Tensor4<T>& crops) {
        auto h = relu(conv2d(crops, w0, bias, 1, 1));
        h = relu(conv2d(h, w1, bias, 1, 1));
        h = relu(conv2d(h, w2, bias, 1, 1));
        return relu(conv2d(h, w3, bias, 1, 1));
    };

    for (const std::int64_t D : d_list) {
        const auto crops = random_tensor(D, K, R, R);
        Tensor4<T> last;
        const auto us = detail::timed_runs(3, repeats, [&] { last = head(crops); });
        if (D > 0) {
            const auto reference = head(crops);
            if (last.data != reference.data) result.outputs_match_reference = false;
        }
        result.d_values.push_back(D);
        result.median_us.push_back(detail::median(us));
    }
    detail::fit_scaling(result);
    return result;
}

inline void write_bench_csv(const std::string& path, const std::vector<BenchResult>& results) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("bench: cannot open " + path);
    os << "kernel,D,median_us,exponent\n";
    for (const auto& r : results)
        for (std::size_t i = 0; i < r.d_values.size(); ++i)
            os << r.kernel << "," << r.d_values[i] << "," << r.median_us[i] << "," << r.exponent
               << "\n";
}

}  // namespace blendcore
