// Experiment driver: dataset generation, training, evaluation, ablation
// sweeps, gradient checks, benchmarks and visualization over one JSON config.
//
// Exit codes: 0 success, 1 failure (incl. failed gradient checks),
// 2 invalid configuration, 3 training divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "blendcore/autodiff.hpp"
#include "blendcore/bench.hpp"
#include "blendcore/config.hpp"
#include "blendcore/metrics.hpp"
#include "blendcore/synthdata.hpp"
#include "blendcore/trainer.hpp"

namespace fs = std::filesystem;
using namespace blendcore;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::int64_t seed = -1;   // -1: keep config seeds
    std::string out;          // empty: keep config out dir
    int threads = 1;
};

ExperimentConfig resolve_config(const GlobalOpts& g, bool need_file = true) {
    ExperimentConfig cfg;
    if (!g.config_path.empty()) {
        cfg = load_experiment_config(g.config_path);
    } else if (need_file) {
        throw ConfigError("config: --config is required");
    }
    if (g.seed >= 0) {
        cfg.dataset.seed = static_cast<std::uint64_t>(g.seed);
        cfg.train.seed = static_cast<std::uint64_t>(g.seed);
    }
    if (!g.out.empty()) cfg.out_dir = g.out;
    return cfg;
}

void write_config_copy(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << experiment_config_to_json(cfg).dump(2) << "\n";
}

int cmd_run(const GlobalOpts& g, bool per_instance_csv) {
    auto cfg = resolve_config(g);
    fs::create_directories(cfg.out_dir);
    write_run_json(cfg.out_dir + "/run.json", cfg, "run", thread_count());
    write_config_copy(cfg.out_dir + "/config.json", cfg);

    const auto [train_scenes, val_scenes] = generate(cfg.dataset);
    auto params = init_params<float>(cfg.blend(), cfg.train.seed);
    const auto result = train(params, train_scenes, cfg.train);
    write_curve_csv(cfg.out_dir + "/curve.csv", result.curve);

    const std::string ckpt = cfg.out_dir + "/checkpoint";
    save_checkpoint(ckpt, params);
    write_config_copy(ckpt + "/config.json", cfg);

    const auto report = evaluate(params, val_scenes, cfg.blend());
    write_report_csv(cfg.out_dir + "/report.csv", {report});
    if (per_instance_csv) write_per_instance_csv(cfg.out_dir + "/per_instance.csv", report);

    std::printf("%s mean_iou=%.4f frac50=%.4f frac75=%.4f n=%lld final_loss=%.5f\n",
                report.config_label.c_str(), report.mean_iou, report.frac50, report.frac75,
                static_cast<long long>(report.n_instances()),
                result.curve.empty() ? 0.0 : result.curve.back().loss);
    return 0;
}

int cmd_ablate(const GlobalOpts& g, const std::string& axis) {
    auto base = resolve_config(g);
    fs::create_directories(base.out_dir);
    write_run_json(base.out_dir + "/run.json", base, "ablate " + axis, thread_count());

    const auto cells = ablate_cells(base, axis);
    // one dataset, shared by every cell
    const auto [train_scenes, val_scenes] = generate(base.dataset);

    std::vector<EvalReport> reports;
    for (const auto& cell : cells) {
        auto params = init_params<float>(cell.config.blend(), cell.config.train.seed);
        train(params, train_scenes, cell.config.train);
        auto report = evaluate(params, val_scenes, cell.config.blend());
        report.config_label = cell.label;
        std::printf("%s mean_iou=%.4f frac50=%.4f frac75=%.4f\n", cell.label.c_str(),
                    report.mean_iou, report.frac50, report.frac75);
        reports.push_back(std::move(report));
    }
    write_report_csv(base.out_dir + "/ablate_" + axis + ".csv", reports);
    return 0;
}

int cmd_gen_data(const GlobalOpts& g) {
    auto cfg = resolve_config(g);
    fs::create_directories(cfg.out_dir);
    write_run_json(cfg.out_dir + "/run.json", cfg, "gen-data", thread_count());
    export_dataset(cfg.out_dir, cfg.dataset);
    std::printf("dataset written to %s (train=%lld val=%lld)\n", cfg.out_dir.c_str(),
                static_cast<long long>(cfg.dataset.n_train),
                static_cast<long long>(cfg.dataset.n_val));
    return 0;
}

int cmd_gradcheck(const GlobalOpts& g, const std::string& out_file, bool inject_broken) {
    auto checks = default_grad_checks(g.seed >= 0 ? static_cast<std::uint64_t>(g.seed) : 0);
    if (inject_broken) {
        // test fixture: a node whose declared gradient is wrong on purpose
        GradCheckCase broken{"injected_broken", {Tensor4<double>(1, 1, 2, 2, 0.7)}, nullptr};
        broken.build_loss = [](Tape<double>& t, const std::vector<Tape<double>::ValueId>& ids) {
            auto x = ids[0];
            auto y = t.record(elementwise_mul(t.value(x), t.value(x)),
                              [x](const Tensor4<double>& gr, const Tape<double>&,
                                  std::vector<Tensor4<double>>& grads) {
                                  tape_ops::accumulate(grads, x, gr);  // misses the factor 2x
                              });
            return tape_ops::project(t, y, Tensor4<double>(1, 1, 2, 2, 1.0));
        };
        checks.push_back(std::move(broken));
    }

    std::string csv = "op,max_rel_err,tol,pass\n";
    bool all_pass = true;
    for (const auto& c : checks) {
        const auto r = run_grad_check(c);
        char line[160];
        std::snprintf(line, sizeof(line), "%s,%.3e,%.1e,%d\n", r.op.c_str(), r.max_rel_err,
                      r.tolerance, r.pass ? 1 : 0);
        csv += line;
        all_pass = all_pass && r.pass;
    }
    std::fputs(csv.c_str(), stdout);
    if (!out_file.empty()) {
        std::ofstream os(out_file);
        os << csv;
    }
    return all_pass ? 0 : 1;
}

int cmd_bench(const GlobalOpts& g, std::int64_t repeats, bool parallel, bool svg) {
    auto cfg = resolve_config(g, false);
    fs::create_directories(cfg.out_dir);
    write_run_json(cfg.out_dir + "/run.json", cfg, "bench", thread_count());

    const std::vector<std::int64_t> blend_d = {1, 2, 4, 8, 16, 32, 64, 128};
    const std::vector<std::int64_t> head_d = {1, 2, 4, 8};
    std::vector<BenchResult> results;
    results.push_back(bench_blend<float>(cfg.blend(), blend_d, repeats));
    results.push_back(
        bench_roi_head_baseline<float>(cfg.blend().R, cfg.blend().K, head_d, repeats));
    if (parallel) results.push_back(bench_blend<float>(cfg.blend(), blend_d, repeats, true));

    write_bench_csv(cfg.out_dir + "/bench.csv", results);
    if (svg) {
        std::vector<SvgSeries> series;
        for (const auto& r : results) {
            SvgSeries s{r.kernel, {}, {}};
            for (std::size_t i = 0; i < r.d_values.size(); ++i) {
                if (r.d_values[i] <= 0) continue;
                s.x.push_back(static_cast<double>(r.d_values[i]));
                s.y.push_back(r.median_us[i]);
            }
            series.push_back(std::move(s));
        }
        write_svg_loglog(cfg.out_dir + "/bench.svg", series, "blend stage latency vs D");
    }

    const double flop_ratio =
        roi_head_flops_per_instance(cfg.blend().R, cfg.blend().K) /
        blend_flops_per_instance(cfg.blend().R, cfg.blend().K);
    for (const auto& r : results)
        std::printf("%s: exponent=%.3f marginal=%.2f us/instance ref_match=%d\n",
                    r.kernel.c_str(), r.exponent, r.marginal_us_per_instance,
                    r.outputs_match_reference ? 1 : 0);
    std::printf("flop_ratio head/blend per instance: %.1f\n", flop_ratio);
    return 0;
}

int cmd_visualize(const GlobalOpts& g, const std::string& checkpoint, std::int64_t scene_id,
                  const std::string& split) {
    ExperimentConfig cfg = load_experiment_config(checkpoint + "/config.json");
    if (g.seed >= 0) {
        cfg.dataset.seed = static_cast<std::uint64_t>(g.seed);
    }
    const std::string out = g.out.empty() ? cfg.out_dir + "/viz" : g.out;
    fs::create_directories(out);
    write_run_json(out + "/run.json", cfg, "visualize", thread_count());

    auto params = load_checkpoint<float>(checkpoint, cfg.blend());
    const int split_id = split == "train" ? 0 : 1;
    const Scene scene = generate_scene(cfg.dataset, split_id, scene_id);
    const auto trace = forward_trace(params, scene, cfg.blend());

    write_pgm(out + "/image.pgm", scene.image);
    const auto K = trace.bases.c;
    for (std::int64_t k = 0; k < K; ++k)
        write_pgm_normalized(out + "/basis_" + std::to_string(k) + ".pgm", trace.bases, 0, k);

    // panel strip: K maps side by side with a 2px divider
    const auto panels = [&](const Tensor4<float>& t, std::int64_t d, bool normalize) {
        const std::int64_t R = t.h;
        Tensor4<float> strip(1, 1, R, K * R + 2 * (K - 1), normalize ? 0.5f : 0.0f);
        for (std::int64_t k = 0; k < K; ++k) {
            float lo = t.at(d, k, 0, 0), hi = lo;
            if (normalize)
                for (std::int64_t i = 0; i < R * R; ++i) {
                    lo = std::min(lo, t.plane(d, k)[i]);
                    hi = std::max(hi, t.plane(d, k)[i]);
                }
            for (std::int64_t y = 0; y < R; ++y)
                for (std::int64_t x = 0; x < R; ++x) {
                    float v = t.at(d, k, y, x);
                    if (normalize) v = hi > lo ? (v - lo) / (hi - lo) : 0.5f;
                    strip.at(0, 0, y, k * (R + 2) + x) = v;
                }
        }
        return strip;
    };

    const auto D = static_cast<std::int64_t>(scene.instances.size());
    for (std::int64_t d = 0; d < D; ++d) {
        const std::string tag = std::to_string(d);
        write_pgm(out + "/instance_" + tag + "_attention.pgm", panels(trace.scores, d, false));
        // intermediate products s o r (post-squash crops in the sigmoid variant)
        Tensor4<float> prod(1, trace.regions.c, trace.regions.h, trace.regions.w);
        for (std::int64_t k = 0; k < trace.regions.c; ++k)
            for (std::int64_t i = 0; i < trace.regions.h * trace.regions.w; ++i) {
                float rv = trace.regions.plane(d, k)[i];
                if (trace.logits.probability_space) rv = 1.0f / (1.0f + std::exp(-rv));
                prod.plane(0, k)[i] = trace.scores.plane(d, k)[i] * rv;
            }
        write_pgm(out + "/instance_" + tag + "_products.pgm", panels(prod, 0, true));
        const auto mask = paste_mask(trace.logits, scene.instances[static_cast<std::size_t>(d)].box,
                                     scene.image.h, scene.image.w, 0.5, d);
        Tensor4<float> mf(1, 1, mask.h, mask.w);
        for (std::size_t i = 0; i < mask.data.size(); ++i)
            mf.data[i] = mask.data[i] ? 1.0f : 0.0f;
        write_pgm(out + "/instance_" + tag + "_mask.pgm", mf);
    }
    std::printf("wrote %lld basis images and %lld instance visualizations to %s\n",
                static_cast<long long>(K), static_cast<long long>(D), out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blendcore: attention-blended instance mask experiments"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--seed", g.seed, "override dataset and training seeds");
    app.add_option("--out", g.out, "override output directory");
    app.add_option("--threads", g.threads,
                   "worker threads (BLENDCORE_THREADS env overrides this flag)");

    auto* run = app.add_subcommand("run", "generate data, train, evaluate");
    run->add_option("--config", g.config_path, "experiment config JSON")->required();
    bool per_instance = false;
    run->add_flag("--per-instance", per_instance, "also write per-instance IoU CSV");

    auto* ablate = app.add_subcommand("ablate", "train/evaluate every cell on one axis");
    ablate->add_option("--config", g.config_path, "experiment config JSON")->required();
    std::string axis;
    ablate->add_option("--axis", axis, "merge_mode | R_M | K | top_interp | bottom_sampling")
        ->required();

    auto* viz = app.add_subcommand("visualize", "bases, attentions, products and masks as PGM");
    std::string checkpoint, split = "val";
    std::int64_t scene_id = 0;
    viz->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
    viz->add_option("--scene", scene_id, "scene index");
    viz->add_option("--split", split, "train | val");

    auto* grad = app.add_subcommand("gradcheck", "finite-difference checks for every op");
    std::string grad_out;
    bool inject_broken = false;
    grad->add_option("--out", grad_out, "also write the CSV here");
    grad->add_flag("--inject-broken", inject_broken, "add a knowingly wrong backward (fixture)")
        ->group("");

    auto* bench = app.add_subcommand("bench", "blend vs per-RoI head latency");
    bench->add_option("--config", g.config_path, "experiment config JSON");
    std::int64_t repeats = 25;
    bool parallel = false, svg = false;
    bench->add_option("--repeats", repeats, "timed repeats per point (>= 20)");
    bench->add_flag("--parallel", parallel, "also time the multi-threaded blend path");
    bench->add_flag("--svg", svg, "emit an SVG line chart");

    auto* gen = app.add_subcommand("gen-data", "export the dataset as BT4 + CSV");
    gen->add_option("--config", g.config_path, "experiment config JSON")->required();

    CLI11_PARSE(app, argc, argv);
    set_thread_count(g.threads);

    try {
        if (run->parsed()) return cmd_run(g, per_instance);
        if (ablate->parsed()) return cmd_ablate(g, axis);
        if (viz->parsed()) return cmd_visualize(g, checkpoint, scene_id, split);
        if (grad->parsed()) return cmd_gradcheck(g, grad_out, inject_broken);
        if (bench->parsed()) return cmd_bench(g, repeats, parallel, svg);
        if (gen->parsed()) return cmd_gen_data(g);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
