#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "blendcore/autodiff.hpp"
#include "blendcore/blender.hpp"
#include "blendcore/io.hpp"
#include "blendcore/rng.hpp"
#include "blendcore/synthdata.hpp"

// Desk-scale end-to-end model: a small convolutional bottom stack produces K
// bases at stride 2, a single 3x3 convolution head produces K*M*M attention
// logits which are read at the feature location nearest each ground-truth box
// center. Training minimizes per-pixel BCE of the blended logits against the
// box-cropped ground truth, with plain SGD + momentum.

namespace blendcore {

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::int64_t kBackboneWidth = 16;
inline constexpr std::int64_t kBasesStride = 2;

template <typename T>
struct ModelParams {
    std::int64_t K = 4, M = 14;
    MergeMode merge_mode = MergeMode::Blender;

    Tensor4<T> conv1_w, conv1_b;  // 16 x 1 x 3 x 3
    Tensor4<T> conv2_w, conv2_b;  // 16 x 16 x 3 x 3
    Tensor4<T> conv3_w, conv3_b;  // 16 x 16 x 3 x 3
    Tensor4<T> bases_w, bases_b;  // K x 16 x 1 x 1, applied at stride 2
    Tensor4<T> top_w, top_b;      // (K*M*M) x 16 x 3 x 3; empty in assembler mode

    bool has_top_head() const { return merge_mode != MergeMode::Assembler; }

    std::vector<std::pair<std::string, Tensor4<T>*>> named_tensors() {
        std::vector<std::pair<std::string, Tensor4<T>*>> out = {
            {"conv1_w", &conv1_w}, {"conv1_b", &conv1_b}, {"conv2_w", &conv2_w},
            {"conv2_b", &conv2_b}, {"conv3_w", &conv3_w}, {"conv3_b", &conv3_b},
            {"bases_w", &bases_w}, {"bases_b", &bases_b}};
        if (has_top_head()) {
            out.emplace_back("top_w", &top_w);
            out.emplace_back("top_b", &top_b);
        }
        return out;
    }
};

// Kaiming fan-in init for the stack, zero biases; the attention head starts
// at zero so training begins from uniform softmax scores.
template <typename T>
ModelParams<T> init_params(const BlendConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams<T> p;
    p.K = cfg.K;
    p.M = cfg.M;
    p.merge_mode = cfg.merge_mode;
    Rng rng(derive_seed(seed, 42));
    const auto kaiming = [&rng](std::int64_t co, std::int64_t ci, std::int64_t kh,
                                std::int64_t kw) {
        Tensor4<T> w(co, ci, kh, kw);
        const double s = std::sqrt(2.0 / static_cast<double>(ci * kh * kw));
        for (auto& v : w.data) v = static_cast<T>(s * rng.gaussian());
        return w;
    };
    p.conv1_w = kaiming(kBackboneWidth, 1, 3, 3);
    p.conv1_b = Tensor4<T>(1, kBackboneWidth, 1, 1);
    p.conv2_w = kaiming(kBackboneWidth, kBackboneWidth, 3, 3);
    p.conv2_b = Tensor4<T>(1, kBackboneWidth, 1, 1);
    p.conv3_w = kaiming(kBackboneWidth, kBackboneWidth, 3, 3);
    p.conv3_b = Tensor4<T>(1, kBackboneWidth, 1, 1);
    p.bases_w = kaiming(cfg.K, kBackboneWidth, 1, 1);
    p.bases_b = Tensor4<T>(1, cfg.K, 1, 1);
    if (p.has_top_head()) {
        p.top_w = Tensor4<T>(cfg.K * cfg.M * cfg.M, kBackboneWidth, 3, 3);
        p.top_b = Tensor4<T>(1, cfg.K * cfg.M * cfg.M, 1, 1);
    }
    return p;
}

// feature cell whose center is nearest to a continuous image coordinate
inline std::int64_t feature_location(double image_coord, std::int64_t extent, bool& clamped) {
    const std::int64_t i = nearest_index(image_coord - 0.5);
    if (i < 0 || i >= extent) {
        clamped = true;
        return clamp_index(i, extent);
    }
    return i;
}

struct ForwardStats {
    std::int64_t clamped_centers = 0;
};

// plain (untaped) bottom stack; shared by inference and visualization
template <typename T>
struct BottomOutputs {
    Tensor4<T> features;  // 16 x H x W
    Tensor4<T> bases;     // K x H/2 x W/2
};

template <typename T>
std::vector<T> bias_vec(const Tensor4<T>& b) {
    return std::vector<T>(b.data.begin(), b.data.end());
}

template <typename T>
BottomOutputs<T> bottom_forward(const ModelParams<T>& p, const Tensor4<T>& image) {
    auto h1 = relu(conv2d(image, p.conv1_w, bias_vec(p.conv1_b), 1, 1));
    auto h2 = relu(conv2d(h1, p.conv2_w, bias_vec(p.conv2_b), 1, 1));
    auto h3 = relu(conv2d(h2, p.conv3_w, bias_vec(p.conv3_b), 1, 1));
    auto bases = conv2d(h3, p.bases_w, bias_vec(p.bases_b), kBasesStride, 0);
    return {std::move(h3), std::move(bases)};
}

template <typename T>
std::vector<BoxProposal> scene_boxes(const Scene& scene) {
    std::vector<BoxProposal> boxes;
    boxes.reserve(scene.instances.size());
    for (const auto& inst : scene.instances) boxes.push_back(inst.box);
    return boxes;
}

// Inference-path intermediates, kept around for visualization.
template <typename T>
struct ForwardTrace {
    Tensor4<T> bases;        // K x H/2 x W/2
    Tensor4<T> regions;      // D x K x R x R (raw crops)
    Tensor4<T> scores;       // D x K x R x R (normalized)
    MaskLogits<T> logits;    // D x 1 x R x R
};

// Mask logits for every ground-truth instance of one scene (crop ->
// interpolate -> normalize -> blend path), without recording a tape.
template <typename T>
ForwardTrace<T> forward_trace(const ModelParams<T>& p, const Scene& scene,
                              const BlendConfig& cfg, ForwardStats* stats = nullptr) {
    cfg.validate();
    require(!scene.instances.empty(), "forward: scene has no instances");
    const Tensor4<T> image = cast_tensor<T>(scene.image);
    const auto bottom = bottom_forward(p, image);
    const auto boxes = scene_boxes<T>(scene);

    RoiRegion<T> regions = cfg.bottom_sampling == InterpMode::Bilinear
                               ? roi_align_bilinear(bottom.bases, boxes, cfg.R,
                                                    static_cast<double>(kBasesStride))
                               : roi_pool_nearest(bottom.bases, boxes, cfg.R,
                                                  static_cast<double>(kBasesStride));

    ForwardTrace<T> trace;
    trace.bases = bottom.bases;
    trace.regions = regions.data;

    const auto D = static_cast<std::int64_t>(boxes.size());
    ScoreMaps<T> scores{};
    if (cfg.merge_mode == MergeMode::Assembler) {
        scores.data = interpolate_attention(make_onehot_attentions<T>(D, cfg.M), cfg.R);
    } else {
        AttentionSet<T> att{Tensor4<T>(D, cfg.K, cfg.M, cfg.M), cfg.top_interp};
        const auto bias = bias_vec(p.top_b);
        for (std::int64_t d = 0; d < D; ++d) {
            bool clamped = false;
            const auto& box = boxes[static_cast<std::size_t>(d)];
            const std::int64_t fy = feature_location(box.center_y(), bottom.features.h, clamped);
            const std::int64_t fx = feature_location(box.center_x(), bottom.features.w, clamped);
            if (clamped && stats) ++stats->clamped_centers;
            const auto v = conv2d_at(bottom.features, p.top_w, bias, 1, 1, 0, fy, fx);
            std::copy(v.begin(), v.end(), att.data.data.begin() + d * cfg.K * cfg.M * cfg.M);
        }
        scores = normalize_scores(interpolate_attention(att, cfg.R), cfg.merge_mode);
    }

    trace.scores = scores.data;
    trace.logits = blend(regions, scores, cfg.merge_mode);
    return trace;
}

template <typename T>
MaskLogits<T> forward_instances(const ModelParams<T>& p, const Scene& scene,
                                const BlendConfig& cfg, ForwardStats* stats = nullptr) {
    return forward_trace(p, scene, cfg, stats).logits;
}

// spec-level loss entry point: mean over pixels and instances
template <typename T>
T loss_bce(const MaskLogits<T>& logits, const Tensor4<T>& target) {
    return logits.probability_space ? bce_on_probs(logits.data, target)
                                    : bce_with_logits(logits.data, target);
}

// ---------------------------------------------------------------------------
// training

struct TrainConfig {
    std::int64_t iterations = 2000;
    std::int64_t batch_size = 4;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    BlendConfig blend;

    void validate() const {
        require(iterations >= 1, "train config: iterations must be >= 1");
        require(batch_size >= 1, "train config: batch_size must be >= 1");
        require(learning_rate >= 0.0, "train config: learning rate must not be negative");
        require(momentum >= 0.0 && momentum < 1.0, "train config: momentum must be in [0,1)");
        blend.validate();
    }
};

struct CurvePoint {
    std::int64_t iter;
    double loss;
    double lr;
};

inline void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("curve: cannot open " + path);
    os << "iter,loss,lr\n";
    for (const auto& p : curve) os << p.iter << "," << p.loss << "," << p.lr << "\n";
}

// learning rate dropped 10x at 2/3 and 8/9 of the schedule
inline double lr_at(const TrainConfig& cfg, std::int64_t iter) {
    double lr = cfg.learning_rate;
    if (iter >= cfg.iterations * 2 / 3) lr *= 0.1;
    if (iter >= cfg.iterations * 8 / 9) lr *= 0.1;
    return lr;
}

namespace detail {

template <typename T>
struct TapedParams {
    std::vector<typename Tape<T>::ValueId> ids;  // order of named_tensors()
};

template <typename T>
TapedParams<T> params_to_tape(Tape<T>& tape, ModelParams<T>& p) {
    TapedParams<T> tp;
    for (auto& [name, tensor] : p.named_tensors()) tp.ids.push_back(tape.leaf(*tensor));
    return tp;
}

// taped forward for one scene; returns the scene loss node
template <typename T>
typename Tape<T>::ValueId taped_scene_loss(Tape<T>& tape, const TapedParams<T>& tp,
                                           ModelParams<T>& p, const Scene& scene,
                                           const BlendConfig& cfg, ForwardStats& stats) {
    namespace to = tape_ops;
    using Id = typename Tape<T>::ValueId;
    std::size_t slot = 0;
    const Id conv1_w = tp.ids[slot++], conv1_b = tp.ids[slot++];
    const Id conv2_w = tp.ids[slot++], conv2_b = tp.ids[slot++];
    const Id conv3_w = tp.ids[slot++], conv3_b = tp.ids[slot++];
    const Id bases_w = tp.ids[slot++], bases_b = tp.ids[slot++];
    Id top_w = 0, top_b = 0;
    if (p.has_top_head()) {
        top_w = tp.ids[slot++];
        top_b = tp.ids[slot++];
    }

    const Id image = tape.leaf(cast_tensor<T>(scene.image));
    const Id h1 = to::relu(tape, to::conv2d(tape, image, conv1_w, conv1_b, 1, 1));
    const Id h2 = to::relu(tape, to::conv2d(tape, h1, conv2_w, conv2_b, 1, 1));
    const Id h3 = to::relu(tape, to::conv2d(tape, h2, conv3_w, conv3_b, 1, 1));
    const Id bases = to::conv2d(tape, h3, bases_w, bases_b, kBasesStride, 0);

    const auto boxes = scene_boxes<T>(scene);
    const Id regions =
        cfg.bottom_sampling == InterpMode::Bilinear
            ? to::roi_align_bilinear(tape, bases, boxes, cfg.R, static_cast<double>(kBasesStride))
            : to::roi_pool_nearest(tape, bases, boxes, cfg.R, static_cast<double>(kBasesStride));

    const auto D = static_cast<std::int64_t>(boxes.size());
    Tensor4<T> target(D, 1, cfg.R, cfg.R);
    for (std::int64_t d = 0; d < D; ++d) {
        const auto& inst = scene.instances[static_cast<std::size_t>(d)];
        const auto gt = rasterize_gt<T>(inst.mask, inst.box, cfg.R);
        std::copy(gt.data.begin(), gt.data.end(), target.data.begin() + d * cfg.R * cfg.R);
    }

    if (cfg.merge_mode == MergeMode::Assembler) {
        const auto onehot = interpolate_attention(make_onehot_attentions<T>(D, cfg.M), cfg.R);
        const Id scores = tape.leaf(onehot);
        return to::bce_with_logits(tape, to::blend(tape, regions, scores), std::move(target));
    }

    std::vector<to::ReadLocation> locs;
    locs.reserve(static_cast<std::size_t>(D));
    const std::int64_t fh = tape.value(h3).h, fw = tape.value(h3).w;
    for (const auto& box : boxes) {
        bool clamped = false;
        const std::int64_t fy = feature_location(box.center_y(), fh, clamped);
        const std::int64_t fx = feature_location(box.center_x(), fw, clamped);
        if (clamped) ++stats.clamped_centers;
        locs.push_back({0, fy, fx});
    }
    const Id att_vec = to::conv2d_read_at(tape, h3, top_w, top_b, std::move(locs), 1, 1);
    const Id att = to::reshape_to_attention(tape, att_vec, cfg.K, cfg.M);
    const Id att_up = cfg.top_interp == InterpMode::Bilinear
                          ? to::bilinear_resize(tape, att, cfg.R, cfg.R)
                          : to::nearest_resize(tape, att, cfg.R, cfg.R);

    if (cfg.merge_mode == MergeMode::SingleBasisSigmoid) {
        const Id probs = to::elementwise_mul(tape, to::sigmoid(tape, att_up),
                                             to::sigmoid(tape, regions));
        return to::bce_on_probs(tape, probs, std::move(target));
    }
    const Id scores = to::softmax_channels(tape, att_up);
    return to::bce_with_logits(tape, to::blend(tape, regions, scores), std::move(target));
}

}  // namespace detail

struct TrainResult {
    std::vector<CurvePoint> curve;
    ForwardStats stats;
};

// SGD with momentum over the generated training split. Fully deterministic
// given (spec, cfg): batches, initialization and arithmetic order all derive
// from the seeds.
template <typename T>
TrainResult train(ModelParams<T>& params, const std::vector<Scene>& train_scenes,
                  const TrainConfig& cfg) {
    cfg.validate();
    require(!train_scenes.empty(), "train: empty training set");
    TrainResult result;
    Rng batch_rng(derive_seed(cfg.seed, 7));

    auto named = params.named_tensors();
    std::vector<Tensor4<T>> velocity;
    velocity.reserve(named.size());
    for (auto& [name, tensor] : named) velocity.push_back(zeros_like(*tensor));

    for (std::int64_t iter = 0; iter < cfg.iterations; ++iter) {
        const double lr = lr_at(cfg, iter);

        Tape<T> tape;
        auto tp = detail::params_to_tape(tape, params);
        std::vector<typename Tape<T>::ValueId> scene_losses;
        std::vector<T> weights;
        std::int64_t total_instances = 0;
        std::vector<std::size_t> batch;
        for (std::int64_t b = 0; b < cfg.batch_size; ++b)
            batch.push_back(static_cast<std::size_t>(batch_rng.below(train_scenes.size())));
        for (const auto si : batch)
            total_instances += static_cast<std::int64_t>(train_scenes[si].instances.size());
        for (const auto si : batch) {
            const Scene& scene = train_scenes[si];
            scene_losses.push_back(detail::taped_scene_loss(tape, tp, params, scene, cfg.blend,
                                                            result.stats));
            weights.push_back(static_cast<T>(scene.instances.size()) /
                              static_cast<T>(total_instances));
        }
        const auto loss_id = tape_ops::weighted_sum_scalars(tape, scene_losses, weights);
        const double loss = static_cast<double>(tape.value(loss_id).data[0]);
        if (!std::isfinite(loss))
            throw DivergenceError("training diverged at iteration " + std::to_string(iter));

        const auto grads = tape.backward(loss_id);
        for (std::size_t pi = 0; pi < named.size(); ++pi) {
            const Tensor4<T>& g = grads[tp.ids[pi]];
            Tensor4<T>& v = velocity[pi];
            Tensor4<T>& w = *named[pi].second;
            for (std::size_t e = 0; e < w.data.size(); ++e) {
                v.data[e] = static_cast<T>(cfg.momentum) * v.data[e] + g.data[e];
                w.data[e] -= static_cast<T>(lr) * v.data[e];
            }
        }
        result.curve.push_back({iter, loss, lr});
    }
    return result;
}

template <typename T>
std::pair<ModelParams<T>, TrainResult> train(const DatasetSpec& dspec, const TrainConfig& cfg) {
    const auto [train_scenes, val_scenes] = generate(dspec);
    (void)val_scenes;
    auto params = init_params<T>(cfg.blend, cfg.seed);
    auto result = train(params, train_scenes, cfg);
    return {std::move(params), std::move(result)};
}

// ---------------------------------------------------------------------------
// checkpoints: directory of BT4 tensors with a params.csv manifest

template <typename T>
void save_checkpoint(const std::string& dir, ModelParams<T>& params) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/params.csv");
    if (!manifest) throw std::runtime_error("checkpoint: cannot open " + dir + "/params.csv");
    manifest << "name,file,n,c,h,w\n";
    for (auto& [name, tensor] : params.named_tensors()) {
        const std::string file = name + ".bt4";
        write_bt4(dir + "/" + file, *tensor);
        manifest << name << "," << file << "," << tensor->n << "," << tensor->c << ","
                 << tensor->h << "," << tensor->w << "\n";
    }
}

template <typename T>
ModelParams<T> load_checkpoint(const std::string& dir, const BlendConfig& cfg) {
    ModelParams<T> params = init_params<T>(cfg, 0);
    for (auto& [name, tensor] : params.named_tensors()) {
        const std::string path = dir + "/" + name + ".bt4";
        Tensor4<T> loaded = read_bt4<T>(path);
        require(loaded.same_shape(*tensor), "checkpoint: shape mismatch for " + name +
                                                " (config does not match checkpoint)");
        *tensor = std::move(loaded);
    }
    return params;
}

}  // namespace blendcore
