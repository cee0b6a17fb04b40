#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "blendcore/io.hpp"
#include "blendcore/rng.hpp"
#include "blendcore/roi.hpp"
#include "blendcore/tensor.hpp"

// Synthetic instance-segmentation scenes: 1-6 overlapping shapes (rectangle,
// disc, ring) on a grayscale canvas with Gaussian pixel noise. Shapes are
// drawn back-to-front; the stored per-instance ground-truth mask is the
// VISIBLE part after occlusion, which is what the mask head must learn to
// separate overlapping instances. The pre-occlusion shape raster is kept
// alongside for overlap bookkeeping (the overlap criterion and the
// position-sensitivity analysis are defined on shape intersections, which the
// visible masks by construction never have).
//
// Generation is pure per (spec, split, index): scenes can be produced in any
// order, and identical specs give bit-identical datasets.

namespace blendcore {

enum class ShapeClass { Rectangle, Disc, Ring };

inline std::string to_string(ShapeClass s) {
    switch (s) {
        case ShapeClass::Rectangle: return "rect";
        case ShapeClass::Disc: return "disc";
        case ShapeClass::Ring: return "ring";
    }
    return "?";
}

struct SceneInstance {
    BoxProposal box;                    // tight box of the full shape
    Tensor4<std::uint8_t> mask;         // visible (post-occlusion) ground truth
    Tensor4<std::uint8_t> shape_mask;   // full shape before occlusion
    ShapeClass shape = ShapeClass::Disc;
    double intensity = 1.0;
};

struct Scene {
    Tensor4<float> image;  // 1 x 1 x H x W in [0, 1]
    std::vector<SceneInstance> instances;
    std::uint64_t scene_id = 0;
};

struct DatasetSpec {
    std::uint64_t seed = 0;
    std::int64_t n_train = 200;
    std::int64_t n_val = 50;
    double overlap_fraction = 0.5;
    std::int64_t image_size = 64;

    void validate() const {
        require(n_train >= 1 && n_val >= 1, "dataset: n_train and n_val must be >= 1");
        require(overlap_fraction >= 0.0 && overlap_fraction <= 1.0,
                "dataset: overlap_fraction must be in [0,1]");
        require(image_size >= 16, "dataset: image_size must be >= 16");
    }
};

inline std::int64_t mask_area(const Tensor4<std::uint8_t>& m) {
    std::int64_t a = 0;
    for (auto v : m.data) a += v != 0;
    return a;
}

inline std::int64_t mask_intersection(const Tensor4<std::uint8_t>& a,
                                      const Tensor4<std::uint8_t>& b) {
    std::int64_t n = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) n += (a.data[i] != 0 && b.data[i] != 0);
    return n;
}

// |A n B| / min(|A|, |B|)
inline double overlap_ratio(const Tensor4<std::uint8_t>& a, const Tensor4<std::uint8_t>& b) {
    const std::int64_t inter = mask_intersection(a, b);
    const std::int64_t mn = std::min(mask_area(a), mask_area(b));
    return mn > 0 ? static_cast<double>(inter) / static_cast<double>(mn) : 0.0;
}

// Largest pairwise shape overlap in a scene; (-1, -1, 0) when < 2 instances.
struct OverlapPair {
    std::int64_t a = -1, b = -1;
    double ratio = 0.0;
};

inline OverlapPair scene_max_overlap(const Scene& scene) {
    OverlapPair best;
    const auto n = static_cast<std::int64_t>(scene.instances.size());
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = i + 1; j < n; ++j) {
            const double r = overlap_ratio(scene.instances[static_cast<std::size_t>(i)].shape_mask,
                                           scene.instances[static_cast<std::size_t>(j)].shape_mask);
            if (r > best.ratio) best = {i, j, r};
        }
    return best;
}

// mask-intersection counter for the generator's overlap contract
inline bool scene_meets_overlap_criterion(const Scene& scene) {
    return scene_max_overlap(scene).ratio >= 0.10;
}

namespace detail {

struct ShapeParams {
    ShapeClass cls;
    double cx, cy, rx, ry, inner;  // inner only for rings (fraction of rx)
};

inline bool point_in_shape(const ShapeParams& s, double x, double y) {
    const double dx = x - s.cx, dy = y - s.cy;
    switch (s.cls) {
        case ShapeClass::Rectangle:
            return std::abs(dx) <= s.rx && std::abs(dy) <= s.ry;
        case ShapeClass::Disc:
            return dx * dx / (s.rx * s.rx) + dy * dy / (s.ry * s.ry) <= 1.0;
        case ShapeClass::Ring: {
            const double q = dx * dx / (s.rx * s.rx) + dy * dy / (s.ry * s.ry);
            return q <= 1.0 && q >= s.inner * s.inner;
        }
    }
    return false;
}

inline Tensor4<std::uint8_t> rasterize_shape(const ShapeParams& s, std::int64_t size) {
    Tensor4<std::uint8_t> m(1, 1, size, size);
    for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x)
            if (point_in_shape(s, static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5))
                m.at(0, 0, y, x) = 1;
    return m;
}

inline ShapeParams random_shape(Rng& rng, std::int64_t size) {
    ShapeParams s{};
    const int pick = static_cast<int>(rng.below(3));
    s.cls = pick == 0 ? ShapeClass::Rectangle : (pick == 1 ? ShapeClass::Disc : ShapeClass::Ring);
    s.rx = rng.uniform(6.0, 13.0);
    s.ry = s.cls == ShapeClass::Rectangle ? rng.uniform(6.0, 13.0)
                                          : s.rx * rng.uniform(0.8, 1.25);
    if (s.ry > 13.5) s.ry = 13.5;
    s.inner = s.cls == ShapeClass::Ring ? rng.uniform(0.45, 0.62) : 0.0;
    const double mx = std::max(s.rx, s.ry) + 1.0;
    s.cx = rng.uniform(mx, static_cast<double>(size) - mx);
    s.cy = rng.uniform(mx, static_cast<double>(size) - mx);
    return s;
}

inline BoxProposal tight_box(const Tensor4<std::uint8_t>& mask) {
    std::int64_t x0 = mask.w, x1 = -1, y0 = mask.h, y1 = -1;
    for (std::int64_t y = 0; y < mask.h; ++y)
        for (std::int64_t x = 0; x < mask.w; ++x)
            if (mask.at(0, 0, y, x)) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1),
            static_cast<double>(y1 + 1)};
}

// Deterministic fallback for the overlapping pair: two discs whose distance is
// bisected until the overlap ratio lands in the target band.
inline ShapeParams overlap_disc_fallback(Rng& rng, const ShapeParams& anchor, std::int64_t size) {
    ShapeParams s{};
    s.cls = ShapeClass::Disc;
    s.rx = s.ry = rng.uniform(7.0, 11.0);
    const double angle = rng.uniform(0.0, 6.283185307179586);
    double lo = 0.3 * (anchor.rx + s.rx), hi = 1.05 * (anchor.rx + s.rx);
    ShapeParams best = s;
    for (int it = 0; it < 40; ++it) {
        const double dist = 0.5 * (lo + hi);
        s.cx = anchor.cx + dist * std::cos(angle);
        s.cy = anchor.cy + dist * std::sin(angle);
        s.cx = std::clamp(s.cx, s.rx + 1.0, static_cast<double>(size) - s.rx - 1.0);
        s.cy = std::clamp(s.cy, s.ry + 1.0, static_cast<double>(size) - s.ry - 1.0);
        best = s;
        const double r = overlap_ratio(rasterize_shape(anchor, size), rasterize_shape(s, size));
        if (r > 0.45) lo = dist;
        else if (r < 0.22) hi = dist;
        else break;
    }
    return best;
}

}  // namespace detail

// Index-based assignment spreads overlap scenes evenly through a split and
// hits the requested fraction exactly (floor accumulation).
inline bool is_overlap_scene(std::int64_t index, double fraction) {
    const auto lo = static_cast<std::int64_t>(std::floor(static_cast<double>(index) * fraction));
    const auto hi =
        static_cast<std::int64_t>(std::floor(static_cast<double>(index + 1) * fraction));
    return hi > lo;
}

inline Scene generate_scene(const DatasetSpec& spec, int split, std::int64_t index) {
    spec.validate();
    const std::int64_t size = spec.image_size;
    Rng rng(derive_seed(spec.seed, 1000 + static_cast<std::uint64_t>(split),
                        static_cast<std::uint64_t>(index)));
    const bool want_overlap = is_overlap_scene(index, spec.overlap_fraction);

    const std::int64_t want_n = want_overlap ? rng.range(2, 6) : rng.range(1, 6);
    std::vector<detail::ShapeParams> shapes;
    std::vector<Tensor4<std::uint8_t>> rasters;

    for (std::int64_t i = 0; i < want_n; ++i) {
        const bool is_pair_partner = want_overlap && i == 1;
        bool placed = false;
        for (int attempt = 0; attempt < (is_pair_partner ? 300 : 60) && !placed; ++attempt) {
            auto s = detail::random_shape(rng, size);
            auto m = detail::rasterize_shape(s, size);
            if (mask_area(m) < 40) continue;
            bool ok = true;
            for (std::size_t j = 0; j < rasters.size(); ++j) {
                const double r = overlap_ratio(m, rasters[j]);
                if (is_pair_partner && j == 0) {
                    if (r < 0.22 || r > 0.45) ok = false;
                } else if (r > 0.0) {
                    ok = false;  // only the designated pair may intersect
                }
            }
            if (!ok) continue;
            shapes.push_back(s);
            rasters.push_back(std::move(m));
            placed = true;
        }
        if (!placed && is_pair_partner) {
            auto s = detail::overlap_disc_fallback(rng, shapes[0], size);
            rasters.push_back(detail::rasterize_shape(s, size));
            shapes.push_back(s);
            placed = true;
        }
        // crowded canvas: settle for fewer instances
        if (!placed) break;
    }

    Scene scene;
    scene.scene_id = static_cast<std::uint64_t>(index);
    const auto n = static_cast<std::int64_t>(shapes.size());

    // Intensities pairwise separated so instances stay tellable; the
    // overlapping pair gets a wide gap, which is the cue the mask head needs
    // to resolve occlusion in the shared region.
    std::vector<double> intensity(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double v = 0;
        for (int attempt = 0; attempt < 400; ++attempt) {
            v = rng.uniform(0.35, 1.0);
            bool ok = true;
            for (std::int64_t j = 0; j < i; ++j) {
                const double gap = (want_overlap && i == 1 && j == 0) ? 0.30 : 0.12;
                if (std::abs(v - intensity[static_cast<std::size_t>(j)]) < gap) ok = false;
            }
            if (ok) break;
        }
        intensity[static_cast<std::size_t>(i)] = v;
    }

    // later instances are drawn on top; visible mask = shape minus later shapes
    for (std::int64_t i = 0; i < n; ++i) {
        SceneInstance inst;
        inst.shape = shapes[static_cast<std::size_t>(i)].cls;
        inst.intensity = intensity[static_cast<std::size_t>(i)];
        inst.shape_mask = rasters[static_cast<std::size_t>(i)];
        inst.mask = inst.shape_mask;
        for (std::int64_t j = i + 1; j < n; ++j)
            for (std::size_t p = 0; p < inst.mask.data.size(); ++p)
                if (rasters[static_cast<std::size_t>(j)].data[p]) inst.mask.data[p] = 0;
        inst.box = detail::tight_box(inst.shape_mask);
        scene.instances.push_back(std::move(inst));
    }

    scene.image = Tensor4<float>(1, 1, size, size);
    for (std::int64_t y = 0; y < size; ++y) {
        for (std::int64_t x = 0; x < size; ++x) {
            double v = 0.0;
            for (std::int64_t i = n - 1; i >= 0; --i) {
                if (scene.instances[static_cast<std::size_t>(i)].shape_mask.at(0, 0, y, x)) {
                    v = intensity[static_cast<std::size_t>(i)];
                    break;
                }
            }
            v += 0.05 * rng.gaussian();
            scene.image.at(0, 0, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return scene;
}

inline std::pair<std::vector<Scene>, std::vector<Scene>> generate(const DatasetSpec& spec) {
    spec.validate();
    std::vector<Scene> train, val;
    train.reserve(static_cast<std::size_t>(spec.n_train));
    val.reserve(static_cast<std::size_t>(spec.n_val));
    for (std::int64_t i = 0; i < spec.n_train; ++i) train.push_back(generate_scene(spec, 0, i));
    for (std::int64_t i = 0; i < spec.n_val; ++i) val.push_back(generate_scene(spec, 1, i));
    return {std::move(train), std::move(val)};
}

// Training target: the binary mask restricted to the box, bilinearly resampled
// onto the R x R grid and re-thresholded at 0.5. Pixels outside the image read
// zero.
template <typename T>
Tensor4<T> rasterize_gt(const Tensor4<std::uint8_t>& mask, const BoxProposal& box,
                        std::int64_t R) {
    require_valid_box(box);
    require(box.x2 > 0 && box.y2 > 0 && box.x1 < static_cast<double>(mask.w) &&
                box.y1 < static_cast<double>(mask.h),
            "rasterize_gt: box does not intersect the image");
    Tensor4<T> out(1, 1, R, R);
    for (std::int64_t i = 0; i < R; ++i) {
        const double y = box.y1 + (static_cast<double>(i) + 0.5) * box.height() / static_cast<double>(R);
        const double v = y - 0.5;
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(v));
        const double ty = v - static_cast<double>(y0);
        for (std::int64_t j = 0; j < R; ++j) {
            const double x = box.x1 + (static_cast<double>(j) + 0.5) * box.width() / static_cast<double>(R);
            const double u = x - 0.5;
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(u));
            const double tx = u - static_cast<double>(x0);
            const auto cell = [&](std::int64_t yy, std::int64_t xx) -> double {
                if (yy < 0 || yy >= mask.h || xx < 0 || xx >= mask.w) return 0.0;
                return mask.at(0, 0, yy, xx) ? 1.0 : 0.0;
            };
            const double s = (cell(y0, x0) * (1 - tx) + cell(y0, x0 + 1) * tx) * (1 - ty) +
                             (cell(y0 + 1, x0) * (1 - tx) + cell(y0 + 1, x0 + 1) * tx) * ty;
            out.at(0, 0, i, j) = s >= 0.5 ? T(1) : T(0);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// dataset export: one directory per split, BT4 tensors + boxes CSV + manifest

inline void export_split(const std::string& dir, const std::vector<Scene>& scenes) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.csv");
    if (!manifest) throw std::runtime_error("export: cannot open " + dir + "/manifest.csv");
    manifest << "scene_id,n_instances,classes\n";
    for (const auto& scene : scenes) {
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%05llu",
                      static_cast<unsigned long long>(scene.scene_id));
        const std::string sdir = dir + "/" + name;
        fs::create_directories(sdir);
        write_bt4(sdir + "/image.bt4", scene.image);
        std::vector<BoxProposal> boxes;
        std::string classes;
        for (std::size_t i = 0; i < scene.instances.size(); ++i) {
            const auto& inst = scene.instances[i];
            char mname[32];
            std::snprintf(mname, sizeof(mname), "mask_%02zu.bt4", i);
            write_bt4(sdir + "/" + mname, cast_tensor<float>(inst.mask));
            boxes.push_back(inst.box);
            if (i) classes += "|";
            classes += to_string(inst.shape);
        }
        write_boxes_csv(sdir + "/boxes.csv", boxes);
        manifest << scene.scene_id << "," << scene.instances.size() << "," << classes << "\n";
    }
}

inline void export_dataset(const std::string& dir, const DatasetSpec& spec) {
    const auto [train, val] = generate(spec);
    export_split(dir + "/train", train);
    export_split(dir + "/val", val);
}

}  // namespace blendcore
