#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "blendcore/blender.hpp"
#include "blendcore/synthdata.hpp"
#include "blendcore/trainer.hpp"

// Mask quality: per-instance IoU of pasted predictions against ground truth.
// Boxes are ground truth, so matching is the identity and the numbers isolate
// mask quality.

namespace blendcore {

inline double mask_iou(const Tensor4<std::uint8_t>& pred, const Tensor4<std::uint8_t>& gt) {
    require(pred.h == gt.h && pred.w == gt.w, "mask_iou: dimension mismatch");
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        const bool a = pred.data[i] != 0, b = gt.data[i] != 0;
        inter += a && b;
        uni += a || b;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct EvalReport {
    std::vector<double> per_instance_iou;
    double mean_iou = 0;
    double frac50 = 0;
    double frac75 = 0;
    std::string config_label;

    std::int64_t n_instances() const {
        return static_cast<std::int64_t>(per_instance_iou.size());
    }
};

template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const std::vector<Scene>& val,
                    const BlendConfig& cfg, double threshold = 0.5) {
    EvalReport report;
    report.config_label = cfg.label();
    for (const auto& scene : val) {
        if (scene.instances.empty()) continue;
        const auto logits = forward_instances(params, scene, cfg);
        for (std::size_t d = 0; d < scene.instances.size(); ++d) {
            const auto& inst = scene.instances[d];
            const auto pred = paste_mask(logits, inst.box, scene.image.h, scene.image.w,
                                         threshold, static_cast<std::int64_t>(d));
            report.per_instance_iou.push_back(mask_iou(pred, inst.mask));
        }
    }
    double sum = 0;
    std::int64_t over50 = 0, over75 = 0;
    for (const double iou : report.per_instance_iou) {
        sum += iou;
        over50 += iou >= 0.5;
        over75 += iou >= 0.75;
    }
    const auto n = report.n_instances();
    report.mean_iou = n ? sum / static_cast<double>(n) : 0.0;
    report.frac50 = n ? static_cast<double>(over50) / static_cast<double>(n) : 0.0;
    report.frac75 = n ? static_cast<double>(over75) / static_cast<double>(n) : 0.0;
    return report;
}

inline void write_report_csv(const std::string& path, const std::vector<EvalReport>& reports) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("report: cannot open " + path);
    os << "config,mean_iou,frac50,frac75,n_instances\n";
    for (const auto& r : reports)
        os << r.config_label << "," << r.mean_iou << "," << r.frac50 << "," << r.frac75 << ","
           << r.n_instances() << "\n";
}

inline void write_per_instance_csv(const std::string& path, const EvalReport& report) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("report: cannot open " + path);
    os << "instance,iou\n";
    for (std::size_t i = 0; i < report.per_instance_iou.size(); ++i)
        os << i << "," << report.per_instance_iou[i] << "\n";
}

// Position-sensitivity probe: on a scene with an overlapping pair, how many
// pixels of the shape-intersection region receive different predictions for
// the two instances. A mask head that separates instances disagrees on most
// of the region (the occluder claims it, the occluded instance does not).
struct DisagreementStats {
    std::int64_t disagree = 0;
    std::int64_t overlap_pixels = 0;

    double fraction() const {
        return overlap_pixels > 0
                   ? static_cast<double>(disagree) / static_cast<double>(overlap_pixels)
                   : 0.0;
    }

    void accumulate(const DisagreementStats& o) {
        disagree += o.disagree;
        overlap_pixels += o.overlap_pixels;
    }
};

template <typename T>
DisagreementStats overlap_disagreement(const ModelParams<T>& params, const Scene& scene,
                                       const BlendConfig& cfg, double threshold = 0.5) {
    DisagreementStats stats;
    const auto pair = scene_max_overlap(scene);
    if (pair.a < 0 || pair.ratio < 0.10) return stats;
    const auto logits = forward_instances(params, scene, cfg);
    const auto& ia = scene.instances[static_cast<std::size_t>(pair.a)];
    const auto& ib = scene.instances[static_cast<std::size_t>(pair.b)];
    const auto ma = paste_mask(logits, ia.box, scene.image.h, scene.image.w, threshold, pair.a);
    const auto mb = paste_mask(logits, ib.box, scene.image.h, scene.image.w, threshold, pair.b);
    for (std::size_t i = 0; i < ma.data.size(); ++i) {
        if (!(ia.shape_mask.data[i] && ib.shape_mask.data[i])) continue;
        ++stats.overlap_pixels;
        stats.disagree += (ma.data[i] != 0) != (mb.data[i] != 0);
    }
    return stats;
}

}  // namespace blendcore
