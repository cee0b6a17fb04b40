#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "blendcore/io.hpp"
#include "blendcore/ops.hpp"
#include "blendcore/tensor.hpp"

// Crop-and-resample of base maps under a box proposal, sampling ratio 1 (one
// sample at each bin center). Boxes live in image coordinates and are divided
// by the base stride internally. Samples outside the base map read zero; boxes
// are never clipped.
//
// Bin (i, j) of an R x R grid samples the base map at
//     x = x1/s + (j + 0.5) * (box_w/s) / R      (cell units, center of cell
//     y = y1/s + (i + 0.5) * (box_h/s) / R       c is at x = c + 0.5)

namespace blendcore {

struct BoxProposal {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }
    double center_x() const { return 0.5 * (x1 + x2); }
    double center_y() const { return 0.5 * (y1 + y2); }
};

inline void require_valid_box(const BoxProposal& b) {
    require(std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) &&
                std::isfinite(b.y2),
            "box: coordinates must be finite");
    require(b.width() > 1e-6 && b.height() > 1e-6, "box: degenerate extent");
}

template <typename T>
struct RoiRegion {
    Tensor4<T> data;        // D x K x R x R
    double source_stride = 1;
};

namespace detail {

// zero outside the map
template <typename T>
inline T cell_or_zero(const T* plane, std::int64_t h, std::int64_t w, std::int64_t y,
                      std::int64_t x) {
    if (y < 0 || y >= h || x < 0 || x >= w) return T(0);
    return plane[y * w + x];
}

struct BinPoint {
    double u, v;  // sample point in source index coordinates (cell center == integer)
};

inline BinPoint roi_bin_point(const BoxProposal& box, double stride, std::int64_t R,
                              std::int64_t i, std::int64_t j) {
    const double bw = box.width() / stride;
    const double bh = box.height() / stride;
    const double x = box.x1 / stride + (static_cast<double>(j) + 0.5) * bw / static_cast<double>(R);
    const double y = box.y1 / stride + (static_cast<double>(i) + 0.5) * bh / static_cast<double>(R);
    return {x - 0.5, y - 0.5};
}

}  // namespace detail

template <typename T>
RoiRegion<T> roi_align_bilinear(const Tensor4<T>& bases, const std::vector<BoxProposal>& boxes,
                                std::int64_t R, double stride) {
    require(R >= 1, "roi_align_bilinear: R must be >= 1");
    require(bases.n == 1, "roi_align_bilinear: bases must have n == 1");
    for (const auto& b : boxes) require_valid_box(b);
    const auto D = static_cast<std::int64_t>(boxes.size());
    RoiRegion<T> out{Tensor4<T>(D, bases.c, R, R), stride};
    for (std::int64_t d = 0; d < D; ++d) {
        for (std::int64_t k = 0; k < bases.c; ++k) {
            const T* bp = bases.plane(0, k);
            T* op = out.data.plane(d, k);
            for (std::int64_t i = 0; i < R; ++i) {
                for (std::int64_t j = 0; j < R; ++j) {
                    const auto pt = detail::roi_bin_point(boxes[static_cast<std::size_t>(d)],
                                                          stride, R, i, j);
                    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(pt.u));
                    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(pt.v));
                    const T tx = static_cast<T>(pt.u - static_cast<double>(x0));
                    const T ty = static_cast<T>(pt.v - static_cast<double>(y0));
                    const T v00 = detail::cell_or_zero(bp, bases.h, bases.w, y0, x0);
                    const T v01 = detail::cell_or_zero(bp, bases.h, bases.w, y0, x0 + 1);
                    const T v10 = detail::cell_or_zero(bp, bases.h, bases.w, y0 + 1, x0);
                    const T v11 = detail::cell_or_zero(bp, bases.h, bases.w, y0 + 1, x0 + 1);
                    op[i * R + j] = (v00 * (T(1) - tx) + v01 * tx) * (T(1) - ty) +
                                    (v10 * (T(1) - tx) + v11 * tx) * ty;
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> roi_align_bilinear_backward(const Tensor4<T>& g, const std::vector<BoxProposal>& boxes,
                                       std::int64_t base_h, std::int64_t base_w, double stride) {
    Tensor4<T> gb(1, g.c, base_h, base_w);
    const std::int64_t R = g.h;
    for (std::int64_t d = 0; d < g.n; ++d) {
        for (std::int64_t k = 0; k < g.c; ++k) {
            const T* gp = g.plane(d, k);
            T* bp = gb.plane(0, k);
            for (std::int64_t i = 0; i < R; ++i) {
                for (std::int64_t j = 0; j < R; ++j) {
                    const auto pt = detail::roi_bin_point(boxes[static_cast<std::size_t>(d)],
                                                          stride, R, i, j);
                    const std::int64_t x0 = static_cast<std::int64_t>(std::floor(pt.u));
                    const std::int64_t y0 = static_cast<std::int64_t>(std::floor(pt.v));
                    const T tx = static_cast<T>(pt.u - static_cast<double>(x0));
                    const T ty = static_cast<T>(pt.v - static_cast<double>(y0));
                    const T gv = gp[i * R + j];
                    const auto scatter = [&](std::int64_t y, std::int64_t x, T wgt) {
                        if (y < 0 || y >= base_h || x < 0 || x >= base_w) return;
                        bp[y * base_w + x] += gv * wgt;
                    };
                    scatter(y0, x0, (T(1) - tx) * (T(1) - ty));
                    scatter(y0, x0 + 1, tx * (T(1) - ty));
                    scatter(y0 + 1, x0, (T(1) - tx) * ty);
                    scatter(y0 + 1, x0 + 1, tx * ty);
                }
            }
        }
    }
    return gb;
}

template <typename T>
RoiRegion<T> roi_pool_nearest(const Tensor4<T>& bases, const std::vector<BoxProposal>& boxes,
                              std::int64_t R, double stride) {
    require(R >= 1, "roi_pool_nearest: R must be >= 1");
    require(bases.n == 1, "roi_pool_nearest: bases must have n == 1");
    for (const auto& b : boxes) require_valid_box(b);
    const auto D = static_cast<std::int64_t>(boxes.size());
    RoiRegion<T> out{Tensor4<T>(D, bases.c, R, R), stride};
    for (std::int64_t d = 0; d < D; ++d) {
        for (std::int64_t k = 0; k < bases.c; ++k) {
            const T* bp = bases.plane(0, k);
            T* op = out.data.plane(d, k);
            for (std::int64_t i = 0; i < R; ++i) {
                for (std::int64_t j = 0; j < R; ++j) {
                    const auto pt = detail::roi_bin_point(boxes[static_cast<std::size_t>(d)],
                                                          stride, R, i, j);
                    op[i * R + j] = detail::cell_or_zero(bp, bases.h, bases.w,
                                                         nearest_index(pt.v), nearest_index(pt.u));
                }
            }
        }
    }
    return out;
}

template <typename T>
Tensor4<T> roi_pool_nearest_backward(const Tensor4<T>& g, const std::vector<BoxProposal>& boxes,
                                     std::int64_t base_h, std::int64_t base_w, double stride) {
    Tensor4<T> gb(1, g.c, base_h, base_w);
    const std::int64_t R = g.h;
    for (std::int64_t d = 0; d < g.n; ++d) {
        for (std::int64_t k = 0; k < g.c; ++k) {
            const T* gp = g.plane(d, k);
            T* bp = gb.plane(0, k);
            for (std::int64_t i = 0; i < R; ++i) {
                for (std::int64_t j = 0; j < R; ++j) {
                    const auto pt = detail::roi_bin_point(boxes[static_cast<std::size_t>(d)],
                                                          stride, R, i, j);
                    const std::int64_t y = nearest_index(pt.v);
                    const std::int64_t x = nearest_index(pt.u);
                    if (y < 0 || y >= base_h || x < 0 || x >= base_w) continue;
                    bp[y * base_w + x] += gp[i * R + j];
                }
            }
        }
    }
    return gb;
}

// ---------------------------------------------------------------------------
// boxes CSV, header "instance_id,x1,y1,x2,y2"

inline std::vector<BoxProposal> read_boxes_csv(std::istream& is) {
    std::vector<BoxProposal> boxes;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("instance_id", 0) == 0) continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != 5)
            throw std::runtime_error("boxes csv: expected 5 fields, got line '" + line + "'");
        BoxProposal b{std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3]),
                      std::stod(fields[4])};
        require_valid_box(b);
        boxes.push_back(b);
    }
    return boxes;
}

inline std::vector<BoxProposal> read_boxes_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("boxes csv: cannot open " + path);
    return read_boxes_csv(is);
}

inline void write_boxes_csv(const std::string& path, const std::vector<BoxProposal>& boxes) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("boxes csv: cannot open " + path);
    os << "instance_id,x1,y1,x2,y2\n";
    for (std::size_t i = 0; i < boxes.size(); ++i)
        os << i << "," << boxes[i].x1 << "," << boxes[i].y1 << "," << boxes[i].x2 << ","
           << boxes[i].y2 << "\n";
}

}  // namespace blendcore
