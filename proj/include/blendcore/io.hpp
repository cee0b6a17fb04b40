#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "blendcore/tensor.hpp"

// File formats.
//
// BT4 tensor file: 8-byte magic "BLENDT4\0", four 64-bit little-endian
// unsigned dims (n, c, h, w), one precision byte (4 = float, 8 = double),
// then the raw little-endian scalars in row-major (n, c, h, w) order.

namespace blendcore {

inline constexpr std::array<char, 8> kBt4Magic = {'B', 'L', 'E', 'N', 'D', 'T', '4', '\0'};

namespace detail {

inline void put_u64_le(std::ostream& os, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(b, 8);
}

inline std::uint64_t get_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

template <typename T>
void put_scalar_le(std::ostream& os, T v) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    std::uint64_t bits = 0;
    std::memcpy(&bits, &v, sizeof(T));
    char b[8];
    for (unsigned i = 0; i < sizeof(T); ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    os.write(b, sizeof(T));
}

template <typename T>
T get_scalar_le(std::istream& is) {
    static_assert(sizeof(T) == 4 || sizeof(T) == 8);
    unsigned char b[8] = {};
    is.read(reinterpret_cast<char*>(b), sizeof(T));
    std::uint64_t bits = 0;
    for (unsigned i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    T v;
    std::memcpy(&v, &bits, sizeof(T));
    return v;
}

}  // namespace detail

template <typename T>
void write_bt4(std::ostream& os, const Tensor4<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "BT4 stores float or double tensors");
    os.write(kBt4Magic.data(), 8);
    detail::put_u64_le(os, static_cast<std::uint64_t>(t.n));
    detail::put_u64_le(os, static_cast<std::uint64_t>(t.c));
    detail::put_u64_le(os, static_cast<std::uint64_t>(t.h));
    detail::put_u64_le(os, static_cast<std::uint64_t>(t.w));
    const char flag = static_cast<char>(sizeof(T));
    os.write(&flag, 1);
    for (const T& v : t.data) detail::put_scalar_le(os, v);
}

template <typename T>
void write_bt4(const std::string& path, const Tensor4<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_bt4: cannot open " + path);
    write_bt4(os, t);
    if (!os) throw std::runtime_error("write_bt4: write failed for " + path);
}

// Reads a BT4 file. The stored precision may differ from T; scalars are
// converted on load.
template <typename T>
Tensor4<T> read_bt4(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kBt4Magic.data(), 8) != 0)
        throw std::runtime_error("read_bt4: bad magic");
    const auto n = static_cast<std::int64_t>(detail::get_u64_le(is));
    const auto c = static_cast<std::int64_t>(detail::get_u64_le(is));
    const auto h = static_cast<std::int64_t>(detail::get_u64_le(is));
    const auto w = static_cast<std::int64_t>(detail::get_u64_le(is));
    char flag = 0;
    is.read(&flag, 1);
    if (!is || (flag != 4 && flag != 8)) throw std::runtime_error("read_bt4: bad precision flag");
    Tensor4<T> t(n, c, h, w);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const double v = flag == 4 ? static_cast<double>(detail::get_scalar_le<float>(is))
                                   : detail::get_scalar_le<double>(is);
        t.data[static_cast<std::size_t>(i)] = static_cast<T>(v);
    }
    if (!is) throw std::runtime_error("read_bt4: truncated payload");
    return t;
}

template <typename T>
Tensor4<T> read_bt4(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_bt4: cannot open " + path);
    return read_bt4<T>(is);
}

// ---------------------------------------------------------------------------
// CSV

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

// ---------------------------------------------------------------------------
// PGM (binary P5, maxval 255)

template <typename T>
void write_pgm(const std::string& path, const Tensor4<T>& gray, std::int64_t n = 0,
               std::int64_t c = 0) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_pgm: cannot open " + path);
    os << "P5\n" << gray.w << " " << gray.h << "\n255\n";
    const T* p = gray.plane(n, c);
    for (std::int64_t i = 0; i < gray.h * gray.w; ++i) {
        double v = static_cast<double>(p[i]);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        os.put(static_cast<char>(static_cast<int>(v * 255.0 + 0.5)));
    }
}

// Normalizes one channel plane to [0, 1] before writing; constant planes map
// to mid-gray.
template <typename T>
void write_pgm_normalized(const std::string& path, const Tensor4<T>& t, std::int64_t n,
                          std::int64_t c) {
    const T* p = t.plane(n, c);
    T lo = p[0], hi = p[0];
    for (std::int64_t i = 0; i < t.h * t.w; ++i) {
        lo = std::min(lo, p[i]);
        hi = std::max(hi, p[i]);
    }
    Tensor4<T> norm(1, 1, t.h, t.w);
    const T span = hi - lo;
    for (std::int64_t i = 0; i < t.h * t.w; ++i)
        norm.data[static_cast<std::size_t>(i)] =
            span > T(0) ? (p[i] - lo) / span : static_cast<T>(0.5);
    write_pgm(path, norm);
}

// ---------------------------------------------------------------------------
// SVG line chart (one polyline per series, log-log)

struct SvgSeries {
    std::string label;
    std::vector<double> x, y;
};

inline void write_svg_loglog(const std::string& path, const std::vector<SvgSeries>& series,
                             const std::string& title) {
    const double W = 640, H = 420, m = 60;
    double lx0 = 1e300, lx1 = -1e300, ly0 = 1e300, ly1 = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            lx0 = std::min(lx0, std::log10(s.x[i]));
            lx1 = std::max(lx1, std::log10(s.x[i]));
            ly0 = std::min(ly0, std::log10(s.y[i]));
            ly1 = std::max(ly1, std::log10(s.y[i]));
        }
    if (lx1 <= lx0) lx1 = lx0 + 1;
    if (ly1 <= ly0) ly1 = ly0 + 1;
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_svg_loglog: cannot open " + path);
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
    os << "<rect width='100%' height='100%' fill='white'/>\n";
    os << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='15'>" << title
       << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        os << "<polyline fill='none' stroke='" << colors[si % 4] << "' stroke-width='2' points='";
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            const double px = m + (std::log10(s.x[i]) - lx0) / (lx1 - lx0) * (W - 2 * m);
            const double py = H - m - (std::log10(s.y[i]) - ly0) / (ly1 - ly0) * (H - 2 * m);
            os << px << "," << py << " ";
        }
        os << "'/>\n";
        os << "<text x='" << W - m + 4 << "' y='" << 40 + 18 * si << "' font-size='12' fill='"
           << colors[si % 4] << "'>" << s.label << "</text>\n";
    }
    os << "<text x='" << W / 2 << "' y='" << H - 12
       << "' text-anchor='middle' font-size='12'>instances D (log)</text>\n";
    os << "<text x='16' y='" << H / 2
       << "' font-size='12' transform='rotate(-90 16 " << H / 2
       << ")' text-anchor='middle'>median time us (log)</text>\n";
    os << "</svg>\n";
}

}  // namespace blendcore
