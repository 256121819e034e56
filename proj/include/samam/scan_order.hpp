#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "samam/ops.hpp"

namespace samam {

enum class ScanMode { zigzag, cross };

inline std::string to_string(ScanMode m) { return m == ScanMode::zigzag ? "zigzag" : "cross"; }

inline ScanMode parse_scan_mode(std::string_view s) {
    if (s == "zigzag") return ScanMode::zigzag;
    if (s == "cross") return ScanMode::cross;
    fail("unknown scan mode '", s, "' (expected zigzag or cross)");
}

/// Bijection between sequence positions and flat grid indices r*W + c.
struct ScanPath {
    ScanMode mode = ScanMode::zigzag;
    std::size_t path_index = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::size_t> perm;  // t -> grid index
    std::vector<std::size_t> inv;   // grid index -> t

    std::size_t length() const { return perm.size(); }
};

namespace detail {

inline void check_path_args(std::size_t h, std::size_t w, std::size_t path_index) {
    if (h == 0 || w == 0) fail("scan path needs positive dimensions, got ", h, "x", w);
    if (path_index > 3) fail("scan path index must be in 0..3, got ", path_index);
}

inline ScanPath finish_path(ScanMode mode, std::size_t path_index, std::size_t h, std::size_t w,
                            std::vector<std::size_t> perm) {
    ScanPath p{mode, path_index, h, w, std::move(perm), {}};
    p.inv.assign(p.perm.size(), 0);
    for (std::size_t t = 0; t < p.perm.size(); ++t) p.inv[p.perm[t]] = t;
    return p;
}

}  // namespace detail

/// Serpentine traversal from one of the four image corners. Each path begins
/// along the boundary line that runs clockwise from its corner:
///   0: top-left,     row 0 left->right, then row 1 right->left, ...
///   1: top-right,    column W-1 top->bottom, then column W-2 bottom->top, ...
///   2: bottom-right, row H-1 right->left, then row H-2 left->right, ...
///   3: bottom-left,  column 0 bottom->top, then column 1 top->bottom, ...
inline ScanPath zigzag_indices(std::size_t h, std::size_t w, std::size_t path_index) {
    detail::check_path_args(h, w, path_index);
    std::vector<std::size_t> perm;
    perm.reserve(h * w);
    switch (path_index) {
        case 0:
            for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j) perm.push_back(i * w + (i % 2 == 0 ? j : w - 1 - j));
            break;
        case 1:
            for (std::size_t k = 0; k < w; ++k) {
                const std::size_t col = w - 1 - k;
                for (std::size_t j = 0; j < h; ++j) perm.push_back((k % 2 == 0 ? j : h - 1 - j) * w + col);
            }
            break;
        case 2:
            for (std::size_t k = 0; k < h; ++k) {
                const std::size_t row = h - 1 - k;
                for (std::size_t j = 0; j < w; ++j) perm.push_back(row * w + (k % 2 == 0 ? w - 1 - j : j));
            }
            break;
        default:
            for (std::size_t k = 0; k < w; ++k)
                for (std::size_t j = 0; j < h; ++j) perm.push_back((k % 2 == 0 ? h - 1 - j : j) * w + k);
            break;
    }
    return detail::finish_path(ScanMode::zigzag, path_index, h, w, std::move(perm));
}

/// Row/column raster scans: 0 row-major, 1 column-major, 2 and 3 their reversals.
inline ScanPath cross_scan_indices(std::size_t h, std::size_t w, std::size_t path_index) {
    detail::check_path_args(h, w, path_index);
    std::vector<std::size_t> perm;
    perm.reserve(h * w);
    if (path_index % 2 == 0) {
        for (std::size_t i = 0; i < h * w; ++i) perm.push_back(i);
    } else {
        for (std::size_t c = 0; c < w; ++c)
            for (std::size_t r = 0; r < h; ++r) perm.push_back(r * w + c);
    }
    if (path_index >= 2) std::reverse(perm.begin(), perm.end());
    return detail::finish_path(ScanMode::cross, path_index, h, w, std::move(perm));
}

inline ScanPath make_scan_path(ScanMode mode, std::size_t h, std::size_t w, std::size_t path_index) {
    return mode == ScanMode::zigzag ? zigzag_indices(h, w, path_index) : cross_scan_indices(h, w, path_index);
}

/// Process-wide cache of immutable paths keyed by (mode, H, W).
inline std::shared_ptr<const std::array<ScanPath, 4>> cached_scan_paths(ScanMode mode, std::size_t h, std::size_t w) {
    using Key = std::tuple<int, std::size_t, std::size_t>;
    static std::mutex mu;
    static std::map<Key, std::shared_ptr<const std::array<ScanPath, 4>>> cache;
    const Key key{static_cast<int>(mode), h, w};
    std::lock_guard lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto paths = std::make_shared<std::array<ScanPath, 4>>();
    for (std::size_t p = 0; p < 4; ++p) (*paths)[p] = make_scan_path(mode, h, w, p);
    cache.emplace(key, paths);
    return paths;
}

/// Manhattan distance between the grid cells visited at t and t+1.
inline std::size_t manhattan_step(const ScanPath& p, std::size_t t) {
    const std::size_t a = p.perm[t], b = p.perm[t + 1];
    const auto ra = static_cast<long long>(a / p.width), ca = static_cast<long long>(a % p.width);
    const auto rb = static_cast<long long>(b / p.width), cb = static_cast<long long>(b % p.width);
    return static_cast<std::size_t>(std::llabs(ra - rb) + std::llabs(ca - cb));
}

/// Number of consecutive pairs that are not grid neighbours.
inline std::size_t discontinuities(const ScanPath& p) {
    std::size_t n = 0;
    for (std::size_t t = 0; t + 1 < p.length(); ++t) n += manhattan_step(p, t) > 1 ? 1 : 0;
    return n;
}

/// Flattens x [C,H,W] into the sequence [L,C] visited in path order.
inline Tensor gather(const Tensor& x, const ScanPath& path) {
    if (x.rank() != 3 || x.dim(1) != path.height || x.dim(2) != path.width)
        fail("gather: tensor ", shape_str(x.shape()), " does not match path grid ", path.height, "x", path.width);
    const std::size_t c = x.dim(0), L = path.length();
    auto index = std::make_shared<std::vector<std::size_t>>(L * c);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t k = 0; k < c; ++k) (*index)[t * c + k] = k * L + path.perm[t];
    return take(x, std::move(index), {L, c});
}

/// Inverse of gather: scatters y [L,C] back onto the grid as [C,H,W].
inline Tensor merge(const Tensor& y, const ScanPath& path) {
    if (y.rank() != 2 || y.dim(0) != path.length())
        fail("merge: sequence ", shape_str(y.shape()), " does not match path length ", path.length());
    const std::size_t c = y.dim(1), L = path.length();
    auto index = std::make_shared<std::vector<std::size_t>>(L * c);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t g = 0; g < L; ++g) (*index)[k * L + g] = path.inv[g] * c + k;
    return take(y, std::move(index), {c, path.height, path.width});
}

}  // namespace samam
