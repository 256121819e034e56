#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "samam/io.hpp"
#include "samam/tensor.hpp"

namespace samam {

/// 8-bit RGB raster, row-major interleaved.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // 3 * width * height

    Image() = default;
    Image(std::size_t w, std::size_t h) : width(w), height(h), pixels(3 * w * h, 0) {}

    std::uint8_t& at(std::size_t r, std::size_t c, std::size_t ch) { return pixels[(r * width + c) * 3 + ch]; }
    std::uint8_t at(std::size_t r, std::size_t c, std::size_t ch) const { return pixels[(r * width + c) * 3 + ch]; }

    bool operator==(const Image&) const = default;
};

namespace detail {

// Skips whitespace and '#' comments, then reads one decimal header field.
inline std::size_t ppm_field(const std::string& b, std::size_t& pos, const char* what) {
    for (;;) {
        while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    if (pos >= b.size() || !std::isdigit(static_cast<unsigned char>(b[pos]))) fail("ppm: missing ", what);
    std::size_t v = 0;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) {
        v = v * 10 + static_cast<std::size_t>(b[pos] - '0');
        if (v > (1u << 24)) fail("ppm: ", what, " too large");
        ++pos;
    }
    return v;
}

}  // namespace detail

/// Parses a binary P6 image with maxval 255.
inline Image decode_ppm(const std::string& bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail("ppm: not a binary P6 file");
    std::size_t pos = 2;
    const std::size_t w = detail::ppm_field(bytes, pos, "width");
    const std::size_t h = detail::ppm_field(bytes, pos, "height");
    const std::size_t maxval = detail::ppm_field(bytes, pos, "maxval");
    if (maxval != 255) fail("ppm: only maxval 255 is supported, got ", maxval);
    if (w == 0 || h == 0) fail("ppm: empty image ", w, "x", h);
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        fail("ppm: malformed header");
    ++pos;
    const std::size_t n = 3 * w * h;
    if (bytes.size() - pos < n) fail("ppm: truncated pixel data (", bytes.size() - pos, " of ", n, " bytes)");
    Image img(w, h);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), n, img.pixels.begin());
    return img;
}

inline std::string encode_ppm(const Image& img) {
    if (img.pixels.size() != 3 * img.width * img.height) fail("ppm: pixel buffer does not match dimensions");
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(img.pixels.begin(), img.pixels.end());
    return out;
}

inline Image read_ppm(const std::filesystem::path& path) {
    try {
        return decode_ppm(read_file(path));
    } catch (const Error& e) {
        fail(path.string(), ": ", e.what());
    }
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) { write_file_atomic(path, encode_ppm(img)); }

/// [3,H,W] tensor with values v/255.
inline Tensor image_to_tensor(const Image& img) {
    const std::size_t hw = img.width * img.height;
    std::vector<double> v(3 * hw);
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c) v[c * hw + i] = img.pixels[i * 3 + c] / 255.0;
    return Tensor({3, img.height, img.width}, std::move(v));
}

inline std::uint8_t quantize(double x) {
    const double clamped = std::clamp(std::isnan(x) ? 0.0 : x, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(255.0 * clamped));
}

/// Clamps to [0,1] and rounds 255*x. Accepts [3,H,W] or a single-channel
/// [1,H,W]/[H,W] tensor, which is replicated as gray.
inline Image tensor_to_image(const Tensor& t) {
    const Shape& s = t.shape();
    std::size_t ch = 0, h = 0, w = 0;
    if (s.size() == 3 && (s[0] == 3 || s[0] == 1)) ch = s[0], h = s[1], w = s[2];
    else if (s.size() == 2) ch = 1, h = s[0], w = s[1];
    else fail("tensor_to_image: expected [3,H,W], [1,H,W] or [H,W], got ", shape_str(s));
    Image img(w, h);
    const auto& v = t.values();
    const std::size_t hw = h * w;
    for (std::size_t i = 0; i < hw; ++i)
        for (std::size_t c = 0; c < 3; ++c) img.pixels[i * 3 + c] = quantize(v[(ch == 3 ? c : 0) * hw + i]);
    return img;
}

/// Mirror index without repeating the edge sample: -1 -> 1, n -> n-2.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
    i %= period;
    if (i < 0) i += period;
    return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

/// Reflect-pads the bottom and right edges up to the given size.
inline Image reflect_pad(const Image& img, std::size_t height, std::size_t width) {
    if (height < img.height || width < img.width) fail("reflect_pad: target smaller than image");
    Image out(width, height);
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c) {
            const std::size_t sr = reflect_index(static_cast<std::ptrdiff_t>(r), img.height);
            const std::size_t sc = reflect_index(static_cast<std::ptrdiff_t>(c), img.width);
            for (std::size_t ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(sr, sc, ch);
        }
    return out;
}

inline std::size_t round_up(std::size_t n, std::size_t multiple) { return (n + multiple - 1) / multiple * multiple; }

inline Image pad_to_multiple(const Image& img, std::size_t multiple) {
    return reflect_pad(img, round_up(img.height, multiple), round_up(img.width, multiple));
}

inline Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
    if (top + height > img.height || left + width > img.width)
        fail("crop: window ", height, "x", width, " at (", top, ",", left, ") exceeds image ", img.height, "x",
             img.width);
    Image out(width, height);
    for (std::size_t r = 0; r < height; ++r)
        std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(((top + r) * img.width + left) * 3), 3 * width,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(r * width * 3));
    return out;
}

}  // namespace samam
