#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "meltpool/errors.hpp"
#include "meltpool/io.hpp"
#include "meltpool/tensor.hpp"

namespace meltpool {

/// Row-major grayscale image with values in [0,1].
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> pixels;

    GrayImage() = default;
    GrayImage(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), pixels(w * h, fill) {}

    float& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
    float at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

    bool operator==(const GrayImage&) const = default;
};

// ---------------------------------------------------------------------------
// PGM (P5) IO
// ---------------------------------------------------------------------------

inline GrayImage parse_pgm(const std::string& bytes, const std::string& origin = "<memory>") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) { return DataError(origin + ": malformed PGM header: " + why); };
    auto skip_space = [&] {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else {
                return;
            }
        }
    };
    auto read_uint = [&](const char* what) {
        skip_space();
        std::size_t start = pos;
        unsigned long v = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            v = v * 10 + static_cast<unsigned long>(bytes[pos] - '0');
            if (v > 1u << 20) throw fail(std::string(what) + " too large");
            ++pos;
        }
        if (pos == start) throw fail(std::string("missing ") + what);
        return static_cast<std::size_t>(v);
    };

    if (bytes.size() < 2 || bytes[0] != 'P') throw fail("missing magic number");
    if (bytes[1] == '6' || bytes[1] == '3') throw DataError(origin + ": colour PPM given, expected an 8-bit grayscale P5 image");
    if (bytes[1] != '5') throw fail(std::string("unsupported magic P") + bytes[1] + " (expected P5)");
    pos = 2;
    const std::size_t w = read_uint("width"), h = read_uint("height"), maxval = read_uint("maxval");
    if (w == 0 || h == 0) throw fail("zero dimension");
    if (maxval == 0 || maxval > 255) throw fail("maxval " + std::to_string(maxval) + " is not an 8-bit value");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("no separator before raster");
    ++pos;
    if (bytes.size() - pos < w * h) throw DataError(origin + ": PGM raster truncated");

    GrayImage img(w, h);
    for (std::size_t i = 0; i < w * h; ++i) {
        const auto v = static_cast<unsigned char>(bytes[pos + i]);
        if (v > maxval) throw DataError(origin + ": pixel value exceeds maxval");
        img.pixels[i] = static_cast<float>(v) / static_cast<float>(maxval);
    }
    return img;
}

inline GrayImage read_pgm(const std::filesystem::path& path) { return parse_pgm(read_file(path), path.string()); }

/// Quantizes to 8 bits (round to nearest), maxval 255.
inline std::string encode_pgm(const GrayImage& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.reserve(out.size() + img.pixels.size());
    for (float v : img.pixels) {
        const float c = std::clamp(v, 0.0f, 1.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
    }
    return out;
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) { write_file_atomic(path, encode_pgm(img)); }

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// Bilinear sample at continuous pixel coordinates (pixel centres at
/// integers), clamped to the edge pixels.
inline float sample_bilinear_clamp(const GrayImage& img, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const std::size_t x0 = static_cast<std::size_t>(x), y0 = static_cast<std::size_t>(y);
    const std::size_t x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
    const double ax = x - static_cast<double>(x0), ay = y - static_cast<double>(y0);
    if (ax == 0.0 && ay == 0.0) return img.at(x0, y0);
    const double v = (1 - ax) * (1 - ay) * img.at(x0, y0) + ax * (1 - ay) * img.at(x1, y0) +
                     (1 - ax) * ay * img.at(x0, y1) + ax * ay * img.at(x1, y1);
    return static_cast<float>(v);
}

namespace detail {

// Source coordinates of the point (x, y) of the frame rotated by angle about
// its centre; nullopt when the point falls outside the source.
struct RotationMap {
    double c, s, cx, cy, w, h;
    RotationMap(const GrayImage& img, double angle_deg)
        : c(std::cos(angle_deg * std::numbers::pi / 180.0)),
          s(std::sin(angle_deg * std::numbers::pi / 180.0)),
          cx((static_cast<double>(img.width) - 1) / 2),
          cy((static_cast<double>(img.height) - 1) / 2),
          w(static_cast<double>(img.width)),
          h(static_cast<double>(img.height)) {}

    float sample(const GrayImage& img, double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double sx = cx + c * dx - s * dy, sy = cy + s * dx + c * dy;
        // each pixel covers half a pixel beyond its centre
        if (sx < -0.5 || sy < -0.5 || sx > w - 0.5 || sy > h - 0.5) return 0.0f;
        return sample_bilinear_clamp(img, sx, sy);
    }
};

}  // namespace detail

/// Rotates counter-clockwise (as displayed, y pointing down) by `angle_deg`
/// about the image centre. Same output size; pixels that map outside the
/// source are zero.
inline GrayImage rotate(const GrayImage& img, double angle_deg) {
    const detail::RotationMap map(img, angle_deg);
    GrayImage out(img.width, img.height);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x) out.at(x, y) = map.sample(img, static_cast<double>(x), static_cast<double>(y));
    return out;
}

/// Side of the centred axis-aligned square that stays inside the frame after
/// a rotation by `angle_deg`.
inline double inscribed_square_side(std::size_t width, std::size_t height, double angle_deg) {
    const double th = angle_deg * std::numbers::pi / 180.0;
    return static_cast<double>(std::min(width, height)) / (std::abs(std::cos(th)) + std::abs(std::sin(th)));
}

/// Resamples the centred square of side `side` (pixels, may be fractional) to
/// out x out with bilinear interpolation.
inline GrayImage crop_center_resize(const GrayImage& img, double side, std::size_t out) {
    const double x0 = (static_cast<double>(img.width) - side) / 2, y0 = (static_cast<double>(img.height) - side) / 2;
    const double step = side / static_cast<double>(out);
    GrayImage res(out, out);
    for (std::size_t y = 0; y < out; ++y) {
        for (std::size_t x = 0; x < out; ++x) {
            res.at(x, y) = sample_bilinear_clamp(img, x0 + (static_cast<double>(x) + 0.5) * step - 0.5,
                                                 y0 + (static_cast<double>(y) + 0.5) * step - 0.5);
        }
    }
    return res;
}

/// Rotate to align, crop the inscribed square, resize. Output [out, out] in
/// [0,1]. The three steps are composed into one bilinear resampling of the
/// raw frame, so the crop never blends in fill from outside the rotated frame.
inline Tensor<float> preprocess_frame(const GrayImage& raw, double angle_deg = 7.0, std::size_t out = 128) {
    if (raw.width < 8 || raw.height < 8) {
        throw DataError("frame " + std::to_string(raw.width) + "x" + std::to_string(raw.height) + " is smaller than 8x8");
    }
    if (raw.pixels.size() != raw.width * raw.height) throw DataError("frame pixel count does not match its dimensions");
    for (float v : raw.pixels)
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("frame values must be normalized grayscale in [0,1]");
    const detail::RotationMap map(raw, angle_deg);
    const double side = inscribed_square_side(raw.width, raw.height, angle_deg);
    const double x0 = (static_cast<double>(raw.width) - side) / 2, y0 = (static_cast<double>(raw.height) - side) / 2;
    const double step = side / static_cast<double>(out);
    std::vector<float> v(out * out);
    for (std::size_t y = 0; y < out; ++y) {
        for (std::size_t x = 0; x < out; ++x) {
            v[y * out + x] = map.sample(raw, x0 + (static_cast<double>(x) + 0.5) * step - 0.5,
                                        y0 + (static_cast<double>(y) + 0.5) * step - 0.5);
        }
    }
    return Tensor<float>({out, out}, std::move(v));
}

}  // namespace meltpool
