#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vosh/error.hpp"
#include "vosh/vec.hpp"

namespace vosh {

/// RGB float image, row-major, top row first.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, Vec3f fill = {}) : width(w), height(h), data(std::size_t(w) * h * 3) {
        for (std::size_t i = 0; i < std::size_t(w) * h; ++i) {
            data[3 * i] = fill.x;
            data[3 * i + 1] = fill.y;
            data[3 * i + 2] = fill.z;
        }
    }

    std::size_t pixel_count() const { return std::size_t(width) * height; }
    Vec3f at(int x, int y) const {
        const std::size_t i = 3 * (std::size_t(y) * width + x);
        return {data[i], data[i + 1], data[i + 2]};
    }
    void set(int x, int y, const Vec3f& c) {
        const std::size_t i = 3 * (std::size_t(y) * width + x);
        data[i] = c.x;
        data[i + 1] = c.y;
        data[i + 2] = c.z;
    }
    bool operator==(const Image&) const = default;
};

inline std::uint8_t to_byte(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

/// Rounds every channel to the nearest 8-bit level, as a PNG round trip would.
inline Image quantize8(const Image& img) {
    Image out = img;
    for (float& v : out.data) v = float(to_byte(v)) / 255.0f;
    return out;
}

inline double mean_abs_diff(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) throw InvalidArgument("mean_abs_diff: dimension mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(double(a.data[i]) - double(b.data[i]));
    return a.data.empty() ? 0.0 : s / double(a.data.size());
}

namespace detail {
struct FileCloser {
    void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline void write_png(const std::filesystem::path& path, const Image& img) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot open for writing: " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng: cannot allocate write state");
    }
    std::vector<std::uint8_t> bytes(img.data.size());
    std::transform(img.data.begin(), img.data.end(), bytes.begin(), to_byte);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) rows[y] = bytes.data() + std::size_t(y) * img.width * 3;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("libpng: write failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    // Fixed settings so identical images give identical files.
    png_set_compression_level(png, 6);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline Image read_png(const std::filesystem::path& path) {
    detail::FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw std::runtime_error("cannot open image: " + path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng: cannot allocate read state");
    }
    Image img;
    std::vector<std::uint8_t> bytes;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("libpng: decode failed for " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = int(png_get_image_width(png, info));
    const int h = int(png_get_image_height(png, info));
    bytes.resize(std::size_t(w) * h * 3);
    rows.resize(h);
    for (int y = 0; y < h; ++y) rows[y] = bytes.data() + std::size_t(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    img = Image(w, h);
    for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = float(bytes[i]) / 255.0f;
    return img;
}

}  // namespace vosh
