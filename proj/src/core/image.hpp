// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vec3.hpp"

namespace ifield {

enum class ColorSpace : uint8_t { kLinear, kGamma };

// Row-major float raster, top-down in memory. channels is 1 or 3.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    ColorSpace color_space = ColorSpace::kLinear;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c, ColorSpace cs = ColorSpace::kLinear)
        : width(w), height(h), channels(c), color_space(cs),
          data(static_cast<size_t>(w) * h * c, 0.f) {}

    size_t index(int x, int y, int c = 0) const {
        return (static_cast<size_t>(y) * width + x) * channels + c;
    }
    float at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
    float &at(int x, int y, int c = 0) { return data[index(x, y, c)]; }

    Vec3 rgb(int x, int y) const {
        size_t i = index(x, y, 0);
        if (channels == 1) return {data[i], data[i], data[i]};
        return {data[i], data[i + 1], data[i + 2]};
    }
    void set_rgb(int x, int y, const Vec3 &v) {
        size_t i = index(x, y, 0);
        data[i] = static_cast<float>(v.x);
        if (channels == 3) {
            data[i + 1] = static_cast<float>(v.y);
            data[i + 2] = static_cast<float>(v.z);
        }
    }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
    bool same_shape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
};

enum class GammaDirection { kEncode, kDecode };

// Power-law transfer. `gamma` is the encode exponent (1/2.2 by default across
// the pipeline). Encode clamps to [0,1] first; decode expects [0,1] input.
double gamma_apply(double v, double gamma, GammaDirection dir);
Image gamma_map(const Image &img, double gamma, GammaDirection dir);

constexpr double kDefaultGamma = 1.0 / 2.2;

// PFM, 32-bit little-endian floats ("PF" 3-channel / "Pf" 1-channel).
// Files use the conventional bottom-up row order; in memory rows are top-down.
void write_pfm(const std::string &path, const Image &img);
Image read_pfm(const std::string &path);

// Minimal 8-bit PNG writer (filter 0, zlib). channels 1 or 3.
void write_png(const std::string &path, const Image &img);

}  // namespace ifield
