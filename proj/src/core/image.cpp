// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include "image.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "error.hpp"

namespace ifield {

double gamma_apply(double v, double gamma, GammaDirection dir) {
    if (gamma <= 0) throw InvalidArgument("gamma must be > 0");
    if (dir == GammaDirection::kEncode) {
        v = std::clamp(v, 0.0, 1.0);
        return std::pow(v, gamma);
    }
    v = std::clamp(v, 0.0, 1.0);
    return std::pow(v, 1.0 / gamma);
}

Image gamma_map(const Image &img, double gamma, GammaDirection dir) {
    if (gamma <= 0) throw InvalidArgument("gamma must be > 0");
    Image out = img;
    for (auto &v : out.data)
        v = static_cast<float>(gamma_apply(v, gamma, dir));
    out.color_space =
        dir == GammaDirection::kEncode ? ColorSpace::kGamma : ColorSpace::kLinear;
    return out;
}

// ---------------------------------------------------------------------------
// PFM

void write_pfm(const std::string &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3)
        throw InvalidArgument("pfm supports 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);
    f << (img.channels == 3 ? "PF" : "Pf") << "\n"
      << img.width << " " << img.height << "\n"
      << "-1.0\n";
    // Bottom-up raster, per the de-facto PFM convention.
    for (int y = img.height - 1; y >= 0; --y) {
        const float *row = img.data.data() + img.index(0, y, 0);
        f.write(reinterpret_cast<const char *>(row),
                static_cast<std::streamsize>(sizeof(float)) * img.width * img.channels);
    }
    if (!f) throw IoError("short write: " + path);
}

namespace {
std::string read_pfm_token(std::istream &in) {
    std::string tok;
    in >> tok;
    return tok;
}
}  // namespace

Image read_pfm(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string magic = read_pfm_token(f);
    int channels;
    if (magic == "PF")
        channels = 3;
    else if (magic == "Pf")
        channels = 1;
    else
        throw ParseError(path + ": not a PFM file (bad magic '" + magic + "')");
    int w = 0, h = 0;
    double scale = 0;
    f >> w >> h >> scale;
    if (!f || w <= 0 || h <= 0) throw ParseError(path + ": malformed PFM header");
    if (scale >= 0)
        throw ParseError(path + ": big-endian PFM (positive scale) not supported");
    f.get();  // single whitespace byte after the scale line
    Image img(w, h, channels);
    for (int y = h - 1; y >= 0; --y) {
        float *row = img.data.data() + img.index(0, y, 0);
        f.read(reinterpret_cast<char *>(row),
               static_cast<std::streamsize>(sizeof(float)) * w * channels);
    }
    if (!f) throw ParseError(path + ": truncated PFM payload");
    return img;
}

// ---------------------------------------------------------------------------
// PNG (write-only, filter 0)

namespace {

void put_u32_be(std::vector<uint8_t> &buf, uint32_t v) {
    buf.push_back(static_cast<uint8_t>(v >> 24));
    buf.push_back(static_cast<uint8_t>(v >> 16));
    buf.push_back(static_cast<uint8_t>(v >> 8));
    buf.push_back(static_cast<uint8_t>(v));
}

void write_chunk(std::ofstream &f, const char type[4], const uint8_t *payload,
                 size_t n) {
    std::vector<uint8_t> head;
    put_u32_be(head, static_cast<uint32_t>(n));
    f.write(reinterpret_cast<const char *>(head.data()), 4);
    f.write(type, 4);
    if (n) f.write(reinterpret_cast<const char *>(payload), static_cast<std::streamsize>(n));
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef *>(type), 4);
    if (n) crc = crc32(crc, payload, static_cast<uInt>(n));
    std::vector<uint8_t> tail;
    put_u32_be(tail, static_cast<uint32_t>(crc));
    f.write(reinterpret_cast<const char *>(tail.data()), 4);
}

}  // namespace

void write_png(const std::string &path, const Image &img) {
    if (img.channels != 1 && img.channels != 3)
        throw InvalidArgument("png supports 1 or 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for write: " + path);

    static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    f.write(reinterpret_cast<const char *>(sig), 8);

    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(img.width));
    put_u32_be(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8);                                    // bit depth
    ihdr.push_back(img.channels == 3 ? 2 : 0);            // color type
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    write_chunk(f, "IHDR", ihdr.data(), ihdr.size());

    const size_t stride = static_cast<size_t>(img.width) * img.channels;
    std::vector<uint8_t> raw((stride + 1) * img.height);
    for (int y = 0; y < img.height; ++y) {
        uint8_t *row = raw.data() + (stride + 1) * y;
        row[0] = 0;  // filter: none
        for (size_t i = 0; i < stride; ++i) {
            float v = img.data[static_cast<size_t>(y) * stride + i];
            row[1 + i] = static_cast<uint8_t>(
                std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
        }
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> idat(bound);
    if (compress2(idat.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
        throw IoError("zlib compress failed");
    idat.resize(bound);
    write_chunk(f, "IDAT", idat.data(), idat.size());
    write_chunk(f, "IEND", nullptr, 0);
    if (!f) throw IoError("short write: " + path);
}

}  // namespace ifield
