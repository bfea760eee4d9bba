// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "image.hpp"

namespace ifield {

// 10 log10(peak^2 / MSE) over all channels; identical images cap at 99 dB.
double psnr(const Image &a, const Image &b, double peak = 1.0);

// Mean local SSIM, 8x8 box windows at stride 1, grayscale by channel mean,
// stabilizers C1 = (0.01 peak)^2 and C2 = (0.03 peak)^2.
double ssim(const Image &a, const Image &b, double peak = 1.0);

constexpr double kPsnrCap = 99.0;

struct MapMetrics {
    double psnr_db = 0;
    double ssim = 0;
};

struct MetricReport {
    MapMetrics rgb, reflectance, shading, residual;
    double shadow_region_median_rel_error = 0;  // reflectance, in >50% brightness-drop regions
    int views = 0;
    std::string to_json() const;
};

}  // namespace ifield
