// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include "metrics.hpp"

#include <cmath>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace ifield {

double psnr(const Image &a, const Image &b, double peak) {
    if (!a.same_shape(b)) throw InvalidArgument("psnr: shape mismatch");
    if (!(peak > 0)) throw InvalidArgument("psnr: peak must be > 0");
    double mse = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data.size());
    if (mse <= 0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

namespace {

std::vector<double> to_gray(const Image &img) {
    std::vector<double> g(img.pixel_count());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0;
            for (int c = 0; c < img.channels; ++c) s += img.at(x, y, c);
            g[static_cast<size_t>(y) * img.width + x] = s / img.channels;
        }
    return g;
}

}  // namespace

double ssim(const Image &a, const Image &b, double peak) {
    if (!a.same_shape(b)) throw InvalidArgument("ssim: shape mismatch");
    const int win = 8;
    if (a.width < win || a.height < win)
        throw InvalidArgument("ssim: image smaller than the 8x8 window");
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    std::vector<double> ga = to_gray(a), gb = to_gray(b);

    double total = 0;
    long count = 0;
    const int w = a.width;
    for (int y = 0; y + win <= a.height; ++y) {
        for (int x = 0; x + win <= a.width; ++x) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (int dy = 0; dy < win; ++dy)
                for (int dx = 0; dx < win; ++dx) {
                    double va = ga[static_cast<size_t>(y + dy) * w + x + dx];
                    double vb = gb[static_cast<size_t>(y + dy) * w + x + dx];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            const double n = win * win;
            double mu_a = sa / n, mu_b = sb / n;
            double var_a = saa / n - mu_a * mu_a;
            double var_b = sbb / n - mu_b * mu_b;
            double cov = sab / n - mu_a * mu_b;
            double v = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                       ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += v;
            ++count;
        }
    }
    return total / count;
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    auto put = [&](const char *name, const MapMetrics &m) {
        j[name] = {{"psnr_db", m.psnr_db}, {"ssim", m.ssim}};
    };
    put("rgb", rgb);
    put("reflectance", reflectance);
    put("shading", shading);
    put("residual", residual);
    j["shadow_region_median_rel_error"] = shadow_region_median_rel_error;
    j["views"] = views;
    return j.dump(2);
}

}  // namespace ifield
