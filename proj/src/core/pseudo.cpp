// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include "pseudo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <queue>
#include <random>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace ifield {

namespace fs = std::filesystem;
using nlohmann::json;

CameraMaps gt_camera_maps(const Dataset &ds, int ci) {
    CameraMaps maps;
    const Camera &cam = ds.cameras[ci];
    const ViewRecord &ref = ds.view(ci, 0);
    maps.normal = ref.normal;
    maps.point = ref.point;
    maps.surface = Image(cam.width, cam.height, 1);
    for (int y = 0; y < cam.height; ++y)
        for (int x = 0; x < cam.width; ++x)
            if (ref.depth.at(x, y) > 0) maps.surface.at(x, y) = 1;
    maps.vis.reserve(ds.lights.size());
    for (size_t li = 0; li < ds.lights.size(); ++li)
        maps.vis.push_back(ds.view(ci, static_cast<int>(li)).visibility);
    return maps;
}

Image pseudo_shading(const Image &normal, const Image &point, const Image &surface,
                     const Image &vis, const Vec3 &light_pos, double gamma) {
    if (!normal.same_shape(Image(point.width, point.height, 3)) ||
        surface.width != normal.width || vis.width != normal.width)
        throw InvalidArgument("pseudo_shading: map shapes disagree");
    Image out(normal.width, normal.height, 1, ColorSpace::kGamma);
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            if (surface.at(x, y) <= 0) continue;
            double lambert = lambert_from_maps(normal.rgb(x, y), point.rgb(x, y), light_pos,
                                               vis.at(x, y));
            // Same clamp-then-pow path as the GT shading export.
            out.at(x, y) = static_cast<float>(gamma_apply(lambert, gamma, GammaDirection::kEncode));
        }
    }
    return out;
}

std::vector<CandidateList> reflectance_candidates(const std::vector<Image> &images_linear,
                                                  const std::vector<Image> &s_stars,
                                                  double tau_direct, double gamma) {
    if (images_linear.empty() || images_linear.size() != s_stars.size())
        throw InvalidArgument("reflectance_candidates: need one image per shading map");
    if (!(tau_direct > 0 && tau_direct < 1))
        throw InvalidArgument("reflectance_candidates: tau_direct must be in (0,1)");
    const int w = images_linear[0].width, h = images_linear[0].height;
    std::vector<CandidateList> out(static_cast<size_t>(w) * h);
    for (size_t li = 0; li < images_linear.size(); ++li) {
        const Image &img = images_linear[li];
        const Image &s = s_stars[li];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double sg = s.at(x, y);
                if (sg <= tau_direct) continue;
                double s_lin = gamma_apply(sg, gamma, GammaDirection::kDecode);
                if (s_lin <= 0) continue;
                Vec3 c = img.rgb(x, y) / s_lin;
                c = {std::clamp(c.x, 0.0, 2.0), std::clamp(c.y, 0.0, 2.0),
                     std::clamp(c.z, 0.0, 2.0)};
                out[static_cast<size_t>(y) * w + x].push_back({c, sg});
            }
        }
    }
    return out;
}

namespace {

double luminance(const Vec3 &c) { return (c.x + c.y + c.z) / 3.0; }

struct WeightedPoint {
    Vec3 rgb;
    double weight;
};

// Near-equal candidates collapse into one weighted point so duplicate values
// cannot split a cluster's vote.
std::vector<WeightedPoint> aggregate(const CandidateList &cands, double tol) {
    std::vector<WeightedPoint> pts;
    for (const auto &c : cands) {
        bool merged = false;
        for (auto &p : pts) {
            if (distance(p.rgb, c.rgb) <= tol) {
                double wsum = p.weight + c.weight;
                p.rgb = (p.rgb * p.weight + c.rgb * c.weight) / wsum;
                p.weight = wsum;
                merged = true;
                break;
            }
        }
        if (!merged) pts.push_back({c.rgb, c.weight});
    }
    return pts;
}

}  // namespace

Vec3 merge_pixel(const CandidateList &cands, const PseudoParams &params, uint64_t pixel_seed) {
    if (cands.empty()) throw InvalidArgument("merge_pixel: empty candidate set");
    std::vector<WeightedPoint> pts = aggregate(cands, params.dedupe_tol);
    const int k = std::min<int>(params.kmeans_k, static_cast<int>(pts.size()));

    // Weighted k-means++ seeding, deterministic per pixel.
    std::mt19937_64 rng(pixel_seed);
    std::vector<Vec3> centers;
    {
        std::vector<double> w(pts.size());
        for (size_t i = 0; i < pts.size(); ++i) w[i] = pts[i].weight;
        std::discrete_distribution<size_t> first(w.begin(), w.end());
        centers.push_back(pts[first(rng)].rgb);
        while (static_cast<int>(centers.size()) < k) {
            std::vector<double> d2(pts.size());
            for (size_t i = 0; i < pts.size(); ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (const auto &c : centers) {
                    Vec3 d = pts[i].rgb - c;
                    best = std::min(best, dot(d, d));
                }
                d2[i] = best * pts[i].weight;
            }
            double total = 0;
            for (double v : d2) total += v;
            if (total <= 0) break;  // all points already covered
            std::discrete_distribution<size_t> pick(d2.begin(), d2.end());
            centers.push_back(pts[pick(rng)].rgb);
        }
    }

    std::vector<int> assign(pts.size(), 0);
    for (int iter = 0; iter < 20; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < pts.size(); ++i) {
            int best = 0;
            double best_d = std::numeric_limits<double>::infinity();
            for (size_t c = 0; c < centers.size(); ++c) {
                Vec3 d = pts[i].rgb - centers[c];
                double dd = dot(d, d);
                if (dd < best_d) {
                    best_d = dd;
                    best = static_cast<int>(c);
                }
            }
            if (assign[i] != best) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<Vec3> sums(centers.size());
        std::vector<double> wsum(centers.size(), 0);
        for (size_t i = 0; i < pts.size(); ++i) {
            sums[assign[i]] += pts[i].rgb * pts[i].weight;
            wsum[assign[i]] += pts[i].weight;
        }
        for (size_t c = 0; c < centers.size(); ++c)
            if (wsum[c] > 0) centers[c] = sums[c] / wsum[c];
        if (!changed && iter > 0) break;
    }

    // Heaviest cluster wins; near-ties favor the darker cluster, which drops
    // light-colored highlight outliers.
    std::vector<Vec3> mean(centers.size());
    std::vector<double> wsum(centers.size(), 0);
    for (size_t i = 0; i < pts.size(); ++i) {
        mean[assign[i]] += pts[i].rgb * pts[i].weight;
        wsum[assign[i]] += pts[i].weight;
    }
    int best = -1;
    for (size_t c = 0; c < centers.size(); ++c) {
        if (wsum[c] <= 0) continue;
        Vec3 mc = mean[c] / wsum[c];
        if (best < 0) {
            best = static_cast<int>(c);
            continue;
        }
        Vec3 mb = mean[best] / wsum[best];
        double rel = (wsum[c] - wsum[best]) / std::max(wsum[c], wsum[best]);
        if (rel > 1e-9 || (std::abs(rel) <= 1e-9 && luminance(mc) < luminance(mb)))
            best = static_cast<int>(c);
    }
    return mean[best] / wsum[best];
}

std::pair<Image, Image> merge_reflectance(const std::vector<CandidateList> &cands, int width,
                                          int height, const PseudoParams &params) {
    Image merged(width, height, 3);
    Image valid(width, height, 1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const CandidateList &c = cands[static_cast<size_t>(y) * width + x];
            if (c.empty()) continue;
            uint64_t seed = params.seed ^ (static_cast<uint64_t>(x) * 73856093u) ^
                            (static_cast<uint64_t>(y) * 19349663u);
            merged.set_rgb(x, y, merge_pixel(c, params, seed));
            valid.at(x, y) = 1;
        }
    }
    return {merged, valid};
}

namespace {

Vec3 chroma_of(const Vec3 &rgb) {
    double s = rgb.sum();
    if (s < 1e-9) return {1.0 / 3, 1.0 / 3, 1.0 / 3};
    return rgb / s;
}

}  // namespace

Image fill_voids(const Image &merged, const Image &valid_mask, const Image &surface,
                 const Image &normal, const Image &reference_linear, const PseudoParams &params) {
    const int w = merged.width, h = merged.height;
    struct ValidPixel {
        int x, y;
        Vec3 rgb, normal, chroma;
    };
    std::vector<ValidPixel> valids;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (valid_mask.at(x, y) > 0)
                valids.push_back({x, y, merged.rgb(x, y), normal.rgb(x, y),
                                  chroma_of(reference_linear.rgb(x, y))});
    if (valids.empty()) throw InvalidArgument("no direct illumination anywhere");

    Image out = merged;
    const double inv_2sd2 = 1.0 / (2 * params.fill_sigma_d * params.fill_sigma_d);
    const double inv_2sc2 = 1.0 / (2 * params.fill_sigma_c * params.fill_sigma_c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (valid_mask.at(x, y) > 0 || surface.at(x, y) <= 0) continue;
            Vec3 n = normal.rgb(x, y);
            Vec3 ch = chroma_of(reference_linear.rgb(x, y));
            // top-k valid pixels by similarity score
            using Scored = std::pair<double, const ValidPixel *>;
            std::priority_queue<Scored, std::vector<Scored>, std::greater<>> top;
            for (const auto &vp : valids) {
                double dx = vp.x - x, dy = vp.y - y;
                double score = std::exp(-(dx * dx + dy * dy) * inv_2sd2);
                score *= std::pow(std::fmax(0.0, dot(n, vp.normal)), params.fill_normal_pow);
                Vec3 dc = ch - vp.chroma;
                score *= std::exp(-dot(dc, dc) * inv_2sc2);
                if (static_cast<int>(top.size()) < params.fill_top_k) {
                    top.emplace(score, &vp);
                } else if (score > top.top().first) {
                    top.pop();
                    top.emplace(score, &vp);
                }
            }
            Vec3 acc;
            double wsum = 0;
            while (!top.empty()) {
                acc += top.top().second->rgb * top.top().first;
                wsum += top.top().first;
                top.pop();
            }
            if (wsum > 0) out.set_rgb(x, y, acc / wsum);
        }
    }
    return out;
}

Image visibility_edge_distance(const Image &vis) {
    const int w = vis.width, h = vis.height;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> d(static_cast<size_t>(w) * h, inf);
    bool any_edge = false;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float v = vis.at(x, y);
            bool edge = (x + 1 < w && vis.at(x + 1, y) != v) ||
                        (x > 0 && vis.at(x - 1, y) != v) ||
                        (y + 1 < h && vis.at(x, y + 1) != v) ||
                        (y > 0 && vis.at(x, y - 1) != v);
            if (edge) {
                d[static_cast<size_t>(y) * w + x] = 0;
                any_edge = true;
            }
        }
    }
    Image out(w, h, 1);
    if (!any_edge) {
        for (auto &v : out.data) v = std::numeric_limits<float>::infinity();
        return out;
    }
    const double diag = std::sqrt(2.0);
    auto at = [&](int x, int y) -> double & { return d[static_cast<size_t>(y) * w + x]; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = at(x, y);
            if (x > 0) v = std::min(v, at(x - 1, y) + 1);
            if (y > 0) v = std::min(v, at(x, y - 1) + 1);
            if (x > 0 && y > 0) v = std::min(v, at(x - 1, y - 1) + diag);
            if (x + 1 < w && y > 0) v = std::min(v, at(x + 1, y - 1) + diag);
            at(x, y) = v;
        }
    for (int y = h - 1; y >= 0; --y)
        for (int x = w - 1; x >= 0; --x) {
            double v = at(x, y);
            if (x + 1 < w) v = std::min(v, at(x + 1, y) + 1);
            if (y + 1 < h) v = std::min(v, at(x, y + 1) + 1);
            if (x + 1 < w && y + 1 < h) v = std::min(v, at(x + 1, y + 1) + diag);
            if (x > 0 && y + 1 < h) v = std::min(v, at(x - 1, y + 1) + diag);
            at(x, y) = v;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(x, y) = static_cast<float>(at(x, y));
    return out;
}

std::pair<Image, Image> weight_maps(const Image &s_star, const Image &vis,
                                    const PseudoParams &params) {
    if (s_star.width != vis.width || s_star.height != vis.height)
        throw InvalidArgument("weight_maps: shape mismatch");
    Image dist = visibility_edge_distance(vis);
    Image w_r(s_star.width, s_star.height, 1), w_s(s_star.width, s_star.height, 1);
    for (int y = 0; y < s_star.height; ++y) {
        for (int x = 0; x < s_star.width; ++x) {
            double ramp = std::isinf(dist.at(x, y))
                              ? 1.0
                              : std::clamp(dist.at(x, y) / params.edge_sigma, 0.0, 1.0);
            double s = s_star.at(x, y);
            w_s.at(x, y) = static_cast<float>(std::clamp(ramp * s, 0.0, 1.0));
            w_r.at(x, y) =
                static_cast<float>(std::clamp(ramp * std::min(1.0, s / params.tau_direct), 0.0, 1.0));
        }
    }
    return {w_r, w_s};
}

PseudoSet make_pseudo(const Dataset &ds, const PseudoParams &params,
                      const CameraMapsProvider &maps_provider, const std::string &source) {
    PseudoSet ps;
    ps.params = params;
    ps.gamma = ds.gamma;
    ps.cameras = static_cast<int>(ds.cameras.size());
    ps.lights = static_cast<int>(ds.lights.size());
    ps.source = source;
    ps.views.resize(static_cast<size_t>(ps.cameras) * ps.lights);

    for (int ci = 0; ci < ps.cameras; ++ci) {
        CameraMaps maps = maps_provider(ci);
        const int w = maps.normal.width, h = maps.normal.height;

        std::vector<Image> s_stars(ps.lights);
        std::vector<Image> imgs_linear(ps.lights);
        Image reference(w, h, 3);
        for (int li = 0; li < ps.lights; ++li) {
            s_stars[li] = pseudo_shading(maps.normal, maps.point, maps.surface, maps.vis[li],
                                         ds.lights[li].position, ds.gamma);
            imgs_linear[li] =
                gamma_map(ds.view(ci, li).image_rgb, ds.gamma, GammaDirection::kDecode);
            for (size_t i = 0; i < reference.data.size(); ++i)
                reference.data[i] = std::max(reference.data[i], imgs_linear[li].data[i]);
        }

        auto cands = reflectance_candidates(imgs_linear, s_stars, params.tau_direct, ds.gamma);
        auto [merged, valid] = merge_reflectance(cands, w, h, params);
        Image filled = fill_voids(merged, valid, maps.surface, maps.normal, reference, params);
        Image r_star = gamma_map(filled, ds.gamma, GammaDirection::kEncode);

        for (int li = 0; li < ps.lights; ++li) {
            PseudoView pv;
            pv.r_star = r_star;
            pv.s_star = s_stars[li];
            auto [w_r, w_s] = weight_maps(s_stars[li], maps.vis[li], params);
            pv.w_r = std::move(w_r);
            pv.w_s = std::move(w_s);
            pv.valid_mask = valid;
            ps.views[ps.view_index(ci, li)] = std::move(pv);
        }
    }
    return ps;
}

void save_pseudo(const PseudoSet &ps, const std::string &dir) {
    fs::create_directories(dir);
    json meta;
    meta["gamma"] = ps.gamma;
    meta["cameras"] = ps.cameras;
    meta["lights"] = ps.lights;
    meta["source"] = ps.source;
    meta["params"] = {{"tau_direct", ps.params.tau_direct},
                      {"kmeans_k", ps.params.kmeans_k},
                      {"dedupe_tol", ps.params.dedupe_tol},
                      {"fill_top_k", ps.params.fill_top_k},
                      {"fill_sigma_d", ps.params.fill_sigma_d},
                      {"fill_normal_pow", ps.params.fill_normal_pow},
                      {"fill_sigma_c", ps.params.fill_sigma_c},
                      {"edge_sigma", ps.params.edge_sigma},
                      {"seed", ps.params.seed}};
    std::ofstream mf(fs::path(dir) / "meta.json");
    if (!mf) throw IoError("cannot write pseudo meta in " + dir);
    mf << meta.dump(2) << "\n";

    for (int ci = 0; ci < ps.cameras; ++ci) {
        for (int li = 0; li < ps.lights; ++li) {
            const PseudoView &pv = ps.view(ci, li);
            fs::path vd = fs::path(dir) / ("c" + std::to_string(ci) + "_l" + std::to_string(li));
            fs::create_directories(vd);
            write_pfm((vd / "rstar.pfm").string(), pv.r_star);
            write_pfm((vd / "sstar.pfm").string(), pv.s_star);
            write_pfm((vd / "wr.pfm").string(), pv.w_r);
            write_pfm((vd / "ws.pfm").string(), pv.w_s);
            write_png((vd / "mask.png").string(), pv.valid_mask);
        }
    }
}

PseudoSet load_pseudo(const std::string &dir) {
    std::ifstream mf(fs::path(dir) / "meta.json");
    if (!mf) throw MissingArtifact("no pseudo labels at " + dir + "/meta.json");
    json meta;
    try {
        mf >> meta;
    } catch (const json::parse_error &e) {
        throw ParseError(std::string("pseudo meta.json: ") + e.what());
    }
    PseudoSet ps;
    ps.gamma = meta.at("gamma").get<double>();
    ps.cameras = meta.at("cameras").get<int>();
    ps.lights = meta.at("lights").get<int>();
    ps.source = meta.value("source", "gt");
    const json &p = meta.at("params");
    ps.params.tau_direct = p.at("tau_direct").get<double>();
    ps.params.kmeans_k = p.at("kmeans_k").get<int>();
    ps.params.dedupe_tol = p.at("dedupe_tol").get<double>();
    ps.params.fill_top_k = p.at("fill_top_k").get<int>();
    ps.params.fill_sigma_d = p.at("fill_sigma_d").get<double>();
    ps.params.fill_normal_pow = p.at("fill_normal_pow").get<double>();
    ps.params.fill_sigma_c = p.at("fill_sigma_c").get<double>();
    ps.params.edge_sigma = p.at("edge_sigma").get<double>();
    ps.params.seed = p.at("seed").get<uint64_t>();
    ps.views.resize(static_cast<size_t>(ps.cameras) * ps.lights);
    for (int ci = 0; ci < ps.cameras; ++ci) {
        for (int li = 0; li < ps.lights; ++li) {
            fs::path vd = fs::path(dir) / ("c" + std::to_string(ci) + "_l" + std::to_string(li));
            PseudoView pv;
            pv.r_star = read_pfm((vd / "rstar.pfm").string());
            pv.r_star.color_space = ColorSpace::kGamma;
            pv.s_star = read_pfm((vd / "sstar.pfm").string());
            pv.s_star.color_space = ColorSpace::kGamma;
            pv.w_r = read_pfm((vd / "wr.pfm").string());
            pv.w_s = read_pfm((vd / "ws.pfm").string());
            ps.views[ps.view_index(ci, li)] = std::move(pv);
        }
    }
    return ps;
}

}  // namespace ifield
