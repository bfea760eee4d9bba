// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "renderer.hpp"

namespace ifield {

struct PseudoParams {
    double tau_direct = 0.05;   // min pseudo shading for a usable R = I/S sample
    int kmeans_k = 3;
    double dedupe_tol = 1e-3;   // pre-aggregation radius for near-equal candidates
    int fill_top_k = 16;
    double fill_sigma_d = 8.0;  // px
    double fill_normal_pow = 4.0;
    double fill_sigma_c = 0.1;  // chroma
    double edge_sigma = 3.0;    // px
    uint64_t seed = 0;
};

// Labels for one (camera, light) view. r_star and valid_mask are shared per
// camera (reflectance is light-independent); the rest vary with the light.
struct PseudoView {
    Image r_star;      // 3ch, gamma domain
    Image s_star;      // 1ch, gamma domain
    Image w_r, w_s;    // 1ch in [0,1]
    Image valid_mask;  // 1ch {0,1}: pixel had at least one directly lit candidate
};

struct PseudoSet {
    PseudoParams params;
    double gamma = kDefaultGamma;
    int cameras = 0, lights = 0;
    std::string source;  // "gt" or "field"
    std::vector<PseudoView> views;
    int view_index(int ci, int li) const { return ci * lights + li; }
    const PseudoView &view(int ci, int li) const { return views[view_index(ci, li)]; }
};

// Geometry maps for one camera, from either the analytic GT or a fitted field.
struct CameraMaps {
    Image point;   // 3ch
    Image normal;  // 3ch
    Image surface; // 1ch {0,1}
    std::vector<Image> vis;  // one per light, 1ch {0,1}
};

CameraMaps gt_camera_maps(const Dataset &ds, int ci);

// Step B: S* = (max(N.L, 0) V)^gamma per pixel; 0 off-surface.
Image pseudo_shading(const Image &normal, const Image &point, const Image &surface,
                     const Image &vis, const Vec3 &light_pos, double gamma);

struct Candidate {
    Vec3 rgb;       // linear
    double weight;  // the contributing light's S* (gamma domain)
};
using CandidateList = std::vector<Candidate>;

// Step C, first half: R = I / S per light wherever S* clears tau_direct.
// Candidates are linear, clamped to [0, 2]; weight = S*.
std::vector<CandidateList> reflectance_candidates(const std::vector<Image> &images_linear,
                                                  const std::vector<Image> &s_stars,
                                                  double tau_direct, double gamma);

// Weighted k-means over one pixel's candidates; near-identical candidates are
// aggregated first. Returns the weighted mean of the heaviest cluster, ties
// broken toward the lower-luminance cluster.
Vec3 merge_pixel(const CandidateList &cands, const PseudoParams &params, uint64_t pixel_seed);

std::pair<Image, Image> merge_reflectance(const std::vector<CandidateList> &cands, int width,
                                          int height, const PseudoParams &params);

// Step C, second half: similarity-weighted fill of surface pixels that were
// never directly lit. reference_linear supplies the chroma term.
Image fill_voids(const Image &merged, const Image &valid_mask, const Image &surface,
                 const Image &normal, const Image &reference_linear, const PseudoParams &params);

// Confidence maps from visibility-edge distance and pseudo-shading strength.
std::pair<Image, Image> weight_maps(const Image &s_star, const Image &vis,
                                    const PseudoParams &params);

// Chamfer distance transform (px) to the 4-connected transition pixels of a
// binary map. No transitions -> +inf everywhere.
Image visibility_edge_distance(const Image &vis);

using CameraMapsProvider = std::function<CameraMaps(int camera_index)>;

PseudoSet make_pseudo(const Dataset &ds, const PseudoParams &params,
                      const CameraMapsProvider &maps, const std::string &source);

// Layout: <dir>/c{ci}_l{li}/{rstar.pfm, sstar.pfm, wr.pfm, ws.pfm, mask.png}
// plus meta.json.
void save_pseudo(const PseudoSet &ps, const std::string &dir);
PseudoSet load_pseudo(const std::string &dir);

}  // namespace ifield
