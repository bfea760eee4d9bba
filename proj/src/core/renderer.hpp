// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "image.hpp"
#include "scene.hpp"
#include "tracer.hpp"

namespace ifield {

enum class Split : uint8_t { kTrain, kVal, kTest };

// One (camera, light) view. image_rgb is gamma-encoded; all GT maps are kept
// linear in memory (reflectance/shading are gamma-encoded at export time).
// depth = 0 marks background pixels; their normal is the upward virtual plane.
struct ViewRecord {
    int camera_index = 0;
    int light_index = 0;
    Image image_rgb;       // 3ch gamma
    Image gt_reflectance;  // 3ch linear albedo
    Image gt_shading;      // 1ch linear
    Image gt_residual;     // 3ch linear
    Image depth;           // 1ch, 0 = miss
    Image point;           // 3ch surface points (f32-quantized hit positions)
    Image normal;          // 3ch
    Image visibility;      // 1ch in {0,1}
};

struct Dataset {
    uint64_t scene_hash = 0;
    double gamma = kDefaultGamma;
    bool falloff = false;
    TraceParams trace;
    SceneBounds bounds;
    Vec3 background_albedo;
    std::vector<Camera> cameras;
    std::vector<PointLight> lights;
    std::vector<ViewRecord> views;  // index = camera_index * lights.size() + light_index
    std::vector<Split> splits;

    int view_index(int ci, int li) const {
        return ci * static_cast<int>(lights.size()) + li;
    }
    const ViewRecord &view(int ci, int li) const { return views[view_index(ci, li)]; }
};

struct GenOptions {
    double gamma = kDefaultGamma;
    bool falloff = false;
    int threads = 1;
};

// Lambert factor max(N.L, 0) * V from stored map values, in double. Both the
// GT renderer and the pseudo-label stage must derive shading through this
// exact function so the two agree bit-for-bit on quantized inputs.
double lambert_from_maps(const Vec3 &n, const Vec3 &p, const Vec3 &light_pos, double vis);

// Blinn-Phong residual term: ks * max(N.H, 0)^shininess * V * intensity * color.
Vec3 specular_from_maps(const Vec3 &n, const Vec3 &p, const Vec3 &wo_target,
                        const PointLight &light, double ks, double shininess, double vis);

// (shading, residual) for a hit under one light; shading has no distance
// falloff and no light intensity folded in.
std::pair<double, Vec3> shade_pixel(const Scene &scene, const Hit &hit,
                                    const PointLight &light, int vis);

ViewRecord render_view(const Scene &scene, int camera_index, int light_index,
                       const GenOptions &opts, const TraceParams &trace);

// Renders every (camera, light) pair. Deterministic; view order is
// (camera-major, light-minor) regardless of thread count.
Dataset render_dataset(const Scene &scene, const GenOptions &opts);

// Directory layout: manifest.json + views/c{ci}_l{li}/{rgb.png, refl.pfm,
// shad.pfm, resid.pfm, depth.pfm, normal.pfm, vis.pfm}. Reflectance and
// shading PFMs are gamma-encoded, as recorded in the manifest.
void save_dataset(const Dataset &ds, const std::string &dir);
Dataset load_dataset(const std::string &dir);

const char *split_name(Split s);

}  // namespace ifield
