// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "scene.hpp"

namespace ifield {

struct TraceParams {
    double t_max = 100;
    double eps_hit = 1e-4;
    int max_steps = 256;
};

struct Hit {
    bool hit = false;
    Vec3 point;
    double depth = 0;
    Vec3 normal;         // unit, oriented against the incoming ray
    Vec3 wo;             // unit, from point toward the ray origin
    int primitive = -1;
    int material_id = -1;
};

// Default eps_hit scale: 1e-4 times the scene bounding radius.
TraceParams default_trace_params(const Scene &scene);

// Marches t += sdf(o + t d). Hit when sdf < eps_hit; miss when t > t_max or
// the step budget runs out. Miss is a valid result.
Hit sphere_trace(const Scene &scene, const Ray &ray, const TraceParams &params);

// Central-difference SDF gradient, normalized. h = 1e-4. Throws on a
// degenerate (|grad| < 1e-8) gradient.
Vec3 surface_normal(const Scene &scene, const Vec3 &p);

// Binary light visibility at surface point p with outward normal n. Shadow ray
// starts at p + 4 eps_hit n; backfacing points (n . L <= 0) are dark.
int light_visibility(const Scene &scene, const Vec3 &p, const Vec3 &n,
                     const Vec3 &light_pos, const TraceParams &params);

}  // namespace ifield
