// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include "tracer.hpp"

#include <cmath>

#include "error.hpp"

namespace ifield {

TraceParams default_trace_params(const Scene &scene) {
    TraceParams p;
    p.eps_hit = 1e-4 * scene.bounds.radius;
    p.t_max = 6.0 * scene.bounds.radius;
    p.max_steps = 256;
    return p;
}

Hit sphere_trace(const Scene &scene, const Ray &ray, const TraceParams &params) {
    Hit out;
    double t = 0;
    for (int step = 0; step < params.max_steps; ++step) {
        Vec3 p = ray.origin + ray.direction * t;
        double d = sdf_eval(scene, p);
        if (d < params.eps_hit) {
            out.hit = true;
            out.point = p;
            out.depth = t;
            out.primitive = primitive_at(scene, p);
            out.material_id = scene.primitives[out.primitive].material_id;
            out.wo = -ray.direction;
            Vec3 n = surface_normal(scene, p);
            if (dot(n, ray.direction) > 0) n = -n;
            out.normal = n;
            return out;
        }
        t += d;
        if (t > params.t_max) break;
    }
    return out;
}

Vec3 surface_normal(const Scene &scene, const Vec3 &p) {
    const double h = 1e-4;
    Vec3 g;
    for (int a = 0; a < 3; ++a) {
        Vec3 hi = p, lo = p;
        hi[a] += h;
        lo[a] -= h;
        g[a] = (sdf_eval(scene, hi) - sdf_eval(scene, lo)) / (2 * h);
    }
    double len = length(g);
    if (len < 1e-8) throw InvalidArgument("singular normal");
    return g / len;
}

int light_visibility(const Scene &scene, const Vec3 &p, const Vec3 &n,
                     const Vec3 &light_pos, const TraceParams &params) {
    Vec3 to_light = light_pos - p;
    double dist = length(to_light);
    Vec3 dir = to_light / dist;
    if (dot(n, dir) <= 0) return 0;
    Vec3 origin = p + n * (4.0 * params.eps_hit);
    TraceParams shadow = params;
    shadow.t_max = dist;
    Hit h = sphere_trace(scene, Ray{origin, dir}, shadow);
    // Occluded only by a hit strictly before the light.
    return (h.hit && h.depth < distance(origin, light_pos)) ? 0 : 1;
}

}  // namespace ifield
