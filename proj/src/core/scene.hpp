// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vec3.hpp"

namespace ifield {

enum class PrimitiveKind : uint8_t { kSphere, kBox, kPlane };

struct Primitive {
    PrimitiveKind kind = PrimitiveKind::kSphere;
    Vec3 center;        // sphere/box
    double radius = 1;  // sphere
    Vec3 extents;       // box half-extents
    Vec3 normal{0, 0, 1};  // plane, unit length
    double offset = 0;     // plane: n.x = offset
    int material_id = 0;
};

struct Material {
    Vec3 albedo{0.5, 0.5, 0.5};  // linear RGB in [0,1]
    double specular_strength = 0;
    double shininess = 1;
    // Optional checkerboard modulation (meaningful on planes).
    std::optional<Vec3> checker_albedo;
    double checker_cell = 0;  // 0 disables
};

struct PointLight {
    Vec3 position;
    double intensity = 1;
    Vec3 color{1, 1, 1};
};

struct Camera {
    Vec3 position;
    Vec3 look_at;
    Vec3 up{0, 0, 1};
    double vertical_fov = 0.7853981633974483;  // radians
    int width = 64;
    int height = 64;
};

struct SceneBounds {
    Vec3 center;
    double radius = 1;
};

struct Scene {
    std::vector<Primitive> primitives;
    std::vector<Material> materials;
    std::vector<Camera> cameras;
    std::vector<PointLight> lights;
    Vec3 background_albedo{0, 0, 0};
    SceneBounds bounds;  // explicit or derived at load time
};

struct Ray {
    Vec3 origin;
    Vec3 direction;  // unit length
};

// JSON document -> Scene. Unknown keys are rejected; invariant violations are
// reported with a JSON-pointer-ish path.
Scene load_scene(const std::string &json_text);
Scene load_scene_file(const std::string &path);
std::string serialize_scene(const Scene &scene);

// FNV-1a over the canonical serialization; stamped into dataset manifests.
uint64_t scene_hash(const Scene &scene);

double primitive_sdf(const Primitive &prim, const Vec3 &p);

// Exact union (min over primitives). Negative inside.
double sdf_eval(const Scene &scene, const Vec3 &p);

constexpr double kSurfaceEps = 1e-3;

// Primitive with the smallest |sdf| at p; ties break to the lowest index.
// Throws if p is farther than kSurfaceEps from every surface.
int primitive_at(const Scene &scene, const Vec3 &p);
const Material &material_at(const Scene &scene, const Vec3 &p);

// Albedo at a surface point, with checkerboard modulation applied when the
// material defines one.
Vec3 albedo_at(const Scene &scene, int primitive_index, const Vec3 &p);

// Pinhole ray through pixel (i, j) offset by jitter in [0,1)^2 (0.5,0.5 is the
// pixel center). i indexes columns, j rows; (0,0) is the top-left pixel.
Ray camera_ray(const Camera &cam, int i, int j, double jx = 0.5, double jy = 0.5);

}  // namespace ifield
