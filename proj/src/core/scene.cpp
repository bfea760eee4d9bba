// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include "scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace ifield {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string &path, const std::string &msg) {
    throw InvalidArgument(path + ": " + msg);
}

void reject_unknown_keys(const json &obj, const std::string &path,
                         const std::set<std::string> &allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key()))
            throw ParseError(path + ": unknown key '" + it.key() + "'");
    }
}

Vec3 parse_vec3(const json &j, const std::string &path) {
    if (!j.is_array() || j.size() != 3) fail(path, "expected an array of 3 numbers");
    Vec3 v{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
    if (!is_finite(v)) fail(path, "components must be finite");
    return v;
}

void check_unit_rgb(const Vec3 &c, const std::string &path, const char *name) {
    if (c.x < 0 || c.x > 1 || c.y < 0 || c.y > 1 || c.z < 0 || c.z > 1)
        fail(path, std::string(name) + " out of range [0,1]");
}

Primitive parse_primitive(const json &j, const std::string &path) {
    reject_unknown_keys(j, path,
                        {"kind", "center", "radius", "extents", "normal", "offset", "material"});
    Primitive p;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "sphere") {
        p.kind = PrimitiveKind::kSphere;
        p.center = parse_vec3(j.at("center"), path + "/center");
        p.radius = j.at("radius").get<double>();
        if (!(p.radius > 0)) fail(path + "/radius", "must be > 0");
    } else if (kind == "box") {
        p.kind = PrimitiveKind::kBox;
        p.center = parse_vec3(j.at("center"), path + "/center");
        p.extents = parse_vec3(j.at("extents"), path + "/extents");
        if (!(p.extents.x > 0 && p.extents.y > 0 && p.extents.z > 0))
            fail(path + "/extents", "must be positive");
    } else if (kind == "plane") {
        p.kind = PrimitiveKind::kPlane;
        Vec3 n = parse_vec3(j.at("normal"), path + "/normal");
        double len = length(n);
        if (len < 1e-12) fail(path + "/normal", "must be nonzero");
        p.normal = n / len;
        p.offset = j.at("offset").get<double>();
    } else {
        fail(path + "/kind", "unknown primitive kind '" + kind + "'");
    }
    p.material_id = j.at("material").get<int>();
    return p;
}

Material parse_material(const json &j, const std::string &path) {
    reject_unknown_keys(
        j, path, {"albedo", "specular_strength", "shininess", "checker_albedo", "checker_cell"});
    Material m;
    m.albedo = parse_vec3(j.at("albedo"), path + "/albedo");
    check_unit_rgb(m.albedo, path + "/albedo", "albedo");
    m.specular_strength = j.value("specular_strength", 0.0);
    if (m.specular_strength < 0) fail(path + "/specular_strength", "must be >= 0");
    m.shininess = j.value("shininess", 1.0);
    if (m.shininess < 1) fail(path + "/shininess", "must be >= 1");
    if (j.contains("checker_albedo")) {
        Vec3 c = parse_vec3(j.at("checker_albedo"), path + "/checker_albedo");
        check_unit_rgb(c, path + "/checker_albedo", "checker_albedo");
        m.checker_albedo = c;
    }
    m.checker_cell = j.value("checker_cell", 0.0);
    if (m.checker_cell < 0) fail(path + "/checker_cell", "must be >= 0");
    return m;
}

Camera parse_camera(const json &j, const std::string &path) {
    reject_unknown_keys(j, path,
                        {"position", "look_at", "up", "vertical_fov", "width", "height"});
    Camera c;
    c.position = parse_vec3(j.at("position"), path + "/position");
    c.look_at = parse_vec3(j.at("look_at"), path + "/look_at");
    if (j.contains("up")) c.up = parse_vec3(j.at("up"), path + "/up");
    c.vertical_fov = j.at("vertical_fov").get<double>();
    if (!(c.vertical_fov > 0 && c.vertical_fov < M_PI))
        fail(path + "/vertical_fov", "must be in (0, pi) radians");
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    if (c.width < 1 || c.height < 1) fail(path, "width and height must be >= 1");
    return c;
}

PointLight parse_light(const json &j, const std::string &path) {
    reject_unknown_keys(j, path, {"position", "intensity", "color"});
    PointLight l;
    l.position = parse_vec3(j.at("position"), path + "/position");
    l.intensity = j.value("intensity", 1.0);
    if (!(l.intensity > 0)) fail(path + "/intensity", "must be > 0");
    if (j.contains("color")) {
        l.color = parse_vec3(j.at("color"), path + "/color");
        check_unit_rgb(l.color, path + "/color", "color");
    }
    return l;
}

SceneBounds derive_bounds(const Scene &scene) {
    Vec3 center;
    int n = 0;
    double reach = 0;
    for (const auto &p : scene.primitives) {
        if (p.kind == PrimitiveKind::kPlane) continue;
        center += p.center;
        ++n;
    }
    if (n > 0) center = center / n;
    for (const auto &p : scene.primitives) {
        if (p.kind == PrimitiveKind::kPlane) continue;
        double r = p.kind == PrimitiveKind::kSphere ? p.radius : length(p.extents);
        reach = std::max(reach, distance(p.center, center) + r);
    }
    SceneBounds b;
    b.center = center;
    b.radius = std::max(2.0, 3.0 * reach);
    return b;
}

}  // namespace

Scene load_scene(const std::string &json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error &e) {
        throw ParseError(std::string("scene config: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("scene config: top level must be an object");
    reject_unknown_keys(
        doc, "", {"primitives", "materials", "cameras", "lights", "background_albedo", "bounds"});

    Scene scene;
    const json &mats = doc.at("materials");
    for (size_t i = 0; i < mats.size(); ++i)
        scene.materials.push_back(parse_material(mats[i], "/materials/" + std::to_string(i)));
    const json &prims = doc.at("primitives");
    for (size_t i = 0; i < prims.size(); ++i)
        scene.primitives.push_back(parse_primitive(prims[i], "/primitives/" + std::to_string(i)));
    const json &cams = doc.at("cameras");
    for (size_t i = 0; i < cams.size(); ++i)
        scene.cameras.push_back(parse_camera(cams[i], "/cameras/" + std::to_string(i)));
    const json &lights = doc.at("lights");
    for (size_t i = 0; i < lights.size(); ++i)
        scene.lights.push_back(parse_light(lights[i], "/lights/" + std::to_string(i)));
    if (doc.contains("background_albedo")) {
        scene.background_albedo = parse_vec3(doc["background_albedo"], "/background_albedo");
        check_unit_rgb(scene.background_albedo, "/background_albedo", "background_albedo");
    }

    if (scene.cameras.empty()) fail("/cameras", "at least one camera required");
    if (scene.lights.empty()) fail("/lights", "at least one light required");
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
        int m = scene.primitives[i].material_id;
        if (m < 0 || m >= static_cast<int>(scene.materials.size()))
            fail("/primitives/" + std::to_string(i) + "/material", "unresolved material index");
    }
    for (size_t i = 1; i < scene.lights.size(); ++i) {
        const auto &a = scene.lights[0], &b = scene.lights[i];
        if (a.intensity != b.intensity || a.color.x != b.color.x || a.color.y != b.color.y ||
            a.color.z != b.color.z)
            fail("/lights/" + std::to_string(i),
                 "light intensity and color must be constant across the scene");
    }

    if (doc.contains("bounds")) {
        const json &b = doc["bounds"];
        reject_unknown_keys(b, "/bounds", {"center", "radius"});
        scene.bounds.center = parse_vec3(b.at("center"), "/bounds/center");
        scene.bounds.radius = b.at("radius").get<double>();
        if (!(scene.bounds.radius > 0)) fail("/bounds/radius", "must be > 0");
    } else {
        scene.bounds = derive_bounds(scene);
    }
    return scene;
}

Scene load_scene_file(const std::string &path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open scene file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return load_scene(ss.str());
}

namespace {
json vec3_json(const Vec3 &v) { return json::array({v.x, v.y, v.z}); }
}  // namespace

std::string serialize_scene(const Scene &scene) {
    json doc;
    doc["materials"] = json::array();
    for (const auto &m : scene.materials) {
        json jm;
        jm["albedo"] = vec3_json(m.albedo);
        jm["specular_strength"] = m.specular_strength;
        jm["shininess"] = m.shininess;
        if (m.checker_albedo) {
            jm["checker_albedo"] = vec3_json(*m.checker_albedo);
            jm["checker_cell"] = m.checker_cell;
        }
        doc["materials"].push_back(jm);
    }
    doc["primitives"] = json::array();
    for (const auto &p : scene.primitives) {
        json jp;
        switch (p.kind) {
            case PrimitiveKind::kSphere:
                jp["kind"] = "sphere";
                jp["center"] = vec3_json(p.center);
                jp["radius"] = p.radius;
                break;
            case PrimitiveKind::kBox:
                jp["kind"] = "box";
                jp["center"] = vec3_json(p.center);
                jp["extents"] = vec3_json(p.extents);
                break;
            case PrimitiveKind::kPlane:
                jp["kind"] = "plane";
                jp["normal"] = vec3_json(p.normal);
                jp["offset"] = p.offset;
                break;
        }
        jp["material"] = p.material_id;
        doc["primitives"].push_back(jp);
    }
    doc["cameras"] = json::array();
    for (const auto &c : scene.cameras) {
        doc["cameras"].push_back({{"position", vec3_json(c.position)},
                                  {"look_at", vec3_json(c.look_at)},
                                  {"up", vec3_json(c.up)},
                                  {"vertical_fov", c.vertical_fov},
                                  {"width", c.width},
                                  {"height", c.height}});
    }
    doc["lights"] = json::array();
    for (const auto &l : scene.lights) {
        doc["lights"].push_back({{"position", vec3_json(l.position)},
                                 {"intensity", l.intensity},
                                 {"color", vec3_json(l.color)}});
    }
    doc["background_albedo"] = vec3_json(scene.background_albedo);
    doc["bounds"] = {{"center", vec3_json(scene.bounds.center)}, {"radius", scene.bounds.radius}};
    return doc.dump(2);
}

uint64_t scene_hash(const Scene &scene) {
    std::string s = serialize_scene(scene);
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

double primitive_sdf(const Primitive &prim, const Vec3 &p) {
    switch (prim.kind) {
        case PrimitiveKind::kSphere:
            return distance(p, prim.center) - prim.radius;
        case PrimitiveKind::kBox: {
            Vec3 q = (p - prim.center).cwise_abs() - prim.extents;
            Vec3 qp = q.cwise_max(0.0);
            double outside = length(qp);
            double inside = std::fmin(q.max_component(), 0.0);
            return outside + inside;
        }
        case PrimitiveKind::kPlane:
            return dot(prim.normal, p) - prim.offset;
    }
    return 0;
}

double sdf_eval(const Scene &scene, const Vec3 &p) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto &prim : scene.primitives) d = std::fmin(d, primitive_sdf(prim, p));
    return d;
}

int primitive_at(const Scene &scene, const Vec3 &p) {
    int best = -1;
    double best_abs = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < scene.primitives.size(); ++i) {
        double a = std::abs(primitive_sdf(scene.primitives[i], p));
        if (a < best_abs) {
            best_abs = a;
            best = static_cast<int>(i);
        }
    }
    if (best < 0 || best_abs > kSurfaceEps)
        throw InvalidArgument("no surface nearby (min |sdf| > eps_surf)");
    return best;
}

const Material &material_at(const Scene &scene, const Vec3 &p) {
    return scene.materials[scene.primitives[primitive_at(scene, p)].material_id];
}

Vec3 albedo_at(const Scene &scene, int primitive_index, const Vec3 &p) {
    const Primitive &prim = scene.primitives[primitive_index];
    const Material &mat = scene.materials[prim.material_id];
    if (!mat.checker_albedo || mat.checker_cell <= 0 || prim.kind != PrimitiveKind::kPlane)
        return mat.albedo;
    // Tangent frame on the plane; cells in plane coordinates.
    Vec3 n = prim.normal;
    Vec3 a = std::abs(n.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 t = normalize(cross(n, a));
    Vec3 b = cross(n, t);
    double u = dot(p, t), v = dot(p, b);
    long iu = static_cast<long>(std::floor(u / mat.checker_cell));
    long iv = static_cast<long>(std::floor(v / mat.checker_cell));
    return ((iu + iv) & 1) ? *mat.checker_albedo : mat.albedo;
}

Ray camera_ray(const Camera &cam, int i, int j, double jx, double jy) {
    if (i < 0 || i >= cam.width || j < 0 || j >= cam.height)
        throw InvalidArgument("pixel out of bounds");
    Vec3 forward = normalize(cam.look_at - cam.position);
    Vec3 right = normalize(cross(forward, cam.up));
    Vec3 up = cross(right, forward);
    double half_h = std::tan(cam.vertical_fov * 0.5);
    double half_w = half_h * static_cast<double>(cam.width) / cam.height;
    double u = ((i + jx) / cam.width) * 2.0 - 1.0;
    double v = 1.0 - ((j + jy) / cam.height) * 2.0;
    Vec3 dir = normalize(forward + right * (u * half_w) + up * (v * half_h));
    return Ray{cam.position, dir};
}

}  // namespace ifield
