// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include "renderer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <thread>

#include <nlohmann/json.hpp>

#include "error.hpp"

namespace ifield {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Vec3 quantize32(const Vec3 &v) {
    return {static_cast<double>(static_cast<float>(v.x)),
            static_cast<double>(static_cast<float>(v.y)),
            static_cast<double>(static_cast<float>(v.z))};
}

void run_rows(int height, int threads, const std::function<void(int)> &row_fn) {
    if (threads <= 1) {
        for (int y = 0; y < height; ++y) row_fn(y);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (;;) {
            int y = next.fetch_add(1);
            if (y >= height) return;
            row_fn(y);
        }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
}

}  // namespace

double lambert_from_maps(const Vec3 &n, const Vec3 &p, const Vec3 &light_pos, double vis) {
    Vec3 dir = normalize(light_pos - p);
    return std::fmax(dot(n, dir), 0.0) * vis;
}

Vec3 specular_from_maps(const Vec3 &n, const Vec3 &p, const Vec3 &wo_target,
                        const PointLight &light, double ks, double shininess, double vis) {
    if (ks <= 0 || vis <= 0) return {0, 0, 0};
    Vec3 l_dir = normalize(light.position - p);
    Vec3 wo = normalize(wo_target - p);
    Vec3 h = normalize(l_dir + wo);
    double spec = ks * std::pow(std::fmax(dot(n, h), 0.0), shininess) * vis * light.intensity;
    return light.color * spec;
}

std::pair<double, Vec3> shade_pixel(const Scene &scene, const Hit &hit,
                                    const PointLight &light, int vis) {
    if (!hit.hit) throw InvalidArgument("shade_pixel requires a hit");
    const Material &mat = scene.materials[hit.material_id];
    double shading = lambert_from_maps(hit.normal, hit.point, light.position, vis);
    Vec3 residual = specular_from_maps(hit.normal, hit.point, hit.point + hit.wo, light,
                                       mat.specular_strength, mat.shininess, vis);
    return {shading, residual};
}

ViewRecord render_view(const Scene &scene, int camera_index, int light_index,
                       const GenOptions &opts, const TraceParams &trace) {
    const Camera &cam = scene.cameras[camera_index];
    const PointLight &light = scene.lights[light_index];
    const int w = cam.width, h = cam.height;

    ViewRecord view;
    view.camera_index = camera_index;
    view.light_index = light_index;
    view.image_rgb = Image(w, h, 3, ColorSpace::kGamma);
    view.gt_reflectance = Image(w, h, 3);
    view.gt_shading = Image(w, h, 1);
    view.gt_residual = Image(w, h, 3);
    view.depth = Image(w, h, 1);
    view.point = Image(w, h, 3);
    view.normal = Image(w, h, 3);
    view.visibility = Image(w, h, 1);

    auto shade_row = [&](int y) {
        for (int x = 0; x < w; ++x) {
            Ray ray = camera_ray(cam, x, y);
            // Field-based rendering cannot represent geometry outside the
            // scene bounds, so GT uses the same per-ray clip.
            TraceParams per_ray = trace;
            per_ray.t_max = std::min(trace.t_max, [&] {
                Vec3 oc = ray.origin - scene.bounds.center;
                double b = dot(oc, ray.direction);
                double c = dot(oc, oc) - scene.bounds.radius * scene.bounds.radius;
                double disc = b * b - c;
                if (disc <= 0) return 0.0;
                return -b + std::sqrt(disc);
            }());
            Hit hit;
            if (per_ray.t_max > 0) hit = sphere_trace(scene, ray, per_ray);

            Vec3 albedo, n32, p32;
            double shading_lin = 0;
            Vec3 residual{0, 0, 0};
            int vis = 0;
            if (hit.hit) {
                // All GT maps derive from the f32-quantized hit so downstream
                // recomputation from the stored maps reproduces them exactly.
                n32 = quantize32(hit.normal);
                p32 = quantize32(hit.point);
                vis = light_visibility(scene, hit.point, hit.normal, light.position, trace);
                albedo = quantize32(albedo_at(scene, hit.primitive, p32));
                shading_lin = lambert_from_maps(n32, p32, light.position, vis) * light.intensity;
                if (opts.falloff) {
                    double r2 = dot(light.position - p32, light.position - p32);
                    shading_lin /= std::max(r2, 1e-12);
                }
                const Material &mat = scene.materials[hit.material_id];
                residual = specular_from_maps(n32, p32, cam.position, light,
                                              mat.specular_strength, mat.shininess, vis);
                view.depth.at(x, y) = static_cast<float>(hit.depth);
            } else {
                albedo = scene.background_albedo;
                n32 = {0, 0, 1};
                p32 = {0, 0, 0};
            }
            Vec3 lin = albedo * shading_lin + residual;
            Vec3 enc{gamma_apply(lin.x, opts.gamma, GammaDirection::kEncode),
                     gamma_apply(lin.y, opts.gamma, GammaDirection::kEncode),
                     gamma_apply(lin.z, opts.gamma, GammaDirection::kEncode)};
            view.image_rgb.set_rgb(x, y, enc);
            view.gt_reflectance.set_rgb(x, y, albedo);
            view.gt_shading.at(x, y) = static_cast<float>(shading_lin);
            view.gt_residual.set_rgb(x, y, residual);
            view.point.set_rgb(x, y, p32);
            view.normal.set_rgb(x, y, n32);
            view.visibility.at(x, y) = static_cast<float>(vis);
        }
    };
    run_rows(h, opts.threads, shade_row);
    return view;
}

Dataset render_dataset(const Scene &scene, const GenOptions &opts) {
    if (scene.cameras.empty() || scene.lights.empty())
        throw InvalidArgument("render_dataset: scene has no cameras or no lights");
    for (const auto &l : scene.lights)
        if (l.color.x != 1 || l.color.y != 1 || l.color.z != 1)
            throw InvalidArgument(
                "render_dataset: only white light color is supported (scalar GT shading)");

    Dataset ds;
    ds.scene_hash = scene_hash(scene);
    ds.gamma = opts.gamma;
    ds.falloff = opts.falloff;
    ds.trace = default_trace_params(scene);
    ds.bounds = scene.bounds;
    ds.background_albedo = scene.background_albedo;
    ds.cameras = scene.cameras;
    ds.lights = scene.lights;

    const int nc = static_cast<int>(scene.cameras.size());
    const int nl = static_cast<int>(scene.lights.size());
    ds.views.resize(static_cast<size_t>(nc) * nl);
    ds.splits.resize(ds.views.size());
    for (int ci = 0; ci < nc; ++ci) {
        for (int li = 0; li < nl; ++li) {
            int v = ds.view_index(ci, li);
            ds.views[v] = render_view(scene, ci, li, opts, ds.trace);
            ds.splits[v] = (v % 8 == 7) ? Split::kTest : (v % 8 == 3 ? Split::kVal : Split::kTrain);
        }
    }
    return ds;
}

const char *split_name(Split s) {
    switch (s) {
        case Split::kTrain: return "train";
        case Split::kVal: return "val";
        case Split::kTest: return "test";
    }
    return "train";
}

namespace {

Split split_from_name(const std::string &s) {
    if (s == "train") return Split::kTrain;
    if (s == "val") return Split::kVal;
    if (s == "test") return Split::kTest;
    throw ParseError("unknown split tag '" + s + "'");
}

json vec3_json(const Vec3 &v) { return json::array({v.x, v.y, v.z}); }
Vec3 vec3_from(const json &j) { return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()}; }

std::string view_dir_name(int ci, int li) {
    return "c" + std::to_string(ci) + "_l" + std::to_string(li);
}

}  // namespace

void save_dataset(const Dataset &ds, const std::string &dir) {
    fs::create_directories(fs::path(dir) / "views");
    json manifest;
    char hex[32];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(ds.scene_hash));
    manifest["scene_hash"] = hex;
    manifest["gamma"] = ds.gamma;
    manifest["falloff"] = ds.falloff;
    manifest["trace"] = {{"t_max", ds.trace.t_max},
                         {"eps_hit", ds.trace.eps_hit},
                         {"max_steps", ds.trace.max_steps}};
    manifest["bounds"] = {{"center", vec3_json(ds.bounds.center)}, {"radius", ds.bounds.radius}};
    manifest["background_albedo"] = vec3_json(ds.background_albedo);
    manifest["cameras"] = json::array();
    for (const auto &c : ds.cameras)
        manifest["cameras"].push_back({{"position", vec3_json(c.position)},
                                       {"look_at", vec3_json(c.look_at)},
                                       {"up", vec3_json(c.up)},
                                       {"vertical_fov", c.vertical_fov},
                                       {"width", c.width},
                                       {"height", c.height}});
    manifest["lights"] = json::array();
    for (const auto &l : ds.lights)
        manifest["lights"].push_back({{"position", vec3_json(l.position)},
                                      {"intensity", l.intensity},
                                      {"color", vec3_json(l.color)}});
    manifest["conventions"] = {
        {"shading", "scalar, exported gamma-encoded, light intensity folded in"},
        {"reflectance", "exported gamma-encoded"},
        {"residual", "linear"},
        {"depth", "0 marks background"},
        {"point", "f32 surface positions backing the shading maps"}};
    manifest["views"] = json::array();
    for (size_t v = 0; v < ds.views.size(); ++v) {
        const auto &view = ds.views[v];
        manifest["views"].push_back({{"camera", view.camera_index},
                                     {"light", view.light_index},
                                     {"split", split_name(ds.splits[v])},
                                     {"dir", view_dir_name(view.camera_index, view.light_index)}});
    }
    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("cannot write manifest in " + dir);
    mf << manifest.dump(2) << "\n";

    for (const auto &view : ds.views) {
        fs::path vd = fs::path(dir) / "views" / view_dir_name(view.camera_index, view.light_index);
        fs::create_directories(vd);
        write_png((vd / "rgb.png").string(), view.image_rgb);
        write_pfm((vd / "refl.pfm").string(),
                  gamma_map(view.gt_reflectance, ds.gamma, GammaDirection::kEncode));
        write_pfm((vd / "shad.pfm").string(),
                  gamma_map(view.gt_shading, ds.gamma, GammaDirection::kEncode));
        write_pfm((vd / "resid.pfm").string(), view.gt_residual);
        write_pfm((vd / "depth.pfm").string(), view.depth);
        write_pfm((vd / "point.pfm").string(), view.point);
        write_pfm((vd / "normal.pfm").string(), view.normal);
        write_pfm((vd / "vis.pfm").string(), view.visibility);
        // rgb is stored losslessly as well; the png is an 8-bit preview
        write_pfm((vd / "rgb.pfm").string(), view.image_rgb);
    }
}

Dataset load_dataset(const std::string &dir) {
    fs::path root(dir);
    std::ifstream mf(root / "manifest.json");
    if (!mf) throw MissingArtifact("no dataset manifest at " + dir + "/manifest.json");
    json manifest;
    try {
        mf >> manifest;
    } catch (const json::parse_error &e) {
        throw ParseError(std::string("manifest.json: ") + e.what());
    }

    Dataset ds;
    ds.scene_hash = std::stoull(manifest.at("scene_hash").get<std::string>(), nullptr, 16);
    ds.gamma = manifest.at("gamma").get<double>();
    ds.falloff = manifest.at("falloff").get<bool>();
    ds.trace.t_max = manifest.at("trace").at("t_max").get<double>();
    ds.trace.eps_hit = manifest.at("trace").at("eps_hit").get<double>();
    ds.trace.max_steps = manifest.at("trace").at("max_steps").get<int>();
    ds.bounds.center = vec3_from(manifest.at("bounds").at("center"));
    ds.bounds.radius = manifest.at("bounds").at("radius").get<double>();
    ds.background_albedo = vec3_from(manifest.at("background_albedo"));
    for (const auto &jc : manifest.at("cameras")) {
        Camera c;
        c.position = vec3_from(jc.at("position"));
        c.look_at = vec3_from(jc.at("look_at"));
        c.up = vec3_from(jc.at("up"));
        c.vertical_fov = jc.at("vertical_fov").get<double>();
        c.width = jc.at("width").get<int>();
        c.height = jc.at("height").get<int>();
        ds.cameras.push_back(c);
    }
    for (const auto &jl : manifest.at("lights")) {
        PointLight l;
        l.position = vec3_from(jl.at("position"));
        l.intensity = jl.at("intensity").get<double>();
        l.color = vec3_from(jl.at("color"));
        ds.lights.push_back(l);
    }

    ds.views.resize(manifest.at("views").size());
    ds.splits.resize(ds.views.size());
    for (const auto &jv : manifest.at("views")) {
        int ci = jv.at("camera").get<int>();
        int li = jv.at("light").get<int>();
        int v = ds.view_index(ci, li);
        fs::path vd = root / "views" / jv.at("dir").get<std::string>();
        ViewRecord view;
        view.camera_index = ci;
        view.light_index = li;
        view.image_rgb = read_pfm((vd / "rgb.pfm").string());
        view.image_rgb.color_space = ColorSpace::kGamma;
        view.gt_reflectance =
            gamma_map(read_pfm((vd / "refl.pfm").string()), ds.gamma, GammaDirection::kDecode);
        view.gt_shading =
            gamma_map(read_pfm((vd / "shad.pfm").string()), ds.gamma, GammaDirection::kDecode);
        view.gt_residual = read_pfm((vd / "resid.pfm").string());
        view.depth = read_pfm((vd / "depth.pfm").string());
        view.point = read_pfm((vd / "point.pfm").string());
        view.normal = read_pfm((vd / "normal.pfm").string());
        view.visibility = read_pfm((vd / "vis.pfm").string());
        ds.views[v] = std::move(view);
        ds.splits[v] = split_from_name(jv.at("split").get<std::string>());
    }
    return ds;
}

}  // namespace ifield
