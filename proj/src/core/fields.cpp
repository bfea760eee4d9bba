// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include "fields.hpp"

#include <algorithm>
#include <cmath>

namespace ifield {

using nn::MlpCache;
using nn::MlpSpec;

nn::MlpSpec geometry_spec(const EncodingConfig &enc) {
    MlpSpec s;
    s.input_dim = enc.x_dim();
    s.output_dim = 1 + enc.feat_dim;
    s.hidden_width = 64;
    s.hidden_layers = 4;
    s.activation = nn::Activation::kSoftplus;  // twice differentiable for curvature
    s.output_activation = nn::OutputActivation::kNone;
    return s;
}

nn::MlpSpec color_spec(const EncodingConfig &enc) {
    MlpSpec s;
    s.input_dim = enc.x_dim() + enc.d_dim() + enc.l_dim() + enc.feat_dim;
    s.output_dim = 3;
    s.hidden_width = 64;
    s.hidden_layers = 3;
    s.activation = nn::Activation::kRelu;
    s.output_activation = nn::OutputActivation::kSigmoid;
    return s;
}

nn::MlpSpec reflectance_spec(const EncodingConfig &enc) {
    MlpSpec s = color_spec(enc);
    s.input_dim = enc.x_dim() + enc.feat_dim;
    return s;
}

nn::MlpSpec shading_spec(const EncodingConfig &enc) {
    MlpSpec s = color_spec(enc);
    s.input_dim = enc.x_dim() + enc.l_dim() + enc.feat_dim;
    s.output_dim = 1;
    s.output_activation = nn::OutputActivation::kSoftplus;
    return s;
}

FieldSet FieldSet::make(const EncodingConfig &enc, const SceneBounds &bounds, double gamma,
                        uint64_t seed) {
    FieldSet fs;
    fs.enc = enc;
    fs.bounds = bounds;
    fs.gamma = gamma;
    fs.geometry = nn::Mlp<double>(geometry_spec(enc));
    fs.color = nn::Mlp<double>(color_spec(enc));
    fs.reflectance = nn::Mlp<double>(reflectance_spec(enc));
    fs.shading = nn::Mlp<double>(shading_spec(enc));
    fs.geometry.init_params(seed * 4 + 1);
    fs.color.init_params(seed * 4 + 2);
    fs.reflectance.init_params(seed * 4 + 3);
    fs.shading.init_params(seed * 4 + 4);
    return fs;
}

// --------------------------------------------------------------------------
// Encoding helpers

namespace {

inline Vec3 to_frame(const FieldSet &fs, const Vec3 &x) {
    return (x - fs.bounds.center) / fs.bounds.radius;
}

}  // namespace

namespace fieldenc {

void encode_position_row(const FieldSet &fs, const Vec3 &x_world, double *out) {
    Vec3 u = to_frame(fs, x_world);
    double ub[3] = {u.x, u.y, u.z};
    nn::positional_encode(ub, 3, fs.enc.x_freq, fs.enc.include_input, out);
}

void encode_dir_row(const FieldSet &fs, const Vec3 &d, double *out) {
    double db[3] = {d.x, d.y, d.z};
    nn::positional_encode(db, 3, fs.enc.d_freq, fs.enc.include_input, out);
}

void encode_light_row(const FieldSet &fs, const Vec3 &l_world, double *out) {
    Vec3 u = to_frame(fs, l_world);
    double ub[3] = {u.x, u.y, u.z};
    nn::positional_encode(ub, 3, fs.enc.l_freq, fs.enc.include_input, out);
}

MatXd encode_positions(const FieldSet &fs, const MatXd &x_world) {
    MatXd enc(x_world.rows(), fs.enc.x_dim());
    for (Eigen::Index i = 0; i < x_world.rows(); ++i)
        encode_position_row(fs, {x_world(i, 0), x_world(i, 1), x_world(i, 2)},
                            enc.data() + i * enc.cols());
    return enc;
}

}  // namespace fieldenc

void geometry_forward(const FieldSet &fs, const MatXd &x_world, VecXd &sdf, MatXd &feat,
                      MlpCache<double> *cache, MatXd *enc_out) {
    MatXd enc = fieldenc::encode_positions(fs, x_world);
    MatXd out = fs.geometry.forward(enc, cache);
    sdf = out.col(0) * fs.bounds.radius;
    feat = out.rightCols(fs.enc.feat_dim);
    if (enc_out) *enc_out = std::move(enc);
}

GeometryEval geometry_eval(const FieldSet &fs, const Vec3 &x) {
    MatXd xm(1, 3);
    xm << x.x, x.y, x.z;
    VecXd sdf;
    MatXd feat;
    MlpCache<double> cache;
    geometry_forward(fs, xm, sdf, feat, &cache);
    MatXd g_enc = fs.geometry.input_gradient(cache, 0);
    GeometryEval out;
    out.sdf = sdf[0];
    out.feat = feat.row(0).transpose();
    Vec3 u = to_frame(fs, x);
    double ub[3] = {u.x, u.y, u.z};
    double gx[3] = {0, 0, 0};
    nn::positional_encode_pullback(ub, 3, fs.enc.x_freq, fs.enc.include_input, g_enc.data(), gx);
    out.grad = {gx[0], gx[1], gx[2]};  // d(sdf_u)/du == world gradient
    return out;
}

HeadsEval heads_eval(const FieldSet &fs, const Vec3 &x, const Vec3 &d, const Vec3 &l,
                     const VecXd &feat) {
    const EncodingConfig &e = fs.enc;
    MatXd cin(1, fs.color.spec.input_dim);
    fieldenc::encode_position_row(fs, x, cin.data());
    fieldenc::encode_dir_row(fs, d, cin.data() + e.x_dim());
    fieldenc::encode_light_row(fs, l, cin.data() + e.x_dim() + e.d_dim());
    cin.block(0, e.x_dim() + e.d_dim() + e.l_dim(), 1, e.feat_dim) = feat.transpose();

    MatXd rin(1, fs.reflectance.spec.input_dim);
    rin.leftCols(e.x_dim()) = cin.leftCols(e.x_dim());
    rin.rightCols(e.feat_dim) = feat.transpose();

    MatXd sin_(1, fs.shading.spec.input_dim);
    sin_.leftCols(e.x_dim()) = cin.leftCols(e.x_dim());
    sin_.block(0, e.x_dim(), 1, e.l_dim()) = cin.block(0, e.x_dim() + e.d_dim(), 1, e.l_dim());
    sin_.rightCols(e.feat_dim) = feat.transpose();

    MatXd c = fs.color.forward(cin);
    MatXd r = fs.reflectance.forward(rin);
    MatXd s = fs.shading.forward(sin_);
    HeadsEval out;
    out.color = {c(0, 0), c(0, 1), c(0, 2)};
    out.reflectance = {r(0, 0), r(0, 1), r(0, 2)};
    out.shading = s(0, 0);
    return out;
}

double eikonal_loss(const FieldSet &fs, std::span<const Vec3> points) {
    if (points.empty()) throw InvalidArgument("eikonal_loss: no sample points");
    double total = 0;
    for (const Vec3 &p : points) {
        GeometryEval ge = geometry_eval(fs, p);
        double n = length(ge.grad);
        total += (n - 1) * (n - 1);
    }
    return total / static_cast<double>(points.size());
}

double curvature_loss(const FieldSet &fs, std::span<const Vec3> points, double h) {
    if (!(h > 0)) throw InvalidArgument("curvature_loss: h must be > 0");
    if (points.empty()) throw InvalidArgument("curvature_loss: no sample points");
    const Eigen::Index n = static_cast<Eigen::Index>(points.size());
    MatXd x(7 * n, 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec3 &p = points[i];
        x.row(7 * i) << p.x, p.y, p.z;
        int r = 1;
        for (int a = 0; a < 3; ++a) {
            Vec3 hi = p, lo = p;
            hi[a] += h;
            lo[a] -= h;
            x.row(7 * i + r++) << hi.x, hi.y, hi.z;
            x.row(7 * i + r++) << lo.x, lo.y, lo.z;
        }
    }
    VecXd sdf;
    MatXd feat;
    geometry_forward(fs, x, sdf, feat);
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double lap = 0;
        for (int a = 0; a < 3; ++a)
            lap += sdf[7 * i + 1 + 2 * a] + sdf[7 * i + 2 + 2 * a] - 2 * sdf[7 * i];
        total += std::abs(lap) / (h * h);
    }
    return total / static_cast<double>(n);
}

// --------------------------------------------------------------------------
// Sphere init

void sphere_init_geometry(FieldSet &fs, const Vec3 &center_world, double radius_world,
                          uint64_t seed, int iterations) {
    Vec3 u0 = to_frame(fs, center_world);
    double r_u = radius_world / fs.bounds.radius;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.2, 1.2);
    nn::AdamW opt;
    opt.lr = 3e-3;
    opt.weight_decay = 0;
    const int batch = 512;
    MatXd enc(batch, fs.enc.x_dim());
    for (int it = 0; it < iterations; ++it) {
        MatXd u(batch, 3);
        for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = dist(rng);
        for (int i = 0; i < batch; ++i) {
            double ub[3] = {u(i, 0), u(i, 1), u(i, 2)};
            nn::positional_encode(ub, 3, fs.enc.x_freq, fs.enc.include_input,
                                  enc.data() + static_cast<size_t>(i) * enc.cols());
        }
        MlpCache<double> cache;
        MatXd out = fs.geometry.forward(enc, &cache);
        MatXd upstream = MatXd::Zero(batch, out.cols());
        for (int i = 0; i < batch; ++i) {
            Vec3 du{u(i, 0) - u0.x, u(i, 1) - u0.y, u(i, 2) - u0.z};
            double target = length(du) - r_u;
            upstream(i, 0) = 2.0 * (out(i, 0) - target) / batch;
        }
        VecXd grad = VecXd::Zero(fs.geometry.params.size());
        fs.geometry.backward(cache, upstream, grad);
        opt.update(fs.geometry.params, grad);
    }
}

// --------------------------------------------------------------------------
// Tracing

FieldTracer::FieldTracer(const FieldSet &fs, const TraceParams &params)
    : fs_(fs), params_(params), mirror_(nn::cast_mlp<float>(fs.geometry)) {}

void FieldTracer::refresh() { mirror_.params = fs_.geometry.params.cast<float>(); }

namespace {

// Entry/exit of the bounds sphere, clamped to [0, t_max]. Returns false when
// the ray never enters.
bool bounds_span(const SceneBounds &b, const Ray &ray, double t_max, double &t0, double &t1) {
    Vec3 oc = ray.origin - b.center;
    double bb = dot(oc, ray.direction);
    double c = dot(oc, oc) - b.radius * b.radius;
    double disc = bb * bb - c;
    if (disc <= 0) return false;
    double s = std::sqrt(disc);
    t0 = std::max(0.0, -bb - s);
    t1 = std::min(t_max, -bb + s);
    return t1 > t0;
}

}  // namespace

std::vector<FieldHit> FieldTracer::trace(std::span<const Ray> rays) const {
    const int n = static_cast<int>(rays.size());
    std::vector<FieldHit> out(n);
    std::vector<double> t(n), t_exit(n);
    std::vector<int> active;
    active.reserve(n);
    for (int i = 0; i < n; ++i) {
        double t0, t1;
        if (bounds_span(fs_.bounds, rays[i], params_.t_max, t0, t1)) {
            t[i] = t0;
            t_exit[i] = t1;
            active.push_back(i);
        }
    }
    const int enc_dim = fs_.enc.x_dim();
    const float inv_r = static_cast<float>(1.0 / fs_.bounds.radius);
    nn::MatX<float> enc;
    for (int step = 0; step < params_.max_steps && !active.empty(); ++step) {
        const int m = static_cast<int>(active.size());
        enc.resize(m, enc_dim);
        for (int k = 0; k < m; ++k) {
            const Ray &r = rays[active[k]];
            Vec3 p = r.origin + r.direction * t[active[k]];
            Vec3 u = (p - fs_.bounds.center);
            double ub[3] = {u.x * inv_r, u.y * inv_r, u.z * inv_r};
            nn::positional_encode(ub, 3, fs_.enc.x_freq, fs_.enc.include_input,
                                  enc.data() + static_cast<size_t>(k) * enc_dim);
        }
        nn::MatX<float> y = mirror_.forward(enc);
        std::vector<int> still;
        still.reserve(m);
        for (int k = 0; k < m; ++k) {
            int i = active[k];
            double f = static_cast<double>(y(k, 0)) * fs_.bounds.radius;
            if (f < out[i].f_min) {
                out[i].f_min = f;
                out[i].min_point = rays[i].origin + rays[i].direction * t[i];
            }
            if (f < params_.eps_hit) {
                out[i].hit = true;
                out[i].t = t[i];
                out[i].point = rays[i].origin + rays[i].direction * t[i];
                continue;
            }
            t[i] += 0.9 * f;
            if (t[i] > t_exit[i]) continue;
            still.push_back(i);
        }
        active.swap(still);
    }
    return out;
}

VecXd FieldTracer::grad_dot_dir(const MatXd &points, const MatXd &dirs) const {
    const Eigen::Index n = points.rows();
    nn::MatX<float> enc(n, fs_.enc.x_dim());
    const double inv_r = 1.0 / fs_.bounds.radius;
    for (Eigen::Index i = 0; i < n; ++i) {
        double ub[3] = {(points(i, 0) - fs_.bounds.center.x) * inv_r,
                        (points(i, 1) - fs_.bounds.center.y) * inv_r,
                        (points(i, 2) - fs_.bounds.center.z) * inv_r};
        nn::positional_encode(ub, 3, fs_.enc.x_freq, fs_.enc.include_input,
                              enc.data() + static_cast<size_t>(i) * enc.cols());
    }
    nn::MlpCache<float> cache;
    mirror_.forward(enc, &cache);
    nn::MatX<float> g_enc = mirror_.input_gradient(cache, 0);
    VecXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double ub[3] = {(points(i, 0) - fs_.bounds.center.x) * inv_r,
                        (points(i, 1) - fs_.bounds.center.y) * inv_r,
                        (points(i, 2) - fs_.bounds.center.z) * inv_r};
        Eigen::Matrix<double, Eigen::Dynamic, 1> row =
            g_enc.row(i).transpose().cast<double>();
        double gx[3] = {0, 0, 0};
        nn::positional_encode_pullback(ub, 3, fs_.enc.x_freq, fs_.enc.include_input, row.data(),
                                       gx);
        out[i] = gx[0] * dirs(i, 0) + gx[1] * dirs(i, 1) + gx[2] * dirs(i, 2);
    }
    return out;
}

Vec3 FieldTracer::refine(const Ray &ray, double t, int steps) const {
    for (int k = 0; k < steps; ++k) {
        Vec3 p = ray.origin + ray.direction * t;
        GeometryEval ge = geometry_eval(fs_, p);
        double denom = dot(ge.grad, ray.direction);
        if (std::abs(denom) < 0.1) denom = denom < 0 ? -0.1 : 0.1;
        t -= ge.sdf / denom;
    }
    return ray.origin + ray.direction * t;
}

CameraMaps field_camera_maps(const FieldSet &fs, const Camera &cam,
                             std::span<const PointLight> lights, const TraceParams &params) {
    const int w = cam.width, h = cam.height;
    CameraMaps maps;
    maps.point = Image(w, h, 3);
    maps.normal = Image(w, h, 3);
    maps.surface = Image(w, h, 1);

    FieldTracer tracer(fs, params);
    std::vector<Ray> rays;
    rays.reserve(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) rays.push_back(camera_ray(cam, x, y));
    std::vector<FieldHit> hits = tracer.trace(rays);

    std::vector<Vec3> points(hits.size()), normals(hits.size());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            if (!hits[i].hit) continue;
            Vec3 p = tracer.refine(rays[i], hits[i].t);
            GeometryEval ge = geometry_eval(fs, p);
            double glen = length(ge.grad);
            Vec3 n = glen > 1e-8 ? ge.grad / glen : Vec3{0, 0, 1};
            if (dot(n, rays[i].direction) > 0) n = -n;
            points[i] = p;
            normals[i] = n;
            maps.surface.at(x, y) = 1;
            maps.point.set_rgb(x, y, p);
            maps.normal.set_rgb(x, y, n);
        }
    }

    for (const PointLight &light : lights) {
        Image vis(w, h, 1);
        std::vector<Ray> shadow;
        std::vector<size_t> shadow_idx;
        std::vector<double> max_t;
        for (size_t i = 0; i < hits.size(); ++i) {
            if (!hits[i].hit) continue;
            Vec3 p32 = maps.point.rgb(static_cast<int>(i % w), static_cast<int>(i / w));
            Vec3 n = normals[i];
            Vec3 to_light = light.position - p32;
            double dist = length(to_light);
            Vec3 dir = to_light / dist;
            if (dot(n, dir) <= 0) continue;  // backfacing: stays 0
            shadow.push_back(Ray{p32 + n * (4.0 * params.eps_hit), dir});
            shadow_idx.push_back(i);
            max_t.push_back(dist);
        }
        std::vector<FieldHit> sh = tracer.trace(shadow);
        for (size_t k = 0; k < shadow.size(); ++k) {
            bool blocked = sh[k].hit && sh[k].t < max_t[k];
            if (!blocked)
                vis.at(static_cast<int>(shadow_idx[k] % w), static_cast<int>(shadow_idx[k] / w)) = 1;
        }
        maps.vis.push_back(std::move(vis));
    }
    return maps;
}

RenderWhat render_what_from(const std::string &name) {
    if (name == "rgb") return RenderWhat::kRgb;
    if (name == "reflectance") return RenderWhat::kReflectance;
    if (name == "shading") return RenderWhat::kShading;
    if (name == "residual") return RenderWhat::kResidual;
    throw InvalidArgument("unknown render target '" + name + "'");
}

Image relight(const FieldSet &fs, const Camera &cam, const Vec3 &light_pos, RenderWhat what,
              const TraceParams &params, Image *mask) {
    const int w = cam.width, h = cam.height;
    const int channels = what == RenderWhat::kShading ? 1 : 3;
    Image out(w, h, channels, ColorSpace::kGamma);
    if (mask) *mask = Image(w, h, 1);

    FieldTracer tracer(fs, params);
    std::vector<Ray> rays;
    rays.reserve(static_cast<size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) rays.push_back(camera_ray(cam, x, y));
    std::vector<FieldHit> hits = tracer.trace(rays);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            size_t i = static_cast<size_t>(y) * w + x;
            if (!hits[i].hit) continue;
            Vec3 p = tracer.refine(rays[i], hits[i].t);
            GeometryEval ge = geometry_eval(fs, p);
            HeadsEval he = heads_eval(fs, p, rays[i].direction, light_pos, ge.feat);
            if (mask) mask->at(x, y) = 1;
            switch (what) {
                case RenderWhat::kRgb: out.set_rgb(x, y, he.color); break;
                case RenderWhat::kReflectance: out.set_rgb(x, y, he.reflectance); break;
                case RenderWhat::kShading: out.at(x, y) = static_cast<float>(he.shading); break;
                case RenderWhat::kResidual:
                    out.set_rgb(x, y, he.color - he.reflectance * he.shading);
                    break;
            }
        }
    }
    return out;
}

double intrinsic_loss(const MatXd &r_hat, const VecXd &s_hat, const MatXd &r_star,
                      const VecXd &s_star, const VecXd &w_r, const VecXd &w_s) {
    if (r_hat.rows() != r_star.rows() || s_hat.size() != s_star.size() ||
        w_r.size() != r_hat.rows() || w_s.size() != s_hat.size())
        throw InvalidArgument("intrinsic_loss: shape mismatch");
    double total = 0;
    for (Eigen::Index i = 0; i < r_hat.rows(); ++i) {
        double lr = 0;
        for (int c = 0; c < 3; ++c) lr += std::abs(r_hat(i, c) - r_star(i, c));
        total += w_r[i] * lr + w_s[i] * std::abs(s_hat[i] - s_star[i]);
    }
    return total / static_cast<double>(r_hat.rows());
}

}  // namespace ifield
