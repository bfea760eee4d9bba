// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>

#include "fields.hpp"

namespace ifield {

using nn::InputGradCache;
using nn::MlpCache;

namespace {

constexpr double kMinFrontSlope = 0.05;  // clamp for grad(f).d at hit points

double sgn(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

// Assembles the color-head input block [enc(x), enc(d), enc(l), feat].
MatXd color_input(const FieldSet &fs, const MatXd &x, const MatXd &d, const MatXd &l,
                  const MatXd &feat) {
    const EncodingConfig &e = fs.enc;
    const Eigen::Index n = x.rows();
    MatXd in(n, fs.color.spec.input_dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        double *row = in.data() + static_cast<size_t>(i) * in.cols();
        fieldenc::encode_position_row(fs, {x(i, 0), x(i, 1), x(i, 2)}, row);
        fieldenc::encode_dir_row(fs, {d(i, 0), d(i, 1), d(i, 2)}, row + e.x_dim());
        fieldenc::encode_light_row(fs, {l(i, 0), l(i, 1), l(i, 2)}, row + e.x_dim() + e.d_dim());
    }
    in.rightCols(e.feat_dim) = feat;
    return in;
}

}  // namespace

namespace fieldenc {
void encode_position_row(const FieldSet &fs, const Vec3 &x_world, double *out);
void encode_dir_row(const FieldSet &fs, const Vec3 &d, double *out);
void encode_light_row(const FieldSet &fs, const Vec3 &l_world, double *out);
MatXd encode_positions(const FieldSet &fs, const MatXd &x_world);
}  // namespace fieldenc

Stage1LossParts stage1_objective(const FieldSet &fs, const Stage1Batch &batch,
                                 const Stage1Config &cfg, VecXd *g_geometry, VecXd *g_color) {
    Stage1LossParts parts;
    const double radius = fs.bounds.radius;
    const double q = 1.0 / fs.gamma;  // display -> linear exponent
    const Eigen::Index n_hit = batch.hit_x.rows();
    const Eigen::Index n_miss = batch.miss_x.rows();
    const double denom = std::max<Eigen::Index>(1, n_hit + n_miss);
    if (g_geometry) g_geometry->setZero(fs.geometry.params.size());
    if (g_color) g_color->setZero(fs.color.params.size());

    if (n_hit > 0) {
        MlpCache<double> gc;
        VecXd f0;
        MatXd feat;
        geometry_forward(fs, batch.hit_x, f0, feat, &gc);
        // Differentiable intersection: slide the sample along the ray by the
        // current SDF value so the photometric loss can move the surface.
        MatXd xstar(n_hit, 3);
        for (Eigen::Index i = 0; i < n_hit; ++i) {
            double shift = f0[i] / batch.hit_s0[i];
            for (int a = 0; a < 3; ++a) xstar(i, a) = batch.hit_x(i, a) - batch.hit_d(i, a) * shift;
        }
        MatXd cin = color_input(fs, xstar, batch.hit_d, batch.hit_l, feat);
        MlpCache<double> cc;
        MatXd chat = fs.color.forward(cin, &cc);
        MatXd pred = chat.array().pow(q).matrix();
        MatXd diff = pred - batch.hit_rgb_lin;
        parts.rgb += diff.cwiseAbs().sum();
        if (g_geometry && g_color) {
            MatXd dc = (diff.array().sign() * q * chat.array().pow(q - 1) / denom).matrix();
            MatXd cin_grad = fs.color.backward(cc, dc, *g_color);
            const EncodingConfig &e = fs.enc;
            MatXd gup = MatXd::Zero(n_hit, 1 + e.feat_dim);
            for (Eigen::Index i = 0; i < n_hit; ++i) {
                Vec3 xs{xstar(i, 0), xstar(i, 1), xstar(i, 2)};
                Vec3 u = (xs - fs.bounds.center) / radius;
                double ub[3] = {u.x, u.y, u.z};
                double gx[3] = {0, 0, 0};
                // d(enc input)/du = J; positions normalized, so chain in 1/radius
                Eigen::VectorXd encx = cin_grad.row(i).head(e.x_dim()).transpose();
                nn::positional_encode_pullback(ub, 3, e.x_freq, e.include_input, encx.data(), gx);
                double kappa = 0;  // dL/d(sdf_net) through x*
                for (int a = 0; a < 3; ++a)
                    kappa += gx[a] / radius * (-batch.hit_d(i, a)) * radius / batch.hit_s0[i];
                gup(i, 0) = kappa;
            }
            gup.rightCols(e.feat_dim) = cin_grad.rightCols(e.feat_dim);
            fs.geometry.backward(gc, gup, *g_geometry);
        }
    }

    if (n_miss > 0) {
        MlpCache<double> gc;
        VecXd fm;
        MatXd feat;
        geometry_forward(fs, batch.miss_x, fm, feat, &gc);
        VecXd w(n_miss);
        for (Eigen::Index i = 0; i < n_miss; ++i)
            w[i] = std::exp(-std::max(fm[i], 0.0) / batch.beta);
        MatXd cin = color_input(fs, batch.miss_x, batch.miss_d, batch.miss_l, feat);
        MlpCache<double> cc;
        MatXd chat = fs.color.forward(cin, &cc);
        MatXd dec = chat.array().pow(q).matrix();
        MatXd pred = dec.array().colwise() * w.array();
        MatXd diff = pred - batch.miss_rgb_lin;
        parts.rgb += diff.cwiseAbs().sum();
        if (g_geometry && g_color) {
            MatXd sign = diff.array().sign().matrix();
            MatXd dc =
                (sign.array() * (q * chat.array().pow(q - 1)).colwise() * w.array() / denom)
                    .matrix();
            MatXd cin_grad = fs.color.backward(cc, dc, *g_color);
            const EncodingConfig &e = fs.enc;
            MatXd gup = MatXd::Zero(n_miss, 1 + e.feat_dim);
            for (Eigen::Index i = 0; i < n_miss; ++i) {
                double dw = (sign.row(i).cwiseProduct(dec.row(i))).sum() / denom;
                double df = fm[i] > 0 ? -w[i] / batch.beta : 0.0;
                gup(i, 0) = dw * df * radius;
            }
            gup.rightCols(e.feat_dim) = cin_grad.rightCols(e.feat_dim);
            fs.geometry.backward(gc, gup, *g_geometry);
        }
    }
    parts.rgb /= static_cast<double>(denom);

    if (batch.eik_pts.rows() > 0) {
        const Eigen::Index ne = batch.eik_pts.rows();
        MlpCache<double> gc;
        VecXd sdf;
        MatXd feat;
        geometry_forward(fs, batch.eik_pts, sdf, feat, &gc);
        InputGradCache<double> ig;
        MatXd r0 = fs.geometry.input_gradient(gc, 0, &ig);
        const EncodingConfig &e = fs.enc;
        MatXd v_enc = MatXd::Zero(ne, e.x_dim());
        for (Eigen::Index i = 0; i < ne; ++i) {
            Vec3 u = (Vec3{batch.eik_pts(i, 0), batch.eik_pts(i, 1), batch.eik_pts(i, 2)} -
                      fs.bounds.center) /
                     radius;
            double ub[3] = {u.x, u.y, u.z};
            double gx[3] = {0, 0, 0};
            Eigen::VectorXd row = r0.row(i).transpose();
            nn::positional_encode_pullback(ub, 3, e.x_freq, e.include_input, row.data(), gx);
            double norm = std::sqrt(gx[0] * gx[0] + gx[1] * gx[1] + gx[2] * gx[2]);
            parts.eik += (norm - 1) * (norm - 1);
            if (g_geometry) {
                double coef = cfg.w_eik * 2.0 * (norm - 1) / std::max(norm, 1e-12) /
                              static_cast<double>(ne);
                double dg[3] = {coef * gx[0], coef * gx[1], coef * gx[2]};
                nn::positional_encode_pushforward(ub, 3, e.x_freq, e.include_input, dg,
                                                  v_enc.data() + static_cast<size_t>(i) * e.x_dim());
            }
        }
        parts.eik /= static_cast<double>(ne);
        if (g_geometry) fs.geometry.double_backward(gc, ig, 0, v_enc, *g_geometry);
    }

    if (batch.curv_pts.rows() > 0) {
        const Eigen::Index nc = batch.curv_pts.rows();
        const double h = batch.curv_h;
        MatXd x(7 * nc, 3);
        for (Eigen::Index i = 0; i < nc; ++i) {
            x.row(7 * i) = batch.curv_pts.row(i);
            int r = 1;
            for (int a = 0; a < 3; ++a) {
                Eigen::RowVector3d hi = batch.curv_pts.row(i), lo = batch.curv_pts.row(i);
                hi[a] += h;
                lo[a] -= h;
                x.row(7 * i + r++) = hi;
                x.row(7 * i + r++) = lo;
            }
        }
        MlpCache<double> gc;
        VecXd sdf;
        MatXd feat;
        geometry_forward(fs, x, sdf, feat, &gc);
        MatXd up = MatXd::Zero(7 * nc, 1 + fs.enc.feat_dim);
        for (Eigen::Index i = 0; i < nc; ++i) {
            double lap = 0;
            for (int a = 0; a < 3; ++a)
                lap += sdf[7 * i + 1 + 2 * a] + sdf[7 * i + 2 + 2 * a] - 2 * sdf[7 * i];
            lap /= h * h;
            parts.curv += std::abs(lap);
            if (g_geometry) {
                double coef =
                    cfg.w_curv * sgn(lap) / (h * h) / static_cast<double>(nc) * radius;
                up(7 * i, 0) = -6.0 * coef;
                for (int r = 1; r < 7; ++r) up(7 * i + r, 0) = coef;
            }
        }
        parts.curv /= static_cast<double>(nc);
        if (g_geometry) fs.geometry.backward(gc, up, *g_geometry);
    }

    parts.total = parts.rgb + cfg.w_eik * parts.eik + cfg.w_curv * parts.curv;
    return parts;
}

Stage2LossParts stage2_objective(const FieldSet &fs, const Stage2Batch &batch,
                                 const Stage2Config &cfg, VecXd *g_color, VecXd *g_reflectance,
                                 VecXd *g_shading) {
    Stage2LossParts parts;
    const Eigen::Index n = batch.x.rows();
    if (n == 0) throw InvalidArgument("stage2_objective: empty batch");
    const double q = 1.0 / fs.gamma;
    const EncodingConfig &e = fs.enc;

    MatXd cin = color_input(fs, batch.x, batch.d, batch.l, batch.feat);
    MatXd rin(n, fs.reflectance.spec.input_dim);
    rin.leftCols(e.x_dim()) = cin.leftCols(e.x_dim());
    rin.rightCols(e.feat_dim) = batch.feat;
    MatXd sin_(n, fs.shading.spec.input_dim);
    sin_.leftCols(e.x_dim()) = cin.leftCols(e.x_dim());
    sin_.block(0, e.x_dim(), n, e.l_dim()) = cin.block(0, e.x_dim() + e.d_dim(), n, e.l_dim());
    sin_.rightCols(e.feat_dim) = batch.feat;

    MlpCache<double> cc, rc, sc;
    MatXd chat = fs.color.forward(cin, &cc);
    MatXd rhat = fs.reflectance.forward(rin, &rc);
    MatXd shat = fs.shading.forward(sin_, &sc);

    MatXd pred = chat.array().pow(q).matrix();
    MatXd rgb_diff = pred - batch.rgb_lin;
    parts.rgb = rgb_diff.cwiseAbs().sum() / n;

    // Residual in the display domain: Re = c - R (.) S
    MatXd rs = rhat.array().colwise() * shat.col(0).array();
    MatXd residual = chat - rs;
    parts.reg = residual.cwiseAbs().sum() / n;
    parts.mean_abs_residual = parts.reg / 3.0;
    parts.mean_abs_rs = rs.cwiseAbs().sum() / n / 3.0;

    double li = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double lr = 0;
        for (int c = 0; c < 3; ++c) lr += std::abs(rhat(i, c) - batch.r_star(i, c));
        li += batch.w_r[i] * lr + batch.w_s[i] * std::abs(shat(i, 0) - batch.s_star[i]);
    }
    parts.intrinsic = li / n;

    if (g_color && g_reflectance && g_shading) {
        g_color->setZero(fs.color.params.size());
        g_reflectance->setZero(fs.reflectance.params.size());
        g_shading->setZero(fs.shading.params.size());
        MatXd res_sign = residual.array().sign().matrix();
        MatXd dc = (rgb_diff.array().sign() * q * chat.array().pow(q - 1) / n).matrix() +
                   (cfg.w_reg / n) * res_sign;
        MatXd dr = MatXd::Zero(n, 3);
        MatXd dsh = MatXd::Zero(n, 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (int c = 0; c < 3; ++c) {
                dr(i, c) = cfg.w_intrinsic * batch.w_r[i] * sgn(rhat(i, c) - batch.r_star(i, c)) / n -
                           cfg.w_reg * res_sign(i, c) * shat(i, 0) / n;
                dsh(i, 0) -= cfg.w_reg * res_sign(i, c) * rhat(i, c) / n;
            }
            dsh(i, 0) += cfg.w_intrinsic * batch.w_s[i] * sgn(shat(i, 0) - batch.s_star[i]) / n;
        }
        fs.color.backward(cc, dc, *g_color);
        fs.reflectance.backward(rc, dr, *g_reflectance);
        fs.shading.backward(sc, dsh, *g_shading);
    }

    parts.total = parts.rgb + cfg.w_intrinsic * parts.intrinsic + cfg.w_reg * parts.reg;
    return parts;
}

// --------------------------------------------------------------------------
// Trainers

namespace {

struct ViewCache {
    std::vector<MatXd> rgb_lin;       // per train view, [pixels x 3]
    std::vector<int> train_views;
    std::vector<std::vector<Ray>> rays_per_camera;  // pixel-center rays
};

ViewCache build_view_cache(const Dataset &ds) {
    ViewCache vc;
    for (size_t v = 0; v < ds.views.size(); ++v)
        if (ds.splits[v] == Split::kTrain) vc.train_views.push_back(static_cast<int>(v));
    if (vc.train_views.empty())
        for (size_t v = 0; v < ds.views.size(); ++v) vc.train_views.push_back(static_cast<int>(v));
    vc.rgb_lin.resize(ds.views.size());
    for (int v : vc.train_views) {
        const ViewRecord &view = ds.views[v];
        const Eigen::Index np = static_cast<Eigen::Index>(view.image_rgb.pixel_count());
        MatXd m(np, 3);
        for (Eigen::Index p = 0; p < np; ++p)
            for (int c = 0; c < 3; ++c)
                m(p, c) = gamma_apply(view.image_rgb.data[p * 3 + c], ds.gamma,
                                      GammaDirection::kDecode);
        vc.rgb_lin[v] = std::move(m);
    }
    vc.rays_per_camera.resize(ds.cameras.size());
    for (size_t ci = 0; ci < ds.cameras.size(); ++ci) {
        const Camera &cam = ds.cameras[ci];
        vc.rays_per_camera[ci].reserve(static_cast<size_t>(cam.width) * cam.height);
        for (int y = 0; y < cam.height; ++y)
            for (int x = 0; x < cam.width; ++x)
                vc.rays_per_camera[ci].push_back(camera_ray(cam, x, y));
    }
    return vc;
}

}  // namespace

TrainState train_stage1(const Dataset &ds, const Stage1Config &cfg, const ProgressFn &progress) {
    if (ds.views.empty()) throw InvalidArgument("train_stage1: dataset has no views");
    TrainState st;
    st.stage1 = cfg;
    EncodingConfig enc;
    st.fields = FieldSet::make(enc, ds.bounds, ds.gamma, cfg.seed);
    const double radius = ds.bounds.radius;
    sphere_init_geometry(st.fields, ds.bounds.center, cfg.init_sphere_radius * radius,
                         cfg.seed ^ 0x5eed5eedULL, cfg.init_iterations);

    ViewCache vc = build_view_cache(ds);
    TraceParams tp;
    tp.eps_hit = cfg.trace_eps * radius;
    tp.t_max = ds.trace.t_max;
    tp.max_steps = cfg.trace_max_steps;
    FieldTracer tracer(st.fields, tp);

    st.opt_geometry.lr = cfg.lr;
    st.opt_geometry.weight_decay = cfg.weight_decay;
    st.opt_color = st.opt_geometry;

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    VecXd g_geom, g_color;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        double anneal = cfg.beta_anneal_frac > 0
                            ? std::min(1.0, iter / (cfg.beta_anneal_frac * cfg.iterations))
                            : 1.0;
        double beta = cfg.blend_beta0 * std::pow(cfg.blend_beta1 / cfg.blend_beta0, anneal) * radius;

        // Sample a batch of (view, pixel) pairs and trace the current field.
        std::vector<int> views(cfg.batch_size), pixels(cfg.batch_size);
        std::vector<Ray> rays(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b) {
            int v = vc.train_views[static_cast<size_t>(unit(rng) * vc.train_views.size()) %
                                   vc.train_views.size()];
            const ViewRecord &view = ds.views[v];
            int np = static_cast<int>(view.image_rgb.pixel_count());
            int p = static_cast<int>(unit(rng) * np) % np;
            views[b] = v;
            pixels[b] = p;
            rays[b] = vc.rays_per_camera[view.camera_index][p];
        }
        std::vector<FieldHit> hits = tracer.trace(rays);

        std::vector<int> hit_ids, miss_ids;
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (hits[b].hit)
                hit_ids.push_back(b);
            else if (std::isfinite(hits[b].f_min))
                miss_ids.push_back(b);
        }

        Stage1Batch batch;
        batch.beta = beta;
        batch.curv_h = cfg.curv_h;
        const Eigen::Index nh = static_cast<Eigen::Index>(hit_ids.size());
        const Eigen::Index nm = static_cast<Eigen::Index>(miss_ids.size());
        batch.hit_x.resize(nh, 3);
        batch.hit_d.resize(nh, 3);
        batch.hit_l.resize(nh, 3);
        batch.hit_rgb_lin.resize(nh, 3);
        for (Eigen::Index k = 0; k < nh; ++k) {
            int b = hit_ids[k];
            const FieldHit &fh = hits[b];
            const Ray &r = rays[b];
            const ViewRecord &view = ds.views[views[b]];
            const Vec3 lp = ds.lights[view.light_index].position;
            batch.hit_x.row(k) << fh.point.x, fh.point.y, fh.point.z;
            batch.hit_d.row(k) << r.direction.x, r.direction.y, r.direction.z;
            batch.hit_l.row(k) << lp.x, lp.y, lp.z;
            batch.hit_rgb_lin.row(k) = vc.rgb_lin[views[b]].row(pixels[b]);
        }
        if (nh > 0) {
            VecXd slope = tracer.grad_dot_dir(batch.hit_x, batch.hit_d);
            batch.hit_s0.resize(nh);
            for (Eigen::Index k = 0; k < nh; ++k)
                batch.hit_s0[k] = std::min(slope[k], -kMinFrontSlope);
        }
        batch.miss_x.resize(nm, 3);
        batch.miss_d.resize(nm, 3);
        batch.miss_l.resize(nm, 3);
        batch.miss_rgb_lin.resize(nm, 3);
        for (Eigen::Index k = 0; k < nm; ++k) {
            int b = miss_ids[k];
            const FieldHit &fh = hits[b];
            const Ray &r = rays[b];
            const ViewRecord &view = ds.views[views[b]];
            const Vec3 lp = ds.lights[view.light_index].position;
            batch.miss_x.row(k) << fh.min_point.x, fh.min_point.y, fh.min_point.z;
            batch.miss_d.row(k) << r.direction.x, r.direction.y, r.direction.z;
            batch.miss_l.row(k) << lp.x, lp.y, lp.z;
            batch.miss_rgb_lin.row(k) = vc.rgb_lin[views[b]].row(pixels[b]);
        }

        // Eikonal points: half perturbed surface hits, half uniform in bounds.
        batch.eik_pts.resize(cfg.eik_samples, 3);
        for (int i = 0; i < cfg.eik_samples; ++i) {
            bool near = i < cfg.eik_samples / 2 && nh > 0;
            if (near) {
                Eigen::Index k = static_cast<Eigen::Index>(unit(rng) * nh) % nh;
                for (int a = 0; a < 3; ++a)
                    batch.eik_pts(i, a) =
                        batch.hit_x(k, a) + gauss(rng) * cfg.perturb_sigma * radius;
            } else {
                for (int a = 0; a < 3; ++a)
                    batch.eik_pts(i, a) =
                        ds.bounds.center[a] + (2 * unit(rng) - 1) * radius;
            }
        }
        batch.curv_pts.resize(cfg.curv_samples, 3);
        for (int i = 0; i < cfg.curv_samples; ++i) {
            if (nh > 0) {
                Eigen::Index k = static_cast<Eigen::Index>(unit(rng) * nh) % nh;
                for (int a = 0; a < 3; ++a)
                    batch.curv_pts(i, a) =
                        batch.hit_x(k, a) + gauss(rng) * cfg.perturb_sigma * radius;
            } else {
                for (int a = 0; a < 3; ++a)
                    batch.curv_pts(i, a) = ds.bounds.center[a] + (2 * unit(rng) - 1) * radius;
            }
        }

        Stage1LossParts parts = stage1_objective(st.fields, batch, cfg, &g_geom, &g_color);
        if (!std::isfinite(parts.total))
            throw Diverged("stage 1 diverged at iteration " + std::to_string(iter));
        st.opt_geometry.update(st.fields.geometry.params, g_geom);
        st.opt_color.update(st.fields.color.params, g_color);
        tracer.refresh();

        if (progress && (iter % 100 == 0 || iter + 1 == cfg.iterations)) {
            char line[160];
            std::snprintf(line, sizeof line,
                          "stage1 iter %d/%d rgb %.4f eik %.4f curv %.2f beta %.3f hits %d", iter,
                          cfg.iterations, parts.rgb, parts.eik, parts.curv, beta,
                          static_cast<int>(nh));
            progress(iter, cfg.iterations, line);
        }
    }
    st.stage = 1;
    return st;
}

void train_stage2(const Dataset &ds, const PseudoSet &labels, TrainState &st,
                  const Stage2Config &cfg, const ProgressFn &progress) {
    if (st.stage < 1) throw MissingArtifact("stage 2 requires a completed stage-1 field");
    if (labels.views.empty()) throw MissingArtifact("stage 2 requires pseudo labels");
    if (!cfg.freeze_geometry)
        throw InvalidArgument("stage 2 always freezes the geometry network");
    st.stage2 = cfg;
    FieldSet &fs = st.fields;
    const double radius = ds.bounds.radius;

    ViewCache vc = build_view_cache(ds);

    // Frozen geometry: trace each camera once and cache the G-buffer.
    TraceParams tp;
    tp.eps_hit = 5e-4 * radius;
    tp.t_max = ds.trace.t_max;
    tp.max_steps = 128;
    struct CameraBuffer {
        std::vector<int> surface_pixels;
        MatXd x, d;
        MatXd feat;
    };
    std::vector<CameraBuffer> buffers(ds.cameras.size());
    for (size_t ci = 0; ci < ds.cameras.size(); ++ci) {
        CameraMaps maps = field_camera_maps(fs, ds.cameras[ci], {}, tp);
        CameraBuffer &buf = buffers[ci];
        const Camera &cam = ds.cameras[ci];
        for (int p = 0; p < cam.width * cam.height; ++p)
            if (maps.surface.data[p] > 0) buf.surface_pixels.push_back(p);
        const Eigen::Index n = static_cast<Eigen::Index>(buf.surface_pixels.size());
        buf.x.resize(n, 3);
        buf.d.resize(n, 3);
        for (Eigen::Index k = 0; k < n; ++k) {
            int p = buf.surface_pixels[k];
            Vec3 pt = maps.point.rgb(p % cam.width, p / cam.width);
            Vec3 dir = vc.rays_per_camera[ci][p].direction;
            buf.x.row(k) << pt.x, pt.y, pt.z;
            buf.d.row(k) << dir.x, dir.y, dir.z;
        }
        if (n > 0) {
            VecXd sdf;
            geometry_forward(fs, buf.x, sdf, buf.feat);
        }
    }

    Eigen::VectorXd geometry_before = fs.geometry.params;

    st.opt_color.lr = cfg.lr;
    st.opt_color.weight_decay = cfg.weight_decay;
    st.opt_color.reset(fs.color.params.size());
    st.opt_reflectance = st.opt_color;
    st.opt_reflectance.reset(fs.reflectance.params.size());
    st.opt_shading = st.opt_color;
    st.opt_shading.reset(fs.shading.params.size());

    std::mt19937_64 rng(cfg.seed + 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    VecXd g_color, g_refl, g_shade;

    // Views with at least one surface pixel.
    std::vector<int> usable;
    for (int v : vc.train_views) {
        const ViewRecord &view = ds.views[v];
        if (!buffers[view.camera_index].surface_pixels.empty()) usable.push_back(v);
    }
    if (usable.empty()) throw InvalidArgument("stage 2: no surface pixels visible");

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        Stage2Batch batch;
        const int B = cfg.batch_size;
        batch.x.resize(B, 3);
        batch.d.resize(B, 3);
        batch.l.resize(B, 3);
        batch.feat.resize(B, fs.enc.feat_dim);
        batch.rgb_lin.resize(B, 3);
        batch.r_star.resize(B, 3);
        batch.s_star.resize(B);
        batch.w_r.resize(B);
        batch.w_s.resize(B);
        for (int b = 0; b < B; ++b) {
            int v = usable[static_cast<size_t>(unit(rng) * usable.size()) % usable.size()];
            const ViewRecord &view = ds.views[v];
            const CameraBuffer &buf = buffers[view.camera_index];
            Eigen::Index k =
                static_cast<Eigen::Index>(unit(rng) * buf.surface_pixels.size()) %
                static_cast<Eigen::Index>(buf.surface_pixels.size());
            int p = buf.surface_pixels[k];
            const Vec3 lp = ds.lights[view.light_index].position;
            batch.x.row(b) = buf.x.row(k);
            batch.d.row(b) = buf.d.row(k);
            batch.l.row(b) << lp.x, lp.y, lp.z;
            batch.feat.row(b) = buf.feat.row(k);
            batch.rgb_lin.row(b) = vc.rgb_lin[v].row(p);
            const PseudoView &pv = labels.views[v];
            const int w = view.image_rgb.width;
            int px = p % w, py = p / w;
            Vec3 rs = pv.r_star.rgb(px, py);
            batch.r_star.row(b) << rs.x, rs.y, rs.z;
            batch.s_star[b] = pv.s_star.at(px, py);
            batch.w_r[b] = pv.w_r.at(px, py);
            batch.w_s[b] = pv.w_s.at(px, py);
        }

        Stage2LossParts parts =
            stage2_objective(fs, batch, cfg, &g_color, &g_refl, &g_shade);
        if (!std::isfinite(parts.total))
            throw Diverged("stage 2 diverged at iteration " + std::to_string(iter));
        st.opt_color.update(fs.color.params, g_color);
        st.opt_reflectance.update(fs.reflectance.params, g_refl);
        st.opt_shading.update(fs.shading.params, g_shade);

        if (progress && (iter % 100 == 0 || iter + 1 == cfg.iterations)) {
            char line[160];
            std::snprintf(line, sizeof line,
                          "stage2 iter %d/%d rgb %.4f intr %.4f reg %.4f", iter, cfg.iterations,
                          parts.rgb, parts.intrinsic, parts.reg);
            progress(iter, cfg.iterations, line);
        }
    }

    // The freeze contract is structural (no optimizer touches geometry), but
    // cheap to assert.
    if ((fs.geometry.params - geometry_before).cwiseAbs().maxCoeff() != 0)
        throw Error("stage 2 modified frozen geometry parameters");
    st.stage = 2;
}

}  // namespace ifield
