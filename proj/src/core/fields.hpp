// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <string>

#include "nn.hpp"
#include "pseudo.hpp"
#include "renderer.hpp"

namespace ifield {

using MatXd = nn::MatX<double>;
using VecXd = Eigen::VectorXd;

struct EncodingConfig {
    int x_freq = 6;
    int d_freq = 4;
    int l_freq = 4;
    bool include_input = true;
    int feat_dim = 16;

    int x_dim() const { return nn::encoded_dim(3, x_freq, include_input); }
    int d_dim() const { return nn::encoded_dim(3, d_freq, include_input); }
    int l_dim() const { return nn::encoded_dim(3, l_freq, include_input); }
};

// The four heads. Positions and light positions are normalized to the bounds
// frame u = (p - center)/radius before encoding; the geometry net emits the
// SDF in that frame, so world_sdf = radius * net_sdf and the world gradient
// equals the net's gradient wrt u.
//
// All head outputs live in the dataset's gamma (display) domain:
//   color (sigmoid), reflectance (sigmoid), shading (softplus, scalar).
struct FieldSet {
    EncodingConfig enc;
    SceneBounds bounds;
    double gamma = kDefaultGamma;
    nn::Mlp<double> geometry;     // enc(u_x) -> [sdf, feat]
    nn::Mlp<double> color;        // [enc(u_x), enc(d), enc(u_l), feat] -> rgb
    nn::Mlp<double> reflectance;  // [enc(u_x), feat] -> rgb
    nn::Mlp<double> shading;      // [enc(u_x), enc(u_l), feat] -> scalar

    static FieldSet make(const EncodingConfig &enc, const SceneBounds &bounds, double gamma,
                         uint64_t seed);
};

// Architecture defaults: geometry 4x64 softplus, heads 3x64 relu.
nn::MlpSpec geometry_spec(const EncodingConfig &enc);
nn::MlpSpec color_spec(const EncodingConfig &enc);
nn::MlpSpec reflectance_spec(const EncodingConfig &enc);
nn::MlpSpec shading_spec(const EncodingConfig &enc);

// Short deterministic fit of the geometry net to an analytic sphere SDF, so
// training starts from a proper signed field (negative at the center).
void sphere_init_geometry(FieldSet &fs, const Vec3 &center_world, double radius_world,
                          uint64_t seed, int iterations = 300);

// --------------------------------------------------------------------------
// Evaluation

struct GeometryEval {
    double sdf = 0;   // world units
    VecXd feat;
    Vec3 grad;        // world-space SDF gradient
};
GeometryEval geometry_eval(const FieldSet &fs, const Vec3 &x);

struct HeadsEval {
    Vec3 color;
    Vec3 reflectance;
    double shading = 0;
};
HeadsEval heads_eval(const FieldSet &fs, const Vec3 &x, const Vec3 &d, const Vec3 &l,
                     const VecXd &feat);

// Batched geometry forward: rows of x are world points. Returns world sdf and
// features; optional caches for gradient work.
void geometry_forward(const FieldSet &fs, const MatXd &x_world, VecXd &sdf, MatXd &feat,
                      nn::MlpCache<double> *cache = nullptr, MatXd *enc = nullptr);

// Row encoders shared by the trainers (positions/lights are normalized to the
// bounds frame first).
namespace fieldenc {
void encode_position_row(const FieldSet &fs, const Vec3 &x_world, double *out);
void encode_dir_row(const FieldSet &fs, const Vec3 &d, double *out);
void encode_light_row(const FieldSet &fs, const Vec3 &l_world, double *out);
MatXd encode_positions(const FieldSet &fs, const MatXd &x_world);
}  // namespace fieldenc

double eikonal_loss(const FieldSet &fs, std::span<const Vec3> points);
double curvature_loss(const FieldSet &fs, std::span<const Vec3> points, double h);

// --------------------------------------------------------------------------
// Sphere tracing against the field (f32 fast path, double refinement).

struct FieldHit {
    bool hit = false;
    double t = 0;
    Vec3 point;
    double f_min = std::numeric_limits<double>::infinity();  // min sdf along the ray
    Vec3 min_point;  // where the minimum occurred
};

class FieldTracer {
  public:
    FieldTracer(const FieldSet &fs, const TraceParams &params);
    void refresh();  // re-mirror parameters after an optimizer step

    std::vector<FieldHit> trace(std::span<const Ray> rays) const;
    // Newton polish of a hit point along the ray direction, in double.
    Vec3 refine(const Ray &ray, double t, int steps = 3) const;
    // grad(f) . dir at the given points (f32 path; used as a detached scale).
    VecXd grad_dot_dir(const MatXd &points, const MatXd &dirs) const;

    const TraceParams &params() const { return params_; }

  private:
    const FieldSet &fs_;
    TraceParams params_;
    nn::Mlp<float> mirror_;
};

// Per-camera G-buffer from a frozen geometry field.
CameraMaps field_camera_maps(const FieldSet &fs, const Camera &cam,
                             std::span<const PointLight> lights, const TraceParams &params);

enum class RenderWhat : uint8_t { kRgb, kReflectance, kShading, kResidual };
RenderWhat render_what_from(const std::string &name);

// Renders one view from the fitted fields; miss pixels are black and flagged
// in *mask when given. Output maps are in the gamma domain; residual is the
// gamma-domain difference rgb - reflectance * shading.
Image relight(const FieldSet &fs, const Camera &cam, const Vec3 &light_pos, RenderWhat what,
              const TraceParams &params, Image *mask = nullptr);

// --------------------------------------------------------------------------
// Training

struct Stage1Config {
    double w_eik = 0.1;
    double w_curv = 5e-4;
    int batch_size = 2048;
    double lr = 1e-3;
    int iterations = 5000;
    uint64_t seed = 0;
    double weight_decay = 1e-4;
    int eik_samples = 512;
    int curv_samples = 128;
    double curv_h = 0.02;          // world units
    double perturb_sigma = 0.02;   // x bounds radius
    double trace_eps = 1.5e-3;     // x bounds radius, training-time trace
    int trace_max_steps = 64;
    double blend_beta0 = 0.30;     // x bounds radius, miss-ray occupancy ramp
    double blend_beta1 = 0.02;
    double beta_anneal_frac = 0.6;
    double init_sphere_radius = 0.45;  // x bounds radius
    int init_iterations = 300;
};

struct Stage2Config {
    double w_intrinsic = 1.0;
    double w_reg = 1.0;
    int batch_size = 2048;
    double lr = 1e-3;
    int iterations = 3000;
    uint64_t seed = 0;
    double weight_decay = 1e-4;
    bool freeze_geometry = true;  // the geometry net never trains in stage 2
};

struct TrainState {
    FieldSet fields;
    nn::AdamW opt_geometry, opt_color, opt_reflectance, opt_shading;
    Stage1Config stage1;
    Stage2Config stage2;
    int stage = 0;  // last completed stage
};

using ProgressFn = std::function<void(int iter, int total, const std::string &line)>;

// A materialized stage-1 batch: everything the objective needs, detached from
// the sampler and the tracer so the loss is a pure function of parameters.
struct Stage1Batch {
    MatXd hit_x, hit_d, hit_l, hit_rgb_lin;
    VecXd hit_s0;  // grad(f).d at the traced point, clamped, detached
    MatXd miss_x, miss_d, miss_l, miss_rgb_lin;
    MatXd eik_pts;
    MatXd curv_pts;
    double beta = 0.05;  // world units
    double curv_h = 0.02;
};

struct Stage1LossParts {
    double rgb = 0, eik = 0, curv = 0, total = 0;
};

Stage1LossParts stage1_objective(const FieldSet &fs, const Stage1Batch &batch,
                                 const Stage1Config &cfg, VecXd *g_geometry, VecXd *g_color);

struct Stage2Batch {
    MatXd x, d, l;
    MatXd feat;
    MatXd rgb_lin;
    MatXd r_star;  // gamma domain
    VecXd s_star;  // gamma domain
    VecXd w_r, w_s;
};

struct Stage2LossParts {
    double rgb = 0, intrinsic = 0, reg = 0, total = 0;
    double mean_abs_residual = 0;  // mean |rgb - R*S| per channel
    double mean_abs_rs = 0;        // mean |R*S| per channel
};

Stage2LossParts stage2_objective(const FieldSet &fs, const Stage2Batch &batch,
                                 const Stage2Config &cfg, VecXd *g_color, VecXd *g_reflectance,
                                 VecXd *g_shading);

TrainState train_stage1(const Dataset &ds, const Stage1Config &cfg, const ProgressFn &progress = {});
void train_stage2(const Dataset &ds, const PseudoSet &labels, TrainState &state,
                  const Stage2Config &cfg, const ProgressFn &progress = {});

// Pseudo-label loss of Eq-style weighted L1 on maps; exposed for tests.
double intrinsic_loss(const MatXd &r_hat, const VecXd &s_hat, const MatXd &r_star,
                      const VecXd &s_star, const VecXd &w_r, const VecXd &w_s);

}  // namespace ifield
