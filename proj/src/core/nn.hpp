// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <vector>

#include "error.hpp"

namespace ifield::nn {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class Activation : uint8_t { kRelu, kSoftplus };
enum class OutputActivation : uint8_t { kNone, kSigmoid, kSoftplus };

struct MlpSpec {
    int input_dim = 1;
    int output_dim = 1;
    int hidden_width = 64;
    int hidden_layers = 0;
    Activation activation = Activation::kRelu;
    OutputActivation output_activation = OutputActivation::kNone;

    int layer_in(int i) const { return i == 0 ? input_dim : hidden_width; }
    int layer_out(int i) const { return i == hidden_layers ? output_dim : hidden_width; }
    int param_count() const {
        int n = 0;
        for (int i = 0; i <= hidden_layers; ++i) n += layer_out(i) * (layer_in(i) + 1);
        return n;
    }
};

// ---------------------------------------------------------------------------
// Positional encoding: [x (optional), sin(2^k pi x), cos(2^k pi x)]_k=0..n-1,
// frequency-major, component-minor.

inline int encoded_dim(int d, int n_freq, bool include_input) {
    return d * ((include_input ? 1 : 0) + 2 * n_freq);
}

template <typename S>
void positional_encode(const double *x, int d, int n_freq, bool include_input, S *out) {
    int o = 0;
    if (include_input)
        for (int j = 0; j < d; ++j) out[o++] = static_cast<S>(x[j]);
    double freq = M_PI;
    for (int k = 0; k < n_freq; ++k, freq *= 2) {
        for (int j = 0; j < d; ++j) out[o++] = static_cast<S>(std::sin(freq * x[j]));
        for (int j = 0; j < d; ++j) out[o++] = static_cast<S>(std::cos(freq * x[j]));
    }
}

// Accumulates J_enc(x)^T g_enc into g_x.
inline void positional_encode_pullback(const double *x, int d, int n_freq, bool include_input,
                                       const double *g_enc, double *g_x) {
    int o = 0;
    if (include_input)
        for (int j = 0; j < d; ++j) g_x[j] += g_enc[o++];
    double freq = M_PI;
    for (int k = 0; k < n_freq; ++k, freq *= 2) {
        for (int j = 0; j < d; ++j) g_x[j] += g_enc[o + j] * freq * std::cos(freq * x[j]);
        for (int j = 0; j < d; ++j) g_x[j] -= g_enc[o + d + j] * freq * std::sin(freq * x[j]);
        o += 2 * d;
    }
}

// Accumulates J_enc(x) g_x into g_enc (the encoding Jacobian is one-to-one per
// encoded coordinate).
inline void positional_encode_pushforward(const double *x, int d, int n_freq, bool include_input,
                                          const double *g_x, double *g_enc) {
    int o = 0;
    if (include_input)
        for (int j = 0; j < d; ++j) g_enc[o++] += g_x[j];
    double freq = M_PI;
    for (int k = 0; k < n_freq; ++k, freq *= 2) {
        for (int j = 0; j < d; ++j) g_enc[o + j] += freq * std::cos(freq * x[j]) * g_x[j];
        for (int j = 0; j < d; ++j) g_enc[o + d + j] -= freq * std::sin(freq * x[j]) * g_x[j];
        o += 2 * d;
    }
}

// ---------------------------------------------------------------------------
// Activations

template <typename S>
inline S softplus(S z) {
    if (z > S(30)) return z;
    return std::log1p(std::exp(z));
}
template <typename S>
inline S sigmoid(S z) {
    return S(1) / (S(1) + std::exp(-z));
}

// ---------------------------------------------------------------------------
// Batched MLP. Rows are samples. Parameters live in one flat vector laid out
// [W_0, b_0, W_1, b_1, ...] with W row-major (out x in).

template <typename S>
struct MlpCache {
    MatX<S> input;
    std::vector<MatX<S>> z;  // pre-activations per hidden layer
    std::vector<MatX<S>> a;  // activations per hidden layer
    MatX<S> y_pre;           // output-layer pre-activation
    MatX<S> y;
};

// Intermediates of the input-gradient pass, retained for the second-order
// parameter gradients that the eikonal loss needs.
template <typename S>
struct InputGradCache {
    std::vector<MatX<S>> q;  // per hidden layer, 1-based conceptually; q[i-1]
    std::vector<MatX<S>> r;  // r[i] = grad wrt a_i; r[0] = input gradient
};

template <typename S>
class Mlp {
  public:
    MlpSpec spec;
    VecX<S> params;

    Mlp() = default;
    explicit Mlp(const MlpSpec &s) : spec(s), params(VecX<S>::Zero(s.param_count())) {}

    // Uniform +-(1/sqrt(fan_in)) for weights and biases.
    void init_params(uint64_t seed) {
        std::mt19937_64 rng(seed);
        int off = 0;
        for (int i = 0; i <= spec.hidden_layers; ++i) {
            double bound = 1.0 / std::sqrt(static_cast<double>(spec.layer_in(i)));
            std::uniform_real_distribution<double> dist(-bound, bound);
            int n = spec.layer_out(i) * (spec.layer_in(i) + 1);
            for (int k = 0; k < n; ++k) params[off + k] = static_cast<S>(dist(rng));
            off += n;
        }
    }

    int weight_offset(int layer) const {
        int off = 0;
        for (int i = 0; i < layer; ++i) off += spec.layer_out(i) * (spec.layer_in(i) + 1);
        return off;
    }
    int bias_offset(int layer) const {
        return weight_offset(layer) + spec.layer_out(layer) * spec.layer_in(layer);
    }
    Eigen::Map<const MatX<S>> weight(int layer) const {
        return {params.data() + weight_offset(layer), spec.layer_out(layer), spec.layer_in(layer)};
    }
    Eigen::Map<const VecX<S>> bias(int layer) const {
        return {params.data() + bias_offset(layer), spec.layer_out(layer)};
    }

    MatX<S> forward(const MatX<S> &x, MlpCache<S> *cache = nullptr) const {
        if (x.cols() != spec.input_dim) throw InvalidArgument("mlp: input dimension mismatch");
        const int H = spec.hidden_layers;
        if (cache) {
            cache->input = x;
            cache->z.resize(H);
            cache->a.resize(H);
        }
        MatX<S> a = x;
        for (int i = 0; i < H; ++i) {
            MatX<S> z = a * weight(i).transpose();
            z.rowwise() += bias(i).transpose();
            if (cache) cache->z[i] = z;
            a = apply_activation(z);
            if (cache) cache->a[i] = a;
        }
        MatX<S> y = a * weight(H).transpose();
        y.rowwise() += bias(H).transpose();
        if (cache) cache->y_pre = y;
        apply_output_activation(y);
        if (cache) cache->y = y;
        return y;
    }

    // Reverse mode for scalar loss with upstream dL/dY. Accumulates parameter
    // gradients into grad (flat, same layout as params) and returns dL/dX.
    MatX<S> backward(const MlpCache<S> &cache, const MatX<S> &upstream, VecX<S> &grad) const {
        const int H = spec.hidden_layers;
        MatX<S> u = upstream;
        apply_output_activation_grad(cache.y_pre, cache.y, u);
        accumulate_layer(H, u, H > 0 ? cache.a[H - 1] : cache.input, grad);
        MatX<S> g = u * weight(H);
        for (int i = H - 1; i >= 0; --i) {
            MatX<S> q = g.cwiseProduct(act_derivative(cache.z[i], cache.a[i]));
            accumulate_layer(i, q, i > 0 ? cache.a[i - 1] : cache.input, grad);
            g = q * weight(i);
        }
        return g;
    }

    // Gradient of output component `out_index` wrt the input, per row.
    // Requires output_activation == kNone (used by the SDF head).
    MatX<S> input_gradient(const MlpCache<S> &cache, int out_index,
                           InputGradCache<S> *ig = nullptr) const {
        if (spec.output_activation != OutputActivation::kNone)
            throw InvalidArgument("input_gradient requires a linear output");
        const int H = spec.hidden_layers;
        const long n = cache.input.rows();
        MatX<S> r = weight(H).row(out_index).replicate(n, 1);
        if (ig) {
            ig->q.assign(H, {});
            ig->r.assign(H + 1, {});
            ig->r[H] = r;
        }
        for (int i = H - 1; i >= 0; --i) {
            MatX<S> q = r.cwiseProduct(act_derivative(cache.z[i], cache.a[i]));
            if (ig) ig->q[i] = q;
            r = q * weight(i);
            if (ig) ig->r[i] = r;
        }
        return r;
    }

    // Second-order pass: given v = dE/d(input_gradient) accumulates dE/dparams.
    // Consumes the caches of forward() and input_gradient().
    void double_backward(const MlpCache<S> &cache, const InputGradCache<S> &ig, int out_index,
                         const MatX<S> &v, VecX<S> &grad) const {
        const int H = spec.hidden_layers;
        const long n = cache.input.rows();
        std::vector<MatX<S>> c(H);  // dE/dz_i contributions from sigma'(z_i)
        MatX<S> t = v;              // dE/dr_{i-1}, starting at r_0
        for (int i = 0; i < H; ++i) {
            // r_{i-1} = q_i W_i
            Eigen::Map<MatX<S>> gw(grad.data() + weight_offset(i), spec.layer_out(i),
                                   spec.layer_in(i));
            gw.noalias() += ig.q[i].transpose() * t;
            MatX<S> s = t * weight(i).transpose();
            // q_i = r_i . sigma'(z_i)
            MatX<S> d1 = act_derivative(cache.z[i], cache.a[i]);
            t = s.cwiseProduct(d1);
            c[i] = s.cwiseProduct(ig.r[i + 1]).cwiseProduct(act_second_derivative(cache.z[i], d1));
        }
        // r_H = row of W_out
        Eigen::Map<MatX<S>> gwo(grad.data() + weight_offset(H), spec.layer_out(H),
                                spec.layer_in(H));
        gwo.row(out_index) += t.colwise().sum();
        // Push the z-gradients back through the forward chain.
        MatX<S> ga = MatX<S>::Zero(n, spec.hidden_width);
        for (int i = H - 1; i >= 0; --i) {
            MatX<S> gz = c[i];
            gz += ga.cwiseProduct(act_derivative(cache.z[i], cache.a[i]));
            accumulate_layer(i, gz, i > 0 ? cache.a[i - 1] : cache.input, grad);
            ga = gz * weight(i);
        }
    }

  private:
    MatX<S> apply_activation(const MatX<S> &z) const {
        if (spec.activation == Activation::kRelu) return z.cwiseMax(S(0));
        return z.unaryExpr([](S v) { return softplus(v); });
    }
    MatX<S> act_derivative(const MatX<S> &z, const MatX<S> &a) const {
        if (spec.activation == Activation::kRelu)
            return (z.array() > S(0)).template cast<S>().matrix();
        (void)a;
        return z.unaryExpr([](S v) { return sigmoid(v); });
    }
    MatX<S> act_second_derivative(const MatX<S> &z, const MatX<S> &d1) const {
        if (spec.activation == Activation::kRelu) return MatX<S>::Zero(z.rows(), z.cols());
        return d1.cwiseProduct((MatX<S>::Ones(z.rows(), z.cols()) - d1));
    }
    void apply_output_activation(MatX<S> &y) const {
        switch (spec.output_activation) {
            case OutputActivation::kNone: break;
            case OutputActivation::kSigmoid:
                y = y.unaryExpr([](S v) { return sigmoid(v); });
                break;
            case OutputActivation::kSoftplus:
                y = y.unaryExpr([](S v) { return softplus(v); });
                break;
        }
    }
    void apply_output_activation_grad(const MatX<S> &y_pre, const MatX<S> &y, MatX<S> &u) const {
        switch (spec.output_activation) {
            case OutputActivation::kNone: break;
            case OutputActivation::kSigmoid:
                u = u.cwiseProduct(y.cwiseProduct(MatX<S>::Ones(y.rows(), y.cols()) - y));
                break;
            case OutputActivation::kSoftplus:
                u = u.cwiseProduct(y_pre.unaryExpr([](S v) { return sigmoid(v); }));
                break;
        }
    }
    void accumulate_layer(int layer, const MatX<S> &delta, const MatX<S> &below,
                          VecX<S> &grad) const {
        Eigen::Map<MatX<S>> gw(grad.data() + weight_offset(layer), spec.layer_out(layer),
                               spec.layer_in(layer));
        gw.noalias() += delta.transpose() * below;
        Eigen::Map<VecX<S>> gb(grad.data() + bias_offset(layer), spec.layer_out(layer));
        gb.noalias() += delta.colwise().sum().transpose();
    }
};

template <typename T, typename F>
Mlp<T> cast_mlp(const Mlp<F> &src) {
    Mlp<T> dst(src.spec);
    dst.params = src.params.template cast<T>();
    return dst;
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay and bias correction.

struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
    long step = 0;
    Eigen::VectorXd m, v;

    void reset(Eigen::Index n) {
        step = 0;
        m = Eigen::VectorXd::Zero(n);
        v = Eigen::VectorXd::Zero(n);
    }
    void update(Eigen::VectorXd &params, const Eigen::VectorXd &grad);
};

// ---------------------------------------------------------------------------
// Finite-difference verification. Returns the max relative error between the
// analytic gradient and central differences over all parameters.
// `corruption` biases the analytic gradient (negative-control hook).

enum class CheckLoss : uint8_t { kQuadratic, kSmoothL1 };

double grad_check(const MlpSpec &spec, const Eigen::VectorXd &params, CheckLoss loss,
                  uint64_t seed = 7, double corruption = 0.0);

}  // namespace ifield::nn
