// Copyright (c) 2026, the ifield authors
// SPDX-License-Identifier: Apache-2.0

#include "nn.hpp"

#include <cmath>

namespace ifield::nn {

void AdamW::update(Eigen::VectorXd &params, const Eigen::VectorXd &grad) {
    if (m.size() != params.size()) reset(params.size());
    if (!grad.allFinite()) throw Diverged("diverged: non-finite gradient");
    ++step;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    Eigen::VectorXd m_hat = m / bc1;
    Eigen::VectorXd v_hat = v / bc2;
    params -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
    if (weight_decay != 0) params -= (lr * weight_decay) * params;
}

namespace {

double eval_loss(const Mlp<double> &net, const MatX<double> &x, const MatX<double> &target,
                 CheckLoss loss, MatX<double> *upstream) {
    MlpCache<double> cache;
    MatX<double> y = net.forward(x, &cache);
    MatX<double> r = y - target;
    double value = 0;
    if (loss == CheckLoss::kQuadratic) {
        value = 0.5 * r.squaredNorm();
        if (upstream) *upstream = r;
    } else {
        // Smooth L1 (Huber, delta = 1).
        MatX<double> u = r;
        for (Eigen::Index i = 0; i < r.size(); ++i) {
            double v = r.data()[i];
            if (std::abs(v) < 1) {
                value += 0.5 * v * v;
                u.data()[i] = v;
            } else {
                value += std::abs(v) - 0.5;
                u.data()[i] = v > 0 ? 1 : -1;
            }
        }
        if (upstream) *upstream = u;
    }
    return value;
}

}  // namespace

double grad_check(const MlpSpec &spec, const Eigen::VectorXd &params, CheckLoss loss,
                  uint64_t seed, double corruption) {
    Mlp<double> net(spec);
    net.params = params;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1, 1);
    const int n = 8;
    MatX<double> x(n, spec.input_dim), target(n, spec.output_dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = dist(rng);
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = dist(rng);

    MlpCache<double> cache;
    net.forward(x, &cache);
    MatX<double> upstream;
    eval_loss(net, x, target, loss, &upstream);
    Eigen::VectorXd analytic = Eigen::VectorXd::Zero(params.size());
    net.backward(cache, upstream, analytic);
    if (corruption != 0 && analytic.size() > 0) analytic[0] += corruption;

    const double h = 1e-4;
    double max_rel = 0;
    double scale = std::max(1e-8, analytic.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        Mlp<double> probe = net;
        probe.params[i] = params[i] + h;
        double hi = eval_loss(probe, x, target, loss, nullptr);
        probe.params[i] = params[i] - h;
        double lo = eval_loss(probe, x, target, loss, nullptr);
        double fd = (hi - lo) / (2 * h);
        double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-3 * scale});
        max_rel = std::max(max_rel, std::abs(fd - analytic[i]) / denom);
    }
    return max_rel;
}

}  // namespace ifield::nn
