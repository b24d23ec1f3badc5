#include "mvhoi/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mvhoi {

double global_norm(const Gradients& grads) {
    double s = 0.0;
    for (const auto& g : grads) {
        s += g.squaredNorm();
    }
    return std::sqrt(s);
}

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, const AdamConfig& config) {
    if (grads.size() != params.size()) {
        throw std::invalid_argument("gradient count does not match parameter count");
    }
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Matrix& p = params[i].value();
            state.m[i] = Matrix::Zero(p.rows(), p.cols());
            state.v[i] = Matrix::Zero(p.rows(), p.cols());
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& p = params[i].value();
        if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols()) {
            throw std::invalid_argument("shape mismatch between gradient and parameter " + params.name(i));
        }
    }
    double clip = 1.0;
    if (config.grad_clip > 0.0) {
        const double n = global_norm(grads);
        if (n > config.grad_clip) {
            clip = config.grad_clip / n;
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].requires_grad()) {
            continue;
        }
        const Matrix g = grads[i] * clip;
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.cwiseProduct(g);
        Matrix& p = params[i].value();
        p.array() -= config.lr * (state.m[i].array() / bc1) / ((state.v[i].array() / bc2).sqrt() + config.eps);
    }
}

} // namespace mvhoi
