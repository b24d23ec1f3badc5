#pragma once

#include "mvhoi/tensor.hpp"

namespace mvhoi {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double grad_clip = 0.0;  // global-norm clip; 0 disables
};

struct AdamState {
    long step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

// One bias-corrected Adam update of every parameter that requires grad.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, const AdamConfig& config);

double global_norm(const Gradients& grads);

} // namespace mvhoi
