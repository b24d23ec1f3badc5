#include "mvhoi/attention_enhance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mvhoi::ae {

RowVector logit_bias(const RowVector& w, double alpha, double c_max) {
    if (alpha < 0.0) {
        throw std::invalid_argument("attention enhancement strength must be nonnegative");
    }
    RowVector b = RowVector::Zero(w.cols());
    if (alpha == 0.0) {
        return b;
    }
    for (Index k = 0; k < w.cols(); ++k) {
        const double p = std::clamp(w(k), kWeightFloor, 1.0 - kWeightFloor);
        b(k) = std::clamp(alpha * std::log(p / (1.0 - p)), -c_max, c_max);
    }
    return b;
}

BiasSpec logit_bias(const std::vector<uoa::ViewWeights>& weights, double alpha, double c_max) {
    BiasSpec spec;
    spec.alpha = alpha;
    spec.c_max = c_max;
    for (const auto& w : weights) {
        spec.biases.push_back(logit_bias(w.w, alpha, c_max));
    }
    return spec;
}

Index nearest_guidance(Index t, Index delta_t, Index count) {
    if (delta_t < 1 || count < 1) {
        throw std::invalid_argument("nearest_guidance needs a positive stride and count");
    }
    const Index lower = t / delta_t;
    const Index rest = t - lower * delta_t;
    const Index idx = 2 * rest > delta_t ? lower + 1 : lower;
    return std::min(idx, count - 1);
}

std::vector<uoa::ViewWeights> extract_view_weights(const std::vector<uoa::ViewWeights>& coarse, Index frames,
                                                   Index delta_t) {
    if (coarse.empty() || coarse.front().w.size() == 0) {
        throw std::invalid_argument("rollout has no attention tap");
    }
    std::vector<uoa::ViewWeights> out;
    out.reserve(static_cast<std::size_t>(frames));
    for (Index t = 0; t < frames; ++t) {
        uoa::ViewWeights w =
            coarse[static_cast<std::size_t>(nearest_guidance(t, delta_t, static_cast<Index>(coarse.size())))];
        w.frame = t;
        out.push_back(std::move(w));
    }
    return out;
}

void write_bias_csv(const std::filesystem::path& path, const std::vector<uoa::ViewWeights>& weights,
                    const BiasSpec& bias) {
    if (bias.biases.size() != weights.size()) {
        throw std::invalid_argument("bias and weight traces differ in length");
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    const Index k = weights.empty() ? 0 : weights.front().w.cols();
    out << "frame";
    for (Index i = 0; i < k; ++i) {
        out << ",w" << i;
    }
    for (Index i = 0; i < k; ++i) {
        out << ",b" << i;
    }
    out << '\n';
    out.precision(10);
    for (std::size_t f = 0; f < weights.size(); ++f) {
        out << weights[f].frame;
        for (Index i = 0; i < k; ++i) {
            out << ',' << weights[f].w(i);
        }
        for (Index i = 0; i < k; ++i) {
            out << ',' << bias.biases[f](i);
        }
        out << '\n';
    }
}

} // namespace mvhoi::ae
