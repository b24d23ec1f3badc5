#pragma once

#include "mvhoi/uoa.hpp"

#include <filesystem>
#include <vector>

namespace mvhoi::ae {

inline constexpr double kWeightFloor = 1e-4;
inline constexpr double kBiasBound = 15.0;

// Per-frame logit biases over the K reference views.
struct BiasSpec {
    double alpha = 0.0;
    double c_max = kBiasBound;
    std::vector<RowVector> biases;  // one 1 x K row per frame
};

// B_k = alpha * log(w_k / (1 - w_k)) with w clamped to [1e-4, 1 - 1e-4] and
// B clamped to [-c_max, c_max]. alpha = 0 returns exact zeros.
RowVector logit_bias(const RowVector& w, double alpha, double c_max = kBiasBound);
BiasSpec logit_bias(const std::vector<uoa::ViewWeights>& weights, double alpha, double c_max = kBiasBound);

// Index of the guidance frame nearest to frame t among times 0, dt, ...,
// (count - 1) * dt; ties go to the earlier one.
Index nearest_guidance(Index t, Index delta_t, Index count);

// Expands rollout weights (one per coarse frame at stride delta_t) to one per
// video frame. Throws std::invalid_argument when the rollout carries no tap.
std::vector<uoa::ViewWeights> extract_view_weights(const std::vector<uoa::ViewWeights>& coarse, Index frames,
                                                   Index delta_t);

// Frames x K matrix of w followed by the matching biases, one row per frame.
void write_bias_csv(const std::filesystem::path& path, const std::vector<uoa::ViewWeights>& weights,
                    const BiasSpec& bias);

} // namespace mvhoi::ae
