#pragma once

#include "mvhoi/config.hpp"
#include "mvhoi/image.hpp"
#include "mvhoi/nn.hpp"

#include <vector>

namespace mvhoi::uoa {

// Per-view attention mass from object queries to reference keys.
struct ViewWeights {
    RowVector w;
    int layer = 0;
    Index frame = 0;
};

struct Uoa {
    nn::Linear patch_embed;
    std::size_t object_tag = 0;  // 1 x d
    std::size_t view_embed = 0;  // K x d
    std::size_t registers = 0;   // R x d
    nn::Linear film;             // d_motion -> 2d, zero-initialized
    std::vector<nn::Block> blocks;
    nn::LayerNorm head_norm;
    nn::Linear head;  // d -> p*p*3
    Index width = 0;
    Index d_motion = 0;
    Index size = 0;
    Index patch = 0;
    Index views = 0;
    Index register_count = 0;
    int tap_layer = 0;
    Matrix position;  // tokens per image x d
    std::shared_ptr<const ad::AttentionLayout> layout;

    Index tokens_per_image() const { return (size / patch) * (size / patch); }
    Index token_count() const { return tokens_per_image() * (1 + views) + register_count; }
};

Uoa make_uoa(ParamStore& params, const ModelConfig& cfg, Index size, Index views, Rng& rng);

struct Output {
    ad::Var pred;  // (size*size) x 3
    ViewWeights weights;
};

// Predicts the object frame delta_t ahead; `motion` is 1 x d_motion.
Output forward(ad::Tape& tape, const Uoa& model, ad::Var object_frame, const std::vector<Image>& refs, ad::Var motion);

struct Rollout {
    std::vector<Image> frames;          // motions + 1 frames, frames[0] = O_0
    std::vector<ViewWeights> weights;   // one per frame
};

// Autoregressive rollout feeding each clamped prediction forward. The weights
// for frame i come from the pass that reads frame i; the last frame's weights
// come from a tap-only pass with the last motion.
Rollout rollout(const ParamStore& params, const Uoa& model, const Image& o0, const std::vector<RowVector>& motions,
                const std::vector<Image>& refs);

} // namespace mvhoi::uoa
