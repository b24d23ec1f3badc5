#pragma once

#include "mvhoi/config.hpp"
#include "mvhoi/image.hpp"
#include "mvhoi/nn.hpp"

#include <vector>

namespace mvhoi::motion {

struct MotionEmbedding {
    RowVector value;
    Index t = 0;
    Index stride = 0;
};

struct MotionEncoder {
    nn::Linear patch_embed;
    std::size_t frame_embed = 0;  // 2 x d, one row per frame of the pair
    std::vector<nn::Block> blocks;
    nn::LayerNorm norm;
    nn::Linear out;
    Index width = 0;
    Index d_motion = 0;
    Index size = 0;
    Index patch = 0;
    Matrix position;  // sinusoidal, tokens x width
};

MotionEncoder make_motion_encoder(ParamStore& params, const ModelConfig& cfg, Index size, Rng& rng);

// Object-centred crop used as encoder input; falls back to the HOI mask when
// the visible object mask is empty.
Image motion_crop(const Image& frame, const Mask& object_mask, const Mask& hoi_mask, Index size);

// 1 x d_motion embedding of the transition from `from` to `to`.
ad::Var encode_motion(ad::Tape& tape, const MotionEncoder& enc, const Image& from, const Image& to);
RowVector encode_motion(const ParamStore& params, const MotionEncoder& enc, const Image& from, const Image& to);

// T - delta_t embeddings at unit hop, t = 0 .. T - delta_t - 1.
std::vector<MotionEmbedding> extract_sequence(const ParamStore& params, const MotionEncoder& enc, const Video& frames,
                                              const MaskSequence& object_masks, const MaskSequence& hoi_masks,
                                              Index delta_t);

} // namespace mvhoi::motion
