#include "mvhoi/motion.hpp"

#include "mvhoi/parallel.hpp"

#include <stdexcept>

namespace mvhoi::motion {

MotionEncoder make_motion_encoder(ParamStore& params, const ModelConfig& cfg, Index size, Rng& rng) {
    MotionEncoder enc;
    enc.width = cfg.d;
    enc.d_motion = cfg.d_motion;
    enc.size = size;
    enc.patch = cfg.patch;
    const Index in = cfg.patch * cfg.patch * 3;
    enc.patch_embed = nn::make_linear(params, "motion.patch_embed", in, cfg.d, rng);
    Matrix fe(2, cfg.d);
    for (Index i = 0; i < fe.size(); ++i) {
        fe.data()[i] = rng.normal(0.0, 0.02);
    }
    enc.frame_embed = params.add("motion.frame_embed", fe);
    for (int l = 0; l < cfg.motion_layers; ++l) {
        enc.blocks.push_back(nn::make_block(params, "motion.block" + std::to_string(l), cfg.d, cfg.heads, rng));
    }
    enc.norm = nn::make_layer_norm(params, "motion.norm", cfg.d);
    enc.out = nn::make_linear(params, "motion.out", cfg.d, cfg.d_motion, rng);
    const Index grid = size / cfg.patch;
    const Matrix pos = nn::sinusoidal_2d(grid, grid, cfg.d);
    enc.position.resize(2 * pos.rows(), cfg.d);
    enc.position << pos, pos;
    return enc;
}

Image motion_crop(const Image& frame, const Mask& object_mask, const Mask& hoi_mask, Index size) {
    if (!object_mask.empty()) {
        return object_crop(frame, object_mask, size);
    }
    return object_crop(frame, hoi_mask, size);
}

ad::Var encode_motion(ad::Tape& tape, const MotionEncoder& enc, const Image& from, const Image& to) {
    if (!from.same_size(to)) {
        throw std::invalid_argument("motion crops differ in size");
    }
    if (from.height != enc.size || from.width != enc.size) {
        throw std::invalid_argument("motion crop size does not match the encoder");
    }
    const Index n = from.height * from.width;
    Matrix both(2 * n, 3);
    both << from.pixels, to.pixels;
    const Index tokens_per = (enc.size / enc.patch) * (enc.size / enc.patch);
    auto frame_rows = std::make_shared<IndexVector>(static_cast<std::size_t>(2 * tokens_per));
    for (Index i = 0; i < 2 * tokens_per; ++i) {
        (*frame_rows)[static_cast<std::size_t>(i)] = i < tokens_per ? 0 : 1;
    }
    ad::Var x = nn::patchify(tape.constant(std::move(both)), 2, enc.size, enc.size, 3, enc.patch);
    x = nn::apply(tape, enc.patch_embed, x);
    x = x + tape.constant(enc.position);
    x = x + ad::gather_rows(tape.param(enc.frame_embed), frame_rows);
    const auto layout = nn::full_layout(2 * tokens_per);
    for (const auto& b : enc.blocks) {
        x = nn::apply(tape, b, x, layout);
    }
    x = ad::mean(nn::apply(tape, enc.norm, x), ad::Axis::Rows);
    return nn::apply(tape, enc.out, x);
}

RowVector encode_motion(const ParamStore& params, const MotionEncoder& enc, const Image& from, const Image& to) {
    ad::Tape tape(&params);
    return encode_motion(tape, enc, from, to).value();
}

std::vector<MotionEmbedding> extract_sequence(const ParamStore& params, const MotionEncoder& enc, const Video& frames,
                                              const MaskSequence& object_masks, const MaskSequence& hoi_masks,
                                              Index delta_t) {
    const Index t_len = static_cast<Index>(frames.size());
    if (delta_t < 1 || t_len <= delta_t) {
        throw std::invalid_argument("motion sequence needs more than delta_t frames");
    }
    if (object_masks.size() != frames.size() || hoi_masks.size() != frames.size()) {
        throw std::invalid_argument("mask sequences must match the frame count");
    }
    std::vector<Image> crops(frames.size());
    parallel_for(frames.size(), [&](std::size_t t) {
        crops[t] = motion_crop(frames[t], object_masks[t], hoi_masks[t], enc.size);
    });
    std::vector<MotionEmbedding> out(static_cast<std::size_t>(t_len - delta_t));
    parallel_for(out.size(), [&](std::size_t t) {
        out[t] = MotionEmbedding{encode_motion(params, enc, crops[t], crops[t + static_cast<std::size_t>(delta_t)]),
                                 static_cast<Index>(t), delta_t};
    });
    return out;
}

} // namespace mvhoi::motion
