#include "mvhoi/uoa.hpp"

#include <stdexcept>

namespace mvhoi::uoa {

namespace {

Matrix small_normal(Index rows, Index cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal(0.0, 0.02);
    }
    return m;
}

} // namespace

Uoa make_uoa(ParamStore& params, const ModelConfig& cfg, Index size, Index views, Rng& rng) {
    if (views < 1) {
        throw std::invalid_argument("UOA needs at least one reference view");
    }
    Uoa m;
    m.width = cfg.d;
    m.d_motion = cfg.d_motion;
    m.size = size;
    m.patch = cfg.patch;
    m.views = views;
    m.register_count = std::max(cfg.registers, 0);
    m.tap_layer = cfg.tap_layer >= 0 ? cfg.tap_layer : std::max(0, cfg.layers - 2);
    const Index in = cfg.patch * cfg.patch * 3;
    m.patch_embed = nn::make_linear(params, "uoa.patch_embed", in, cfg.d, rng);
    m.object_tag = params.add("uoa.object_tag", small_normal(1, cfg.d, rng));
    m.view_embed = params.add("uoa.view_embed", small_normal(views, cfg.d, rng));
    if (cfg.registers > 0) {
        m.registers = params.add("uoa.registers", small_normal(cfg.registers, cfg.d, rng));
    }
    m.film = nn::make_linear(params, "uoa.film", cfg.d_motion, 2 * cfg.d, rng, 0.0);
    for (int l = 0; l < cfg.layers; ++l) {
        m.blocks.push_back(nn::make_block(params, "uoa.block" + std::to_string(l), cfg.d, cfg.heads, rng));
    }
    m.head_norm = nn::make_layer_norm(params, "uoa.head_norm", cfg.d);
    m.head = nn::make_linear(params, "uoa.head", cfg.d, in, rng, 0.1);
    const Index grid = size / cfg.patch;
    m.position = nn::sinusoidal_2d(grid, grid, cfg.d);
    m.layout = nn::full_layout(m.token_count());
    return m;
}

Output forward(ad::Tape& tape, const Uoa& model, ad::Var object_frame, const std::vector<Image>& refs, ad::Var motion) {
    const Index s = model.size;
    const Index n_img = model.tokens_per_image();
    const Index k = model.views;
    if (static_cast<Index>(refs.size()) != k) {
        throw std::invalid_argument("UOA expects " + std::to_string(k) + " reference views, got " +
                                    std::to_string(refs.size()));
    }
    if (object_frame.rows() != s * s || object_frame.cols() != 3) {
        throw std::invalid_argument("UOA object frame has the wrong size");
    }
    if (motion.rows() != 1 || motion.cols() != model.d_motion) {
        throw std::invalid_argument("UOA motion embedding has the wrong width");
    }
    Matrix stacked(k * s * s, 3);
    for (Index i = 0; i < k; ++i) {
        const Image& r = refs[static_cast<std::size_t>(i)];
        if (r.height != s || r.width != s) {
            throw std::invalid_argument("reference view size mismatch");
        }
        stacked.middleRows(i * s * s, s * s) = r.pixels;
    }
    const ad::Var pos = tape.constant(model.position);

    ad::Var obj = nn::apply(tape, model.patch_embed, nn::patchify(object_frame, 1, s, s, 3, model.patch));
    obj = obj + pos + tape.param(model.object_tag);
    const ad::Var film = nn::apply(tape, model.film, motion);
    const ad::Var gamma = ad::slice_cols(film, 0, model.width);
    const ad::Var shift = ad::slice_cols(film, model.width, model.width);
    obj = ad::mul(obj, ad::add_scalar(gamma, 1.0)) + shift;

    auto view_rows = std::make_shared<IndexVector>(static_cast<std::size_t>(k * n_img));
    for (Index i = 0; i < k * n_img; ++i) {
        (*view_rows)[static_cast<std::size_t>(i)] = i / n_img;
    }
    ad::Var ref_tokens = nn::apply(tape, model.patch_embed, nn::patchify(tape.constant(std::move(stacked)), k, s, s, 3, model.patch));
    Matrix pos_tiled(k * n_img, model.width);
    for (Index i = 0; i < k; ++i) {
        pos_tiled.middleRows(i * n_img, n_img) = model.position;
    }
    ref_tokens = ref_tokens + tape.constant(std::move(pos_tiled)) + ad::gather_rows(tape.param(model.view_embed), view_rows);

    std::vector<ad::Var> parts{obj, ref_tokens};
    if (model.register_count > 0) {
        parts.push_back(tape.param(model.registers));
    }
    ad::Var x = ad::concat_rows(parts);
    ad::AttentionTap tap;
    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
        const bool tapped = static_cast<int>(l) == model.tap_layer;
        x = nn::apply(tape, model.blocks[l], x, model.layout, tapped ? &tap : nullptr);
    }

    const Matrix& probs = tap.mean_probs.at(0);
    const RowVector per_key = probs.topRows(n_img).colwise().mean();
    RowVector w(k);
    for (Index i = 0; i < k; ++i) {
        w(i) = per_key.segment(n_img + i * n_img, n_img).sum();
    }
    w /= w.sum();

    ad::Var head = nn::apply(tape, model.head, nn::apply(tape, model.head_norm, ad::slice_rows(x, 0, n_img)));
    ad::Var pred = object_frame + nn::unpatchify(head, 1, s, s, 3, model.patch);
    return Output{pred, ViewWeights{w, model.tap_layer, 0}};
}

Rollout rollout(const ParamStore& params, const Uoa& model, const Image& o0, const std::vector<RowVector>& motions,
                const std::vector<Image>& refs) {
    if (motions.empty()) {
        throw std::invalid_argument("rollout needs at least one motion embedding");
    }
    Rollout out;
    out.frames.push_back(o0);
    for (std::size_t i = 0; i < motions.size(); ++i) {
        ad::Tape tape(&params);
        const Output o = forward(tape, model, tape.constant(out.frames.back().pixels), refs, tape.constant(motions[i]));
        ViewWeights w = o.weights;
        w.frame = static_cast<Index>(i);
        out.weights.push_back(w);
        Image next(model.size, model.size);
        next.pixels = o.pred.value();
        out.frames.push_back(clamp01(std::move(next)));
    }
    ad::Tape tape(&params);
    const Output last = forward(tape, model, tape.constant(out.frames.back().pixels), refs, tape.constant(motions.back()));
    ViewWeights w = last.weights;
    w.frame = static_cast<Index>(motions.size());
    out.weights.push_back(w);
    return out;
}

} // namespace mvhoi::uoa
