#include "mvhoi/refiner.hpp"

#include "mvhoi/losses.hpp"
#include "mvhoi/optim.hpp"
#include "mvhoi/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mvhoi::refiner {

using Layout = std::shared_ptr<const ad::AttentionLayout>;
using MaskColumn = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;

FlowPair flow_pair(const Matrix& x0, const Matrix& eps, double t) {
    if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
        throw std::invalid_argument("flow_pair: shape mismatch");
    }
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("flow_pair: t must lie in [0, 1]");
    }
    return FlowPair{(1.0 - t) * x0 + t * eps, eps - x0};
}

Matrix integrate_flow(const Matrix& eps, int steps, const VelocityFn& velocity, const ConstrainFn& constrain) {
    if (steps < 1) {
        throw std::invalid_argument("flow integration needs at least one step");
    }
    Matrix x = eps;
    const double n = static_cast<double>(steps);
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(steps - i) / n;
        const double next = static_cast<double>(steps - i - 1) / n;
        x -= (t - next) * velocity(x, t);
        if (constrain) {
            constrain(x, next);
        }
    }
    return x;
}

// ------------------------------------------------------------ augmentation

namespace {

double bilinear(const Image& img, double y, double x, Index c) {
    const double fy = std::floor(y);
    const double fx = std::floor(x);
    const double ay = y - fy;
    const double ax = x - fx;
    auto at = [&](Index yy, Index xx) {
        if (yy < 0 || xx < 0 || yy >= img.height || xx >= img.width) {
            return 0.0;
        }
        return img.pixels(yy * img.width + xx, c);
    };
    const auto y0 = static_cast<Index>(fy);
    const auto x0 = static_cast<Index>(fx);
    return (1.0 - ay) * ((1.0 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
           ay * ((1.0 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
}

Image warp_affine(const Image& src, double s, double shear, double ty, double tx) {
    Image out(src.height, src.width);
    const double cy = static_cast<double>(src.height) / 2.0;
    const double cx = static_cast<double>(src.width) / 2.0;
    const double k = std::tan(shear);
    for (Index y = 0; y < src.height; ++y) {
        for (Index x = 0; x < src.width; ++x) {
            // forward map q = s * [[1, k], [0, 1]] p + t, inverted per pixel
            const double qy = static_cast<double>(y) + 0.5 - cy - ty;
            const double qx = static_cast<double>(x) + 0.5 - cx - tx;
            const double py = qy / s;
            const double px = qx / s - k * py;
            for (Index c = 0; c < 3; ++c) {
                out.pixels(y * src.width + x, c) = bilinear(src, py + cy - 0.5, px + cx - 0.5, c);
            }
        }
    }
    return out;
}

} // namespace

Image augment_proxy_guidance(const Image& crop, std::uint64_t seed, const AugmentConfig& mag) {
    Rng rng(mix_seed(seed, 0xa06));
    const double size = static_cast<double>(crop.height);
    const double s = 1.0 + rng.uniform(-mag.scale, mag.scale);
    const double ty = rng.uniform(-mag.translate, mag.translate) * size;
    const double tx = rng.uniform(-mag.translate, mag.translate) * size;
    const double shear = rng.uniform(-mag.shear_deg, mag.shear_deg) * std::numbers::pi / 180.0;
    const double brightness = rng.uniform(-mag.jitter, mag.jitter);
    const double contrast = rng.uniform(-mag.jitter, mag.jitter);
    const double sigma = rng.uniform(mag.blur_min, mag.blur_max);
    const double noise = rng.uniform(0.0, mag.noise_max);

    Image out = crop;
    if (mag.scale != 0.0 || mag.translate != 0.0 || mag.shear_deg != 0.0) {
        out = warp_affine(out, s, shear, ty, tx);
    }
    if (mag.jitter != 0.0) {
        out.pixels *= 1.0 + brightness;
        const double m = out.pixels.mean();
        out.pixels = ((out.pixels.array() - m) * (1.0 + contrast) + m).matrix();
    }
    if (mag.blur_max > 0.0 && sigma > 0.0) {
        out = gaussian_blur(out, sigma);
    }
    if (mag.noise_max > 0.0) {
        for (Index i = 0; i < out.pixels.size(); ++i) {
            out.pixels.data()[i] += rng.normal(0.0, noise);
        }
    }
    return clamp01(std::move(out));
}

// ------------------------------------------------------------ conditioning

ConditionSet compose_condition(const Video& source, const MaskSequence& hoi, const MaskSequence& object,
                               const std::vector<Image>& guidance, Index delta_t, const std::vector<Image>& refs) {
    const Index frames = static_cast<Index>(source.size());
    if (frames == 0 || hoi.size() != source.size() || object.size() != source.size()) {
        throw std::invalid_argument("condition sequences must be nonempty and share their length");
    }
    if (delta_t < 1) {
        throw std::invalid_argument("guidance stride must be positive");
    }
    const Index required = (frames - 1) / delta_t + 1;
    if (!guidance.empty() && static_cast<Index>(guidance.size()) < required) {
        throw std::invalid_argument("missing guidance for index " + std::to_string(guidance.size()) + " (need " +
                                    std::to_string(required) + ")");
    }
    ConditionSet c;
    c.source = source;
    c.hoi = hoi;
    c.object = object;
    c.refs = refs;
    c.has_guidance = !guidance.empty();
    c.composed.reserve(source.size());
    for (Index t = 0; t < frames; ++t) {
        const auto i = static_cast<std::size_t>(t);
        const Image& f = source[i];
        if (f.height != source.front().height || f.width != source.front().width || hoi[i].height != f.height ||
            hoi[i].width != f.width || object[i].height != f.height || object[i].width != f.width) {
            throw std::invalid_argument("condition frame " + std::to_string(t) + " has a mismatched size");
        }
        Image comp = f;
        for (Index y = 0; y < f.height; ++y) {
            for (Index x = 0; x < f.width; ++x) {
                if (hoi[i].at(y, x)) {
                    comp.pixels.row(y * f.width + x).setZero();
                }
            }
        }
        if (c.has_guidance && !hoi[i].empty()) {
            const Mask& anchor = object[i].empty() ? hoi[i] : object[i];
            const Image& g = guidance[static_cast<std::size_t>(ae::nearest_guidance(t, delta_t, required))];
            paste_resized(comp, g, object_window(anchor), hoi[i]);
        }
        c.composed.push_back(std::move(comp));
    }
    return c;
}

// ------------------------------------------------------------------- model

std::vector<int> adapter_depths(const ModelConfig& cfg) {
    std::vector<int> d = cfg.adapter_blocks;
    if (d.empty()) {
        d = {0, cfg.video_layers / 2, cfg.video_layers - 1};
    }
    std::sort(d.begin(), d.end());
    d.erase(std::unique(d.begin(), d.end()), d.end());
    for (int x : d) {
        if (x < 0 || x >= cfg.video_layers) {
            throw std::invalid_argument("adapter block depth " + std::to_string(x) + " outside the trunk");
        }
    }
    return d;
}

namespace {

Matrix small_normal(Index rows, Index cols, Rng& rng) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.normal(0.0, 0.02);
    }
    return m;
}

VideoBlock make_video_block(ParamStore& params, const std::string& name, Index width, int heads, Rng& rng) {
    VideoBlock b;
    b.spatial = nn::make_self_attention(params, name + ".spatial", width, rng);
    b.temporal = nn::make_self_attention(params, name + ".temporal", width, rng);
    b.mlp = nn::make_mlp(params, name + ".mlp", width, rng);
    b.heads = heads;
    return b;
}

VideoBlock clone_video_block(ParamStore& params, const VideoBlock& src, const std::string& name) {
    VideoBlock b;
    b.spatial = nn::clone_self_attention(params, src.spatial, name + ".spatial");
    b.temporal = nn::clone_self_attention(params, src.temporal, name + ".temporal");
    b.mlp = nn::clone_mlp(params, src.mlp, name + ".mlp");
    b.heads = src.heads;
    return b;
}

ad::Var apply_block(ad::Tape& tape, const VideoBlock& b, ad::Var x, const Layout& spatial, const Layout& temporal) {
    x = nn::attend(tape, b.spatial, x, spatial, b.heads);
    x = nn::attend(tape, b.temporal, x, temporal, b.heads);
    return nn::feed_forward(tape, b.mlp, x);
}

IndexVector range(Index start, Index count) {
    IndexVector v(static_cast<std::size_t>(count));
    for (Index i = 0; i < count; ++i) {
        v[static_cast<std::size_t>(i)] = start + i;
    }
    return v;
}

// Frame tokens occupy rows offset + f * n + p.
void add_spatial_groups(ad::AttentionLayout& l, Index offset, Index frames, Index n) {
    for (Index f = 0; f < frames; ++f) {
        IndexVector rows = range(offset + f * n, n);
        l.groups.push_back({rows, rows, {}});
    }
}

void add_temporal_groups(ad::AttentionLayout& l, Index offset, Index frames, Index n, int window) {
    const bool full = window <= 0 || window >= frames - 1;
    for (Index p = 0; p < n; ++p) {
        if (full) {
            IndexVector rows(static_cast<std::size_t>(frames));
            for (Index f = 0; f < frames; ++f) {
                rows[static_cast<std::size_t>(f)] = offset + f * n + p;
            }
            l.groups.push_back({rows, rows, {}});
            continue;
        }
        for (Index f = 0; f < frames; ++f) {
            IndexVector keys;
            for (Index g = std::max<Index>(0, f - window); g <= std::min(frames - 1, f + window); ++g) {
                keys.push_back(offset + g * n + p);
            }
            l.groups.push_back({{offset + f * n + p}, keys, {}});
        }
    }
}

struct Layouts {
    Layout trunk_spatial;
    Layout trunk_temporal;
    Layout adapter_spatial;
    Layout adapter_temporal;
};

Layouts make_layouts(const Refiner& m, Index frames, const ae::BiasSpec* bias) {
    const Index n = m.tokens_per_frame();
    const Index refs = m.views * n;
    Layouts out;
    {
        auto l = std::make_shared<ad::AttentionLayout>();
        l->rows = frames * n;
        add_spatial_groups(*l, 0, frames, n);
        out.trunk_spatial = l;
    }
    {
        auto l = std::make_shared<ad::AttentionLayout>();
        l->rows = frames * n;
        add_temporal_groups(*l, 0, frames, n, m.temporal_window);
        out.trunk_temporal = l;
    }
    {
        auto l = std::make_shared<ad::AttentionLayout>();
        l->rows = refs + frames * n;
        const IndexVector ref_rows = range(0, refs);
        l->groups.push_back({ref_rows, ref_rows, {}});
        for (Index f = 0; f < frames; ++f) {
            IndexVector keys = ref_rows;
            const IndexVector own = range(refs + f * n, n);
            keys.insert(keys.end(), own.begin(), own.end());
            RowVector kb;
            if (bias != nullptr) {
                kb = RowVector::Zero(refs + n);
                const RowVector& b = bias->biases[static_cast<std::size_t>(f)];
                for (Index k = 0; k < m.views; ++k) {
                    kb.segment(k * n, n).setConstant(b(k));
                }
            }
            l->groups.push_back({own, std::move(keys), std::move(kb)});
        }
        out.adapter_spatial = l;
    }
    {
        auto l = std::make_shared<ad::AttentionLayout>();
        l->rows = refs + frames * n;
        add_temporal_groups(*l, refs, frames, n, m.temporal_window);
        out.adapter_temporal = l;
    }
    return out;
}

// (T*S*S) x 4: masked source, mask channel.
Matrix source_channels(const ConditionSet& c, bool composed) {
    const Index s = c.source.front().height;
    const Index px = s * s;
    Matrix m(c.frames() * px, 4);
    for (Index t = 0; t < c.frames(); ++t) {
        const auto i = static_cast<std::size_t>(t);
        const Image& f = composed ? c.composed[i] : c.source[i];
        for (Index y = 0; y < s; ++y) {
            for (Index x = 0; x < s; ++x) {
                const Index r = t * px + y * s + x;
                const bool in = c.hoi[i].at(y, x);
                if (composed || !in) {
                    m.row(r).head<3>() = f.pixels.row(y * s + x);
                } else {
                    m.row(r).head<3>().setZero();
                }
                m(r, 3) = in ? 1.0 : 0.0;
            }
        }
    }
    return m;
}

} // namespace

Refiner make_refiner(ParamStore& params, const ModelConfig& cfg, Index size, Index views, Rng& rng) {
    if (views < 1) {
        throw std::invalid_argument("refiner needs at least one reference view");
    }
    if (size % cfg.patch != 0) {
        throw std::invalid_argument("frame size must be a multiple of the patch size");
    }
    Refiner m;
    const Index d = cfg.video_d;
    m.width = d;
    m.size = size;
    m.patch = cfg.patch;
    m.views = views;
    m.heads = cfg.heads;
    m.temporal_window = cfg.temporal_window;
    const Index p2 = cfg.patch * cfg.patch;
    m.x_embed = nn::make_linear(params, "refiner.x_embed", p2 * 3, d, rng);
    m.source_embed = nn::make_linear(params, "refiner.source_embed", p2 * 4, d, rng);
    m.time_embed = nn::make_linear(params, "refiner.time_embed", d, d, rng);
    for (int l = 0; l < cfg.video_layers; ++l) {
        m.trunk.push_back(make_video_block(params, "refiner.trunk" + std::to_string(l), d, cfg.heads, rng));
    }
    m.out_norm = nn::make_layer_norm(params, "refiner.out_norm", d);
    m.out = nn::make_linear(params, "refiner.out", d, p2 * 3, rng, 0.1);

    m.cond_embed = nn::make_linear(params, "refiner.adapter.cond_embed", p2 * 4, d, rng);
    m.ref_embed = nn::make_linear(params, "refiner.adapter.ref_embed", p2 * 3, d, rng);
    m.cond_type = params.add("refiner.adapter.cond_type", small_normal(1, d, rng));
    m.ref_type = params.add("refiner.adapter.ref_type", small_normal(1, d, rng));
    m.view_embed = params.add("refiner.adapter.view_embed", small_normal(views, d, rng));
    for (int depth : adapter_depths(cfg)) {
        const std::string name = "refiner.adapter.block" + std::to_string(depth);
        AdapterBlock a;
        a.block = clone_video_block(params, m.trunk[static_cast<std::size_t>(depth)], name);
        a.depth = depth;
        a.hint = nn::make_linear(params, name + ".hint", d, d, rng, 0.0);
        m.adapter.push_back(a);
    }
    const Index grid = size / cfg.patch;
    m.position = nn::sinusoidal_2d(grid, grid, d);
    return m;
}

Matrix stack_frames(const Video& frames) {
    if (frames.empty()) {
        return Matrix(0, 3);
    }
    const Index px = frames.front().pixels.rows();
    Matrix m(static_cast<Index>(frames.size()) * px, 3);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        m.middleRows(static_cast<Index>(i) * px, px) = frames[i].pixels;
    }
    return m;
}

Video unstack_frames(const Matrix& stacked, Index frames, Index size) {
    Video out;
    const Index px = size * size;
    for (Index t = 0; t < frames; ++t) {
        Image img(size, size);
        img.pixels = stacked.middleRows(t * px, px);
        out.push_back(std::move(img));
    }
    return out;
}

ad::Var velocity(ad::Tape& tape, const Refiner& model, ad::Var x_t, double t, const ConditionSet& c,
                 const ae::BiasSpec* bias) {
    const Index frames = c.frames();
    const Index s = model.size;
    const Index n = model.tokens_per_frame();
    const Index k = model.views;
    if (frames == 0 || c.source.front().height != s || c.source.front().width != s) {
        throw std::invalid_argument("refiner condition does not match the model frame size");
    }
    if (x_t.rows() != frames * s * s || x_t.cols() != 3) {
        throw std::invalid_argument("refiner state has the wrong shape");
    }
    if (static_cast<Index>(c.refs.size()) != k) {
        throw std::invalid_argument("refiner expects " + std::to_string(k) + " reference views, got " +
                                    std::to_string(c.refs.size()));
    }
    const bool biased = bias != nullptr && bias->alpha != 0.0;
    if (biased && static_cast<Index>(bias->biases.size()) != frames) {
        throw std::invalid_argument("attention bias needs one entry per frame");
    }
    const Layouts layouts = make_layouts(model, frames, biased ? bias : nullptr);

    Matrix pos(frames * n, model.width);
    const Matrix frame_pos = nn::sinusoidal_1d(frames, model.width);
    for (Index f = 0; f < frames; ++f) {
        pos.middleRows(f * n, n) = model.position.rowwise() + frame_pos.row(f);
    }
    const ad::Var pos_v = tape.constant(std::move(pos));
    const ad::Var temb =
        nn::apply(tape, model.time_embed, tape.constant(nn::sinusoidal_scalar(1000.0 * t, model.width)));

    ad::Var h = nn::apply(tape, model.x_embed, nn::patchify(x_t, frames, s, s, 3, model.patch));
    h = h + nn::apply(tape, model.source_embed,
                      nn::patchify(tape.constant(source_channels(c, false)), frames, s, s, 4, model.patch));
    h = h + pos_v + temb;

    std::vector<ad::Var> hints;
    if (!model.adapter.empty()) {
        ad::Var cond = nn::apply(tape, model.cond_embed,
                                 nn::patchify(tape.constant(source_channels(c, true)), frames, s, s, 4, model.patch));
        cond = cond + pos_v + temb + tape.param(model.cond_type) + h;
        Matrix stacked(k * s * s, 3);
        Matrix ref_pos(k * n, model.width);
        auto view_rows = std::make_shared<IndexVector>(static_cast<std::size_t>(k * n));
        for (Index i = 0; i < k; ++i) {
            const Image& r = c.refs[static_cast<std::size_t>(i)];
            if (r.height != s || r.width != s) {
                throw std::invalid_argument("reference view size mismatch");
            }
            stacked.middleRows(i * s * s, s * s) = r.pixels;
            ref_pos.middleRows(i * n, n) = model.position;
            for (Index j = 0; j < n; ++j) {
                (*view_rows)[static_cast<std::size_t>(i * n + j)] = i;
            }
        }
        ad::Var refs =
            nn::apply(tape, model.ref_embed, nn::patchify(tape.constant(std::move(stacked)), k, s, s, 3, model.patch));
        refs = refs + tape.constant(std::move(ref_pos)) + ad::gather_rows(tape.param(model.view_embed), view_rows) +
               tape.param(model.ref_type);
        ad::Var a = ad::concat_rows({refs, cond});
        for (const auto& blk : model.adapter) {
            a = apply_block(tape, blk.block, a, layouts.adapter_spatial, layouts.adapter_temporal);
            hints.push_back(nn::apply(tape, blk.hint, ad::slice_rows(a, k * n, frames * n)));
        }
    }

    for (std::size_t l = 0; l < model.trunk.size(); ++l) {
        h = apply_block(tape, model.trunk[l], h, layouts.trunk_spatial, layouts.trunk_temporal);
        for (std::size_t j = 0; j < model.adapter.size(); ++j) {
            if (model.adapter[j].depth == static_cast<int>(l)) {
                h = h + hints[j];
            }
        }
    }
    h = nn::apply(tape, model.out, nn::apply(tape, model.out_norm, h));
    return nn::unpatchify(h, frames, s, s, 3, model.patch);
}

Video sample_video(const ParamStore& params, const Refiner& model, const ConditionSet& c, int steps, double alpha,
                   std::uint64_t seed, SampleTrace* trace) {
    const Index frames = c.frames();
    const Index s = model.size;
    ae::BiasSpec bias;
    if (alpha != 0.0) {
        if (static_cast<Index>(c.weights.size()) != frames) {
            throw std::invalid_argument("attention enhancement needs view weights for every frame");
        }
        bias = ae::logit_bias(c.weights, alpha);
    }
    double bias_norm = 0.0;
    for (const auto& b : bias.biases) {
        bias_norm += b.squaredNorm();
    }
    bias_norm = std::sqrt(bias_norm);

    Rng rng(mix_seed(seed, 0xf10));
    Matrix eps(frames * s * s, 3);
    for (Index i = 0; i < eps.size(); ++i) {
        eps.data()[i] = rng.normal();
    }
    const Matrix src = stack_frames(c.source);
    std::vector<Index> outside;
    for (Index t = 0; t < frames; ++t) {
        const Mask& m = c.hoi[static_cast<std::size_t>(t)];
        for (Index p = 0; p < s * s; ++p) {
            if (m.bits(p / s, p % s) == 0) {
                outside.push_back(t * s * s + p);
            }
        }
    }
    const VelocityFn v = [&](const Matrix& x, double t) {
        if (trace != nullptr) {
            trace->t.push_back(t);
            trace->bias_norm.push_back(bias_norm);
        }
        ad::Tape tape(&params);
        return velocity(tape, model, tape.constant(x), t, c, alpha != 0.0 ? &bias : nullptr).value();
    };
    const ConstrainFn keep = [&](Matrix& x, double t) {
        for (Index r : outside) {
            x.row(r) = (1.0 - t) * src.row(r) + t * eps.row(r);
        }
    };
    const Matrix x = integrate_flow(eps, steps, v, keep);
    Video out = unstack_frames(x, frames, s);
    for (auto& f : out) {
        f = clamp01(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------- training

Stage2Model make_stage2(const Config& cfg) {
    Stage2Model m;
    Rng rng(mix_seed(cfg.seed, 0x52e2));
    m.refiner = make_refiner(m.params, cfg.model, cfg.data.size, cfg.data.references, rng);
    if (cfg.train.stage2.adapter_only) {
        for (std::size_t i = 0; i < m.params.size(); ++i) {
            m.params[i].set_requires_grad(m.params.name(i).rfind("refiner.adapter.", 0) == 0);
        }
    }
    return m;
}

Stage2Episode prepare_stage2(const synth::Episode& ep) {
    Stage2Episode s;
    s.frames = ep.frames;
    s.hoi = ep.hoi_masks;
    s.object = ep.object_masks;
    s.crops = synth::clean_object_crops(ep);
    s.refs = ep.refs;
    s.delta_t = ep.delta_t;
    return s;
}

std::vector<Image> proxy_guidance(const Stage2Episode& ep, bool augment, const AugmentConfig& mag,
                                  std::uint64_t seed) {
    const Index frames = static_cast<Index>(ep.frames.size());
    const Index count = (frames - 1) / ep.delta_t + 1;
    std::vector<Image> out;
    for (Index g = 0; g < count; ++g) {
        const Image& crop = ep.crops[static_cast<std::size_t>(g * ep.delta_t)];
        out.push_back(augment ? augment_proxy_guidance(crop, mix_seed(seed, static_cast<std::uint64_t>(g)), mag)
                              : crop);
    }
    return out;
}

namespace {

MaskColumn stack_masks(const MaskSequence& masks) {
    const Index px = masks.front().height * masks.front().width;
    MaskColumn m(static_cast<Index>(masks.size()) * px);
    for (std::size_t t = 0; t < masks.size(); ++t) {
        const auto& b = masks[t].bits;
        for (Index p = 0; p < px; ++p) {
            m(static_cast<Index>(t) * px + p) = b(p / masks[t].width, p % masks[t].width);
        }
    }
    return m;
}

struct Draw {
    std::size_t episode = 0;
    double t = 0.0;
    std::uint64_t seed = 0;
    bool drop = false;
};

Matrix draw_noise(Index rows, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xe95));
    Matrix eps(rows, 3);
    for (Index i = 0; i < eps.size(); ++i) {
        eps.data()[i] = rng.normal();
    }
    return eps;
}

} // namespace

ad::Var stage2_loss(ad::Tape& tape, const Stage2Model& model, const Stage2Episode& ep, double t, const Matrix& eps,
                    const std::vector<Image>& guidance, double beta) {
    const ConditionSet c = compose_condition(ep.frames, ep.hoi, ep.object, guidance, ep.delta_t, ep.refs);
    const FlowPair fp = flow_pair(stack_frames(ep.frames), eps, t);
    const ad::Var v = velocity(tape, model.refiner, tape.constant(fp.x_t), t, c);
    return losses::hoi_weighted_fm_loss(v, tape.constant(fp.u_t), losses::hoi_weights(stack_masks(ep.hoi), beta));
}

std::vector<double> train_stage2(Stage2Model& model, const std::vector<Stage2Episode>& episodes, const Config& cfg,
                                 const Progress& progress) {
    if (episodes.empty()) {
        throw std::invalid_argument("stage two training needs at least one episode");
    }
    const auto& s2 = cfg.train.stage2;
    AdamConfig adam;
    adam.lr = s2.lr;
    adam.grad_clip = s2.grad_clip;
    AdamState state;
    Rng rng(mix_seed(cfg.seed, 0x5ec0));
    const auto batch = static_cast<std::size_t>(s2.batch);
    std::vector<double> log;
    for (int step = 0; step < s2.steps; ++step) {
        std::vector<Draw> draws(batch);
        for (auto& d : draws) {
            d.episode = rng.below(episodes.size());
            d.t = rng.uniform();
            d.seed = rng.next();
            d.drop = rng.uniform() < s2.guidance_dropout;
        }
        std::vector<Gradients> grads(batch);
        std::vector<double> losses(batch);
        parallel_for(batch, [&](std::size_t b) {
            const Draw& d = draws[b];
            const Stage2Episode& ep = episodes[d.episode];
            const Matrix eps = draw_noise(static_cast<Index>(ep.frames.size()) * ep.frames.front().pixels.rows(), d.seed);
            const auto guidance =
                d.drop ? std::vector<Image>{} : proxy_guidance(ep, s2.augment, cfg.train.augment, d.seed);
            ad::Tape tape(&model.params);
            const ad::Var loss = stage2_loss(tape, model, ep, d.t, eps, guidance, s2.beta);
            losses[b] = loss.value()(0, 0);
            grads[b] = tape.backward(loss);
        });
        Gradients total = std::move(grads[0]);
        double loss = losses[0];
        for (std::size_t b = 1; b < batch; ++b) {
            accumulate(total, grads[b]);
            loss += losses[b];
        }
        scale(total, 1.0 / static_cast<double>(batch));
        loss /= static_cast<double>(batch);
        adam_step(model.params, total, state, adam);
        log.push_back(loss);
        if (progress) {
            progress(step, loss);
        }
    }
    return log;
}

double stage2_eval_loss(const Stage2Model& model, const std::vector<Stage2Episode>& episodes, const Config& cfg,
                        std::uint64_t seed) {
    if (episodes.empty()) {
        throw std::invalid_argument("no evaluation episodes");
    }
    const auto& s2 = cfg.train.stage2;
    std::vector<double> losses(episodes.size());
    parallel_for(episodes.size(), [&](std::size_t i) {
        Rng rng(mix_seed(seed, i));
        const double t = rng.uniform();
        const std::uint64_t draw = rng.next();
        const Stage2Episode& ep = episodes[i];
        const Matrix eps = draw_noise(static_cast<Index>(ep.frames.size()) * ep.frames.front().pixels.rows(), draw);
        ad::Tape tape(&model.params);
        losses[i] = stage2_loss(tape, model, ep, t, eps, proxy_guidance(ep, s2.augment, cfg.train.augment, draw),
                                s2.beta)
                        .value()(0, 0);
    });
    double total = 0.0;
    for (double l : losses) {
        total += l;
    }
    return total / static_cast<double>(losses.size());
}

} // namespace mvhoi::refiner
