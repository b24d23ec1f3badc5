#include "mvhoi/nn.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>
#include <tuple>

namespace mvhoi::nn {

Linear make_linear(ParamStore& params, const std::string& name, Index in, Index out, Rng& rng, double gain) {
    Matrix w(in, out);
    const double stddev = gain / std::sqrt(static_cast<double>(in));
    for (Index i = 0; i < w.size(); ++i) {
        w.data()[i] = gain == 0.0 ? 0.0 : rng.normal(0.0, stddev);
    }
    Linear l;
    l.weight = params.add(name + ".weight", std::move(w));
    l.bias = params.add(name + ".bias", Matrix::Zero(1, out));
    return l;
}

ad::Var apply(ad::Tape& tape, const Linear& layer, ad::Var x) {
    return ad::matmul(x, tape.param(layer.weight)) + tape.param(layer.bias);
}

LayerNorm make_layer_norm(ParamStore& params, const std::string& name, Index width) {
    LayerNorm n;
    n.gain = params.add(name + ".gain", Matrix::Ones(1, width));
    n.bias = params.add(name + ".bias", Matrix::Zero(1, width));
    return n;
}

ad::Var apply(ad::Tape& tape, const LayerNorm& norm, ad::Var x) {
    return ad::layer_norm(x, tape.param(norm.gain), tape.param(norm.bias));
}

SelfAttention make_self_attention(ParamStore& params, const std::string& name, Index width, Rng& rng) {
    SelfAttention a;
    a.norm = make_layer_norm(params, name + ".norm", width);
    a.qkv = make_linear(params, name + ".qkv", width, 3 * width, rng);
    a.proj = make_linear(params, name + ".proj", width, width, rng, 0.5);
    return a;
}

Mlp make_mlp(ParamStore& params, const std::string& name, Index width, Rng& rng) {
    Mlp m;
    m.norm = make_layer_norm(params, name + ".norm", width);
    m.fc1 = make_linear(params, name + ".fc1", width, 4 * width, rng);
    m.fc2 = make_linear(params, name + ".fc2", 4 * width, width, rng, 0.5);
    return m;
}

Block make_block(ParamStore& params, const std::string& name, Index width, int heads, Rng& rng) {
    Block b;
    b.attn = make_self_attention(params, name + ".attn", width, rng);
    b.mlp = make_mlp(params, name + ".mlp", width, rng);
    b.heads = heads;
    return b;
}

ad::Var attend(ad::Tape& tape, const SelfAttention& attn, ad::Var x,
               std::shared_ptr<const ad::AttentionLayout> layout, int heads, ad::AttentionTap* tap) {
    const Index d = x.cols();
    ad::Var h = apply(tape, attn.norm, x);
    ad::Var qkv = apply(tape, attn.qkv, h);
    ad::Var q = ad::slice_cols(qkv, 0, d);
    ad::Var k = ad::slice_cols(qkv, d, d);
    ad::Var v = ad::slice_cols(qkv, 2 * d, d);
    ad::Var o = ad::attention(q, k, v, std::move(layout), heads, tap);
    return x + apply(tape, attn.proj, o);
}

ad::Var feed_forward(ad::Tape& tape, const Mlp& mlp, ad::Var x) {
    ad::Var h = apply(tape, mlp.norm, x);
    h = ad::gelu(apply(tape, mlp.fc1, h));
    return x + apply(tape, mlp.fc2, h);
}

ad::Var apply(ad::Tape& tape, const Block& block, ad::Var x, std::shared_ptr<const ad::AttentionLayout> layout,
              ad::AttentionTap* tap) {
    x = attend(tape, block.attn, x, std::move(layout), block.heads, tap);
    return feed_forward(tape, block.mlp, x);
}

Linear clone_linear(ParamStore& params, const Linear& src, const std::string& name) {
    Linear l;
    Matrix w = params[src.weight].value();
    Matrix b = params[src.bias].value();
    l.weight = params.add(name + ".weight", std::move(w));
    l.bias = params.add(name + ".bias", std::move(b));
    return l;
}

LayerNorm clone_layer_norm(ParamStore& params, const LayerNorm& src, const std::string& name) {
    LayerNorm n;
    Matrix g = params[src.gain].value();
    Matrix b = params[src.bias].value();
    n.gain = params.add(name + ".gain", std::move(g));
    n.bias = params.add(name + ".bias", std::move(b));
    return n;
}

SelfAttention clone_self_attention(ParamStore& params, const SelfAttention& src, const std::string& name) {
    SelfAttention a;
    a.norm = clone_layer_norm(params, src.norm, name + ".norm");
    a.qkv = clone_linear(params, src.qkv, name + ".qkv");
    a.proj = clone_linear(params, src.proj, name + ".proj");
    return a;
}

Mlp clone_mlp(ParamStore& params, const Mlp& src, const std::string& name) {
    Mlp m;
    m.norm = clone_layer_norm(params, src.norm, name + ".norm");
    m.fc1 = clone_linear(params, src.fc1, name + ".fc1");
    m.fc2 = clone_linear(params, src.fc2, name + ".fc2");
    return m;
}

std::shared_ptr<const ad::AttentionLayout> full_layout(Index rows) {
    auto layout = std::make_shared<ad::AttentionLayout>();
    ad::AttentionGroup g;
    g.queries.resize(static_cast<std::size_t>(rows));
    for (Index i = 0; i < rows; ++i) {
        g.queries[static_cast<std::size_t>(i)] = i;
    }
    g.keys = g.queries;
    layout->groups.push_back(std::move(g));
    layout->rows = rows;
    return layout;
}

namespace {

void fill_sinusoid(double pos, Index width, double* out) {
    const Index half = width / 2;
    for (Index i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(std::max<Index>(half, 1)));
        out[i] = std::sin(pos * freq);
        out[half + i] = std::cos(pos * freq);
    }
    if (width % 2 == 1) {
        out[width - 1] = 0.0;
    }
}

} // namespace

Matrix sinusoidal_1d(Index count, Index width) {
    Matrix m(count, width);
    for (Index r = 0; r < count; ++r) {
        fill_sinusoid(static_cast<double>(r), width, m.row(r).data());
    }
    return m;
}

RowVector sinusoidal_scalar(double value, Index width) {
    RowVector v(width);
    fill_sinusoid(value, width, v.data());
    return v;
}

Matrix sinusoidal_2d(Index grid_h, Index grid_w, Index width) {
    const Index half = width / 2;
    Matrix m = Matrix::Zero(grid_h * grid_w, width);
    for (Index y = 0; y < grid_h; ++y) {
        for (Index x = 0; x < grid_w; ++x) {
            const Index r = y * grid_w + x;
            fill_sinusoid(static_cast<double>(y), half, m.row(r).data());
            fill_sinusoid(static_cast<double>(x), width - half, m.row(r).data() + half);
        }
    }
    return m;
}

namespace {

using IndexKey = std::tuple<Index, Index, Index, Index, Index, bool>;

std::shared_ptr<const IndexVector> cached_index(const IndexKey& key) {
    static std::mutex mutex;
    static std::map<IndexKey, std::shared_ptr<const IndexVector>> cache;
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) {
        return it->second;
    }
    const auto [count, h, w, c, p, inverse] = key;
    if (p <= 0 || h % p != 0 || w % p != 0) {
        throw std::invalid_argument("image size not divisible by patch size");
    }
    const Index gh = h / p;
    const Index gw = w / p;
    const Index pc = p * p * c;
    auto idx = std::make_shared<IndexVector>(static_cast<std::size_t>(count * h * w * c));
    for (Index n = 0; n < count; ++n) {
        for (Index py = 0; py < gh; ++py) {
            for (Index px = 0; px < gw; ++px) {
                const Index token = (n * gh + py) * gw + px;
                for (Index dy = 0; dy < p; ++dy) {
                    for (Index dx = 0; dx < p; ++dx) {
                        for (Index ch = 0; ch < c; ++ch) {
                            const Index patch_flat = token * pc + (dy * p + dx) * c + ch;
                            const Index image_flat = ((n * h + py * p + dy) * w + px * p + dx) * c + ch;
                            if (inverse) {
                                (*idx)[static_cast<std::size_t>(image_flat)] = patch_flat;
                            } else {
                                (*idx)[static_cast<std::size_t>(patch_flat)] = image_flat;
                            }
                        }
                    }
                }
            }
        }
    }
    cache.emplace(key, idx);
    return idx;
}

} // namespace

std::shared_ptr<const IndexVector> patchify_index(Index count, Index h, Index w, Index c, Index p) {
    return cached_index({count, h, w, c, p, false});
}

std::shared_ptr<const IndexVector> unpatchify_index(Index count, Index h, Index w, Index c, Index p) {
    return cached_index({count, h, w, c, p, true});
}

ad::Var patchify(ad::Var images, Index count, Index h, Index w, Index c, Index p) {
    return ad::gather(images, patchify_index(count, h, w, c, p), count * (h / p) * (w / p), p * p * c);
}

ad::Var unpatchify(ad::Var tokens, Index count, Index h, Index w, Index c, Index p) {
    return ad::gather(tokens, unpatchify_index(count, h, w, c, p), count * h * w, c);
}

} // namespace mvhoi::nn
