#pragma once

#include "mvhoi/autodiff.hpp"
#include "mvhoi/rng.hpp"

#include <memory>
#include <string>

namespace mvhoi::nn {

struct Linear {
    std::size_t weight = 0;
    std::size_t bias = 0;
};

// Weights ~ N(0, (gain / sqrt(in))^2); gain = 0 gives an all-zero layer.
Linear make_linear(ParamStore& params, const std::string& name, Index in, Index out, Rng& rng, double gain = 1.0);
ad::Var apply(ad::Tape& tape, const Linear& layer, ad::Var x);

struct LayerNorm {
    std::size_t gain = 0;
    std::size_t bias = 0;
};

LayerNorm make_layer_norm(ParamStore& params, const std::string& name, Index width);
ad::Var apply(ad::Tape& tape, const LayerNorm& norm, ad::Var x);

struct SelfAttention {
    LayerNorm norm;
    Linear qkv;
    Linear proj;
};

struct Mlp {
    LayerNorm norm;
    Linear fc1;
    Linear fc2;
};

// Pre-norm transformer block.
struct Block {
    SelfAttention attn;
    Mlp mlp;
    int heads = 1;
};

SelfAttention make_self_attention(ParamStore& params, const std::string& name, Index width, Rng& rng);
Mlp make_mlp(ParamStore& params, const std::string& name, Index width, Rng& rng);
Block make_block(ParamStore& params, const std::string& name, Index width, int heads, Rng& rng);

// x + proj(attention(norm(x))).
ad::Var attend(ad::Tape& tape, const SelfAttention& attn, ad::Var x,
               std::shared_ptr<const ad::AttentionLayout> layout, int heads, ad::AttentionTap* tap = nullptr);
// x + fc2(gelu(fc1(norm(x)))).
ad::Var feed_forward(ad::Tape& tape, const Mlp& mlp, ad::Var x);
ad::Var apply(ad::Tape& tape, const Block& block, ad::Var x, std::shared_ptr<const ad::AttentionLayout> layout,
              ad::AttentionTap* tap = nullptr);

// Copies every tensor of `src` into freshly named parameters under `name`.
Linear clone_linear(ParamStore& params, const Linear& src, const std::string& name);
LayerNorm clone_layer_norm(ParamStore& params, const LayerNorm& src, const std::string& name);
SelfAttention clone_self_attention(ParamStore& params, const SelfAttention& src, const std::string& name);
Mlp clone_mlp(ParamStore& params, const Mlp& src, const std::string& name);

std::shared_ptr<const ad::AttentionLayout> full_layout(Index rows);

// Fixed sinusoidal encodings.
Matrix sinusoidal_2d(Index grid_h, Index grid_w, Index width);
Matrix sinusoidal_1d(Index count, Index width);
RowVector sinusoidal_scalar(double value, Index width);

// Index maps between a stack of `count` images stored as (count*h*w) x c and
// patch tokens stored as (count*(h/p)*(w/p)) x (p*p*c).
std::shared_ptr<const IndexVector> patchify_index(Index count, Index h, Index w, Index c, Index p);
std::shared_ptr<const IndexVector> unpatchify_index(Index count, Index h, Index w, Index c, Index p);

ad::Var patchify(ad::Var images, Index count, Index h, Index w, Index c, Index p);
ad::Var unpatchify(ad::Var tokens, Index count, Index h, Index w, Index c, Index p);

} // namespace mvhoi::nn
