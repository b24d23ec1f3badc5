#pragma once

#include "mvhoi/attention_enhance.hpp"
#include "mvhoi/config.hpp"
#include "mvhoi/image.hpp"
#include "mvhoi/nn.hpp"
#include "mvhoi/synthworld.hpp"

#include <functional>
#include <vector>

namespace mvhoi::refiner {

// Rectified-flow interpolant x_t = (1 - t) x0 + t eps and velocity eps - x0.
struct FlowPair {
    Matrix x_t;
    Matrix u_t;
};
FlowPair flow_pair(const Matrix& x0, const Matrix& eps, double t);

// Euler integration from t = 1 to t = 0 in `steps` uniform steps starting at
// eps. `constrain(x, t)` runs after every step with the new time.
using VelocityFn = std::function<Matrix(const Matrix& x, double t)>;
using ConstrainFn = std::function<void(Matrix& x, double t)>;
Matrix integrate_flow(const Matrix& eps, int steps, const VelocityFn& velocity, const ConstrainFn& constrain = {});

// Affine warp, brightness/contrast jitter, blur and noise, each skipped when
// its magnitude is zero. Deterministic per seed.
Image augment_proxy_guidance(const Image& crop, std::uint64_t seed, const AugmentConfig& mag);

struct ConditionSet {
    Video source;             // unmodified frames, kept outside M_HOI
    Video composed;           // source with M_HOI zeroed and guidance pasted inside it
    MaskSequence hoi;
    MaskSequence object;      // visible object masks, used for guidance windows
    std::vector<Image> refs;
    std::vector<uoa::ViewWeights> weights;  // empty, or one per frame
    bool has_guidance = false;

    Index frames() const { return static_cast<Index>(source.size()); }
};

// Each frame takes the nearest guidance crop (ties toward the earlier one),
// resized into the padded window of its visible object mask and written only
// inside M_HOI. Empty `guidance` leaves M_HOI zeroed.
ConditionSet compose_condition(const Video& source, const MaskSequence& hoi, const MaskSequence& object,
                               const std::vector<Image>& guidance, Index delta_t, const std::vector<Image>& refs);

struct VideoBlock {
    nn::SelfAttention spatial;
    nn::SelfAttention temporal;
    nn::Mlp mlp;
    int heads = 1;
};

struct AdapterBlock {
    VideoBlock block;  // clone of the trunk block at `depth`
    int depth = 0;
    nn::Linear hint;   // zero-initialized, added to the trunk after block `depth`
};

struct Refiner {
    nn::Linear x_embed;       // noisy video patches
    nn::Linear source_embed;  // masked source + mask patches
    nn::Linear cond_embed;    // composed video + mask patches
    nn::Linear ref_embed;
    nn::Linear time_embed;
    std::size_t cond_type = 0;
    std::size_t ref_type = 0;
    std::size_t view_embed = 0;  // K x d
    std::vector<VideoBlock> trunk;
    std::vector<AdapterBlock> adapter;
    nn::LayerNorm out_norm;
    nn::Linear out;
    Index width = 0;
    Index size = 0;
    Index patch = 0;
    Index views = 0;
    int heads = 1;
    int temporal_window = 0;
    Matrix position;  // tokens per frame x d

    Index tokens_per_frame() const { return (size / patch) * (size / patch); }
};

std::vector<int> adapter_depths(const ModelConfig& cfg);
Refiner make_refiner(ParamStore& params, const ModelConfig& cfg, Index size, Index views, Rng& rng);

// Predicted velocity for the stacked frames x_t ((T*S*S) x 3). `bias`, when
// given with a nonzero strength, is added to adapter logits from frame tokens
// to reference tokens.
ad::Var velocity(ad::Tape& tape, const Refiner& model, ad::Var x_t, double t, const ConditionSet& c,
                 const ae::BiasSpec* bias = nullptr);

Matrix stack_frames(const Video& frames);
Video unstack_frames(const Matrix& stacked, Index frames, Index size);

struct SampleTrace {
    std::vector<double> t;
    std::vector<double> bias_norm;
};

// Outside M_HOI the state is reset to the source noised to the current level,
// which is the source itself at t = 0.
Video sample_video(const ParamStore& params, const Refiner& model, const ConditionSet& c, int steps, double alpha,
                   std::uint64_t seed, SampleTrace* trace = nullptr);

struct Stage2Model {
    ParamStore params;
    Refiner refiner;
};

Stage2Model make_stage2(const Config& cfg);

struct Stage2Episode {
    Video frames;
    MaskSequence hoi;
    MaskSequence object;
    std::vector<Image> crops;  // clean object crops, the proxy guidance source
    std::vector<Image> refs;
    Index delta_t = 4;
};

Stage2Episode prepare_stage2(const synth::Episode& ep);

// Proxy guidance at stride delta_t, degraded when `augment` is set.
std::vector<Image> proxy_guidance(const Stage2Episode& ep, bool augment, const AugmentConfig& mag,
                                  std::uint64_t seed);

// HOI-weighted flow-matching loss of one (episode, t, eps) draw.
ad::Var stage2_loss(ad::Tape& tape, const Stage2Model& model, const Stage2Episode& ep, double t,
                    const Matrix& eps, const std::vector<Image>& guidance, double beta);

using Progress = std::function<void(int step, double loss)>;

std::vector<double> train_stage2(Stage2Model& model, const std::vector<Stage2Episode>& episodes, const Config& cfg,
                                 const Progress& progress = {});

// Mean loss over fixed draws (one per episode) seeded by `seed`.
double stage2_eval_loss(const Stage2Model& model, const std::vector<Stage2Episode>& episodes, const Config& cfg,
                        std::uint64_t seed);

} // namespace mvhoi::refiner
