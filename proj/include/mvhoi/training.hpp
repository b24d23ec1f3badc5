#pragma once

#include "mvhoi/config.hpp"
#include "mvhoi/losses.hpp"
#include "mvhoi/motion.hpp"
#include "mvhoi/optim.hpp"
#include "mvhoi/synthworld.hpp"
#include "mvhoi/uoa.hpp"

#include <functional>
#include <vector>

namespace mvhoi::train {

struct Stage1Model {
    ParamStore params;
    motion::MotionEncoder motion;
    uoa::Uoa uoa;
};

Stage1Model make_stage1(const Config& cfg);

// Per-episode tensors consumed by Stage I.
struct Stage1Episode {
    std::vector<Image> targets;       // clean object crops O_t
    std::vector<Image> motion_crops;  // crops of the observed frames
    std::vector<Image> refs;
    std::vector<double> azimuths;
    std::vector<double> ref_azimuths;
};

Stage1Episode prepare_stage1(const synth::Episode& ep);

struct Stage1Sample {
    std::size_t episode = 0;
    Index t = 0;
};

// Loss and prediction for predicting O_{t+dt} from ground-truth O_t.
struct Stage1Eval {
    ad::Var loss;
    uoa::Output out;
};
Stage1Eval stage1_forward(ad::Tape& tape, const Stage1Model& model, const Stage1Episode& ep, Index t, Index delta_t,
                          const losses::Stage1Weights& weights);

using Progress = std::function<void(int step, double loss)>;

struct TrainLog {
    std::vector<double> loss;  // mean batch loss per step
};

TrainLog train_stage1(Stage1Model& model, const std::vector<Stage1Episode>& episodes, const Config& cfg,
                      const Progress& progress = {});

// Mean Stage I loss over every pair of the given episodes.
double stage1_eval_loss(const Stage1Model& model, const std::vector<Stage1Episode>& episodes, const Config& cfg);

// Held-out Stage I quality against the trivial copy baselines.
struct Stage1Report {
    double step_psnr = 0.0;          // predict O_{t+dt} from ground-truth O_t
    double copy_step_psnr = 0.0;     // O_t as the prediction
    double rollout_psnr = 0.0;       // autoregressive from O_0
    double copy_rollout_psnr = 0.0;  // O_0 repeated
    double retrieval = 0.0;          // argmax(w) vs nearest reference azimuth, spin episodes
    int spin_episodes = 0;
};

Stage1Report stage1_report(const Stage1Model& model, const std::vector<synth::Episode>& episodes, Index delta_t);

} // namespace mvhoi::train
