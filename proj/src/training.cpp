#include "mvhoi/training.hpp"

#include "mvhoi/metrics.hpp"
#include "mvhoi/parallel.hpp"

#include <stdexcept>

namespace mvhoi::train {

Stage1Model make_stage1(const Config& cfg) {
    Stage1Model m;
    Rng rng(mix_seed(cfg.seed, 0x5171));
    m.motion = motion::make_motion_encoder(m.params, cfg.model, cfg.data.size, rng);
    m.uoa = uoa::make_uoa(m.params, cfg.model, cfg.data.size, cfg.data.references, rng);
    return m;
}

Stage1Episode prepare_stage1(const synth::Episode& ep) {
    Stage1Episode s;
    const Index size = ep.size();
    s.targets = synth::clean_object_crops(ep);
    for (Index t = 0; t < ep.length(); ++t) {
        const auto i = static_cast<std::size_t>(t);
        s.motion_crops.push_back(motion::motion_crop(ep.frames[i], ep.object_masks[i], ep.hoi_masks[i], size));
        s.azimuths.push_back(ep.poses[i].azimuth);
    }
    s.refs = ep.refs;
    s.ref_azimuths = ep.ref_azimuths;
    return s;
}

Stage1Eval stage1_forward(ad::Tape& tape, const Stage1Model& model, const Stage1Episode& ep, Index t, Index delta_t,
                          const losses::Stage1Weights& weights) {
    const auto i = static_cast<std::size_t>(t);
    const auto j = static_cast<std::size_t>(t + delta_t);
    if (t < 0 || j >= ep.targets.size()) {
        throw std::out_of_range("stage one pair index out of range");
    }
    const ad::Var m = motion::encode_motion(tape, model.motion, ep.motion_crops[i], ep.motion_crops[j]);
    uoa::Output out = uoa::forward(tape, model.uoa, tape.constant(ep.targets[i].pixels), ep.refs, m);
    out.weights.frame = t;
    const Index s = model.uoa.size;
    const ad::Var loss = losses::stage1_loss(out.pred, tape.constant(ep.targets[j].pixels), s, s, weights);
    return Stage1Eval{loss, out};
}

namespace {

losses::Stage1Weights stage1_weights(const Config& cfg) {
    return losses::Stage1Weights{cfg.train.lambda1, cfg.train.lambda2, cfg.train.lambda3};
}

std::vector<Stage1Sample> all_pairs(const std::vector<Stage1Episode>& episodes, Index delta_t) {
    std::vector<Stage1Sample> samples;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const Index n = static_cast<Index>(episodes[e].targets.size());
        for (Index t = 0; t + delta_t < n; ++t) {
            samples.push_back({e, t});
        }
    }
    return samples;
}

} // namespace

TrainLog train_stage1(Stage1Model& model, const std::vector<Stage1Episode>& episodes, const Config& cfg,
                      const Progress& progress) {
    const Index dt = cfg.data.delta_t;
    const auto samples = all_pairs(episodes, dt);
    if (samples.empty()) {
        throw std::invalid_argument("stage one training needs at least one (t, t + delta_t) pair");
    }
    const auto weights = stage1_weights(cfg);
    AdamConfig adam;
    adam.lr = cfg.train.lr;
    adam.grad_clip = cfg.train.grad_clip;
    AdamState state;
    Rng rng(mix_seed(cfg.seed, 0x5a3d1e));
    const auto batch = static_cast<std::size_t>(cfg.train.batch);
    TrainLog log;
    for (int step = 0; step < cfg.train.steps; ++step) {
        std::vector<Stage1Sample> picks(batch);
        for (auto& p : picks) {
            p = samples[rng.below(samples.size())];
        }
        std::vector<Gradients> grads(batch);
        std::vector<double> losses(batch);
        parallel_for(batch, [&](std::size_t b) {
            ad::Tape tape(&model.params);
            const Stage1Eval ev = stage1_forward(tape, model, episodes[picks[b].episode], picks[b].t, dt, weights);
            losses[b] = ev.loss.value()(0, 0);
            grads[b] = tape.backward(ev.loss);
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
        log.loss.push_back(loss);
        if (progress) {
            progress(step, loss);
        }
    }
    return log;
}

double stage1_eval_loss(const Stage1Model& model, const std::vector<Stage1Episode>& episodes, const Config& cfg) {
    const auto samples = all_pairs(episodes, cfg.data.delta_t);
    if (samples.empty()) {
        throw std::invalid_argument("no evaluation pairs");
    }
    const auto weights = stage1_weights(cfg);
    std::vector<double> losses(samples.size());
    parallel_for(samples.size(), [&](std::size_t i) {
        ad::Tape tape(&model.params);
        losses[i] = stage1_forward(tape, model, episodes[samples[i].episode], samples[i].t, cfg.data.delta_t, weights)
                        .loss.value()(0, 0);
    });
    double total = 0.0;
    for (double l : losses) {
        total += l;
    }
    return total / static_cast<double>(losses.size());
}

Stage1Report stage1_report(const Stage1Model& model, const std::vector<synth::Episode>& episodes, Index delta_t) {
    if (episodes.empty()) {
        throw std::invalid_argument("no held-out episodes");
    }
    struct PerEpisode {
        double step = 0.0;
        double copy_step = 0.0;
        int pairs = 0;
        double rollout = 0.0;
        double copy_rollout = 0.0;
        double hits = 0.0;
        bool spin = false;
    };
    std::vector<PerEpisode> per(episodes.size());
    const Index size = model.uoa.size;
    parallel_for(episodes.size(), [&](std::size_t e) {
        const synth::Episode& ep = episodes[e];
        const Stage1Episode s = prepare_stage1(ep);
        PerEpisode& r = per[e];
        for (Index t = 0; t + delta_t < ep.length(); ++t) {
            const auto i = static_cast<std::size_t>(t);
            const auto j = static_cast<std::size_t>(t + delta_t);
            ad::Tape tape(&model.params);
            const ad::Var m = motion::encode_motion(tape, model.motion, s.motion_crops[i], s.motion_crops[j]);
            const uoa::Output out = uoa::forward(tape, model.uoa, tape.constant(s.targets[i].pixels), s.refs, m);
            Image pred(size, size);
            pred.pixels = out.pred.value().cwiseMax(0.0).cwiseMin(1.0);
            r.step += metrics::capped(metrics::psnr(pred, s.targets[j]));
            r.copy_step += metrics::capped(metrics::psnr(s.targets[i], s.targets[j]));
            ++r.pairs;
        }
        const Index hops = (ep.length() - 1) / delta_t;
        const auto seq = motion::extract_sequence(model.params, model.motion, ep.frames, ep.object_masks, ep.hoi_masks,
                                                  delta_t);
        std::vector<RowVector> motions;
        for (Index g = 0; g < hops; ++g) {
            motions.push_back(seq[static_cast<std::size_t>(g * delta_t)].value);
        }
        const uoa::Rollout roll = uoa::rollout(model.params, model.uoa, s.targets.front(), motions, s.refs);
        std::vector<Image> gt;
        std::vector<Image> copies;
        std::vector<Image> predicted;
        for (Index g = 1; g <= hops; ++g) {
            gt.push_back(s.targets[static_cast<std::size_t>(g * delta_t)]);
            copies.push_back(s.targets.front());
            predicted.push_back(roll.frames[static_cast<std::size_t>(g)]);
        }
        r.rollout = metrics::capped(metrics::psnr(predicted, gt));
        r.copy_rollout = metrics::capped(metrics::psnr(copies, gt));
        r.spin = ep.trajectory.kind == synth::TrajectoryKind::Spin;
        if (r.spin) {
            std::vector<RowVector> w;
            std::vector<double> az;
            for (std::size_t g = 0; g < roll.weights.size(); ++g) {
                w.push_back(roll.weights[g].w);
                az.push_back(s.azimuths[g * static_cast<std::size_t>(delta_t)]);
            }
            r.hits = metrics::retrieval_accuracy(w, az, s.ref_azimuths);
        }
    });
    Stage1Report out;
    int pairs = 0;
    for (const auto& r : per) {
        out.step_psnr += r.step;
        out.copy_step_psnr += r.copy_step;
        pairs += r.pairs;
        out.rollout_psnr += r.rollout;
        out.copy_rollout_psnr += r.copy_rollout;
        if (r.spin) {
            out.retrieval += r.hits;
            ++out.spin_episodes;
        }
    }
    out.step_psnr /= pairs;
    out.copy_step_psnr /= pairs;
    out.rollout_psnr /= static_cast<double>(per.size());
    out.copy_rollout_psnr /= static_cast<double>(per.size());
    if (out.spin_episodes > 0) {
        out.retrieval /= out.spin_episodes;
    }
    return out;
}

} // namespace mvhoi::train
