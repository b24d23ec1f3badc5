#include "mvhoi/eval.hpp"

#include "mvhoi/metrics.hpp"
#include "mvhoi/parallel.hpp"

#include <fstream>
#include <stdexcept>

namespace mvhoi::eval {

std::string to_string(Mode m) { return m == Mode::Self ? "self" : "cross"; }

std::string to_string(ArmKind a) {
    switch (a) {
    case ArmKind::Baseline: return "baseline";
    case ArmKind::Crg: return "crg";
    case ArmKind::CrgAe: return "crg+ae";
    }
    return "baseline";
}

Mode mode_from_string(const std::string& s) {
    if (s == "self") {
        return Mode::Self;
    }
    if (s == "cross") {
        return Mode::Cross;
    }
    throw std::invalid_argument("unknown reenactment mode: " + s);
}

ArmKind arm_from_string(const std::string& s) {
    if (s == "baseline") {
        return ArmKind::Baseline;
    }
    if (s == "crg") {
        return ArmKind::Crg;
    }
    if (s == "crg+ae") {
        return ArmKind::CrgAe;
    }
    throw std::invalid_argument("unknown ablation arm: " + s);
}

sched::Arm arm_settings(ArmKind arm, double alpha) {
    switch (arm) {
    case ArmKind::Baseline: return {false, 0.0};
    case ArmKind::Crg: return {true, 0.0};
    case ArmKind::CrgAe: return {true, alpha};
    }
    return {};
}

EpisodeCase make_case(const Config& cfg, const data::EpisodeSpec& spec, Mode mode, const std::string& id) {
    const synth::Episode src = data::make_episode(cfg, spec);
    const synth::Episode target = mode == Mode::Self ? src : data::make_cross_target(cfg, spec);
    EpisodeCase c;
    c.id = id;
    c.source.frames = src.frames;
    c.source.object = src.object_masks;
    c.source.hoi = src.hoi_masks;
    c.source.refs = target.refs;
    c.source.o_init = synth::render_object_crop(target.object, target.poses.front(), target.size());
    c.ground_truth = target.frames;
    for (const auto& p : target.poses) {
        c.gt_azimuths.push_back(p.azimuth);
    }
    c.ref_azimuths = target.ref_azimuths;
    return c;
}

std::vector<EpisodeCase> make_cases(const Config& cfg, data::Split split, Mode mode, int limit) {
    auto specs = data::split_specs(cfg, split);
    if (limit >= 0 && static_cast<std::size_t>(limit) < specs.size()) {
        specs.resize(static_cast<std::size_t>(limit));
    }
    std::vector<EpisodeCase> cases(specs.size());
    parallel_for(specs.size(), [&](std::size_t i) {
        char id[32];
        std::snprintf(id, sizeof(id), "ep_%05zu", i);
        cases[i] = make_case(cfg, specs[i], mode, id);
    });
    return cases;
}

ClipRunner pipeline_runner(const sched::Pipeline& p, const sched::Arm& arm, int steps, Index delta_t,
                           std::uint64_t seed) {
    return [p, arm, steps, delta_t, seed](const EpisodeCase& c) {
        return sched::run_clip(p, c.source, arm, steps, delta_t, seed);
    };
}

double object_sharpness(const Video& video, const MaskSequence& region) {
    if (video.size() != region.size() || video.empty()) {
        throw std::invalid_argument("sharpness needs one mask per frame");
    }
    double total = 0.0;
    int counted = 0;
    for (std::size_t i = 0; i < video.size(); ++i) {
        if (region[i].empty()) {
            continue;
        }
        total += laplacian_variance(video[i], &region[i]);
        ++counted;
    }
    return counted == 0 ? 0.0 : total / counted;
}

ProtocolReport run_protocol(Mode mode, ArmKind arm, double alpha, const std::vector<EpisodeCase>& cases,
                            const ClipRunner& run) {
    ProtocolReport r;
    r.mode = mode;
    r.arm = arm;
    r.alpha = arm == ArmKind::CrgAe ? alpha : 0.0;
    r.episodes.resize(cases.size());
    parallel_for(cases.size(), [&](std::size_t i) {
        const EpisodeCase& c = cases[i];
        const sched::ClipResult clip = run(c);
        const Index frames = static_cast<Index>(clip.video.size());
        if (frames != static_cast<Index>(c.ground_truth.size())) {
            throw std::runtime_error("pipeline output length differs from ground truth for " + c.id);
        }
        EpisodeMetrics m;
        m.id = c.id;
        m.psnr = metrics::capped(metrics::psnr(clip.video, c.ground_truth));
        m.ssim = metrics::ssim(clip.video, c.ground_truth);
        m.sharpness = object_sharpness(clip.video, c.source.hoi);
        if (!clip.coarse_weights.empty()) {
            const Index stride = clip.coarse_weights.size() > 1
                                     ? (frames - 1) / static_cast<Index>(clip.coarse_weights.size() - 1)
                                     : 1;
            std::vector<RowVector> w;
            std::vector<double> gt;
            for (std::size_t g = 0; g < clip.coarse_weights.size(); ++g) {
                w.push_back(clip.coarse_weights[g].w);
                gt.push_back(c.gt_azimuths[g * static_cast<std::size_t>(stride)]);
            }
            m.retrieval = metrics::retrieval_accuracy(w, gt, c.ref_azimuths);
        }
        r.episodes[i] = m;
    });
    for (const auto& e : r.episodes) {
        r.psnr += e.psnr;
        r.ssim += e.ssim;
        r.retrieval += e.retrieval;
        r.sharpness += e.sharpness;
    }
    r.count = static_cast<int>(r.episodes.size());
    if (r.count > 0) {
        r.psnr /= r.count;
        r.ssim /= r.count;
        r.retrieval /= r.count;
        r.sharpness /= r.count;
    }
    return r;
}

nlohmann::json to_json(const ProtocolReport& r) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : r.episodes) {
        eps.push_back({{"id", e.id},
                       {"psnr", e.psnr},
                       {"ssim", e.ssim},
                       {"retrieval", e.retrieval},
                       {"sharpness", e.sharpness}});
    }
    return {{"mode", to_string(r.mode)},
            {"arm", to_string(r.arm)},
            {"alpha", r.alpha},
            {"count", r.count},
            {"psnr", r.psnr},
            {"ssim", r.ssim},
            {"retrieval", r.retrieval},
            {"sharpness", r.sharpness},
            {"episodes", eps}};
}

void write_reports(const std::filesystem::path& dir, const std::vector<ProtocolReport>& reports) {
    std::filesystem::create_directories(dir);
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : reports) {
        all.push_back(to_json(r));
    }
    std::ofstream(dir / "report.json") << all.dump(2) << '\n';
    std::ofstream csv(dir / "report.csv");
    csv << "mode,arm,alpha,episode,psnr,ssim,retrieval,sharpness\n";
    csv.precision(10);
    for (const auto& r : reports) {
        for (const auto& e : r.episodes) {
            csv << to_string(r.mode) << ',' << to_string(r.arm) << ',' << r.alpha << ',' << e.id << ',' << e.psnr
                << ',' << e.ssim << ',' << e.retrieval << ',' << e.sharpness << '\n';
        }
    }
}

double drift_slope(const std::vector<sched::SegmentDiag>& segments) {
    const auto n = static_cast<double>(segments.size());
    if (segments.size() < 2) {
        return 0.0;
    }
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        mx += static_cast<double>(i);
        my += segments[i].psnr;
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const double dx = static_cast<double>(i) - mx;
        sxy += dx * (segments[i].psnr - my);
        sxx += dx * dx;
    }
    return sxy / sxx;
}

LongReport compare_long(const sched::Pipeline& p, const std::vector<EpisodeCase>& cases, const sched::SegmentPlan& plan,
                        Index delta_t, std::uint64_t seed) {
    LongReport r;
    r.episodes.resize(cases.size());
    parallel_for(cases.size(), [&](std::size_t i) {
        const EpisodeCase& c = cases[i];
        sched::SegmentPlan cross = plan;
        cross.naive = false;
        sched::SegmentPlan naive = plan;
        naive.naive = true;
        const auto a = sched::cross_iterative_infer(p, c.source, cross, delta_t, seed, &c.ground_truth);
        const auto b = sched::cross_iterative_infer(p, c.source, naive, delta_t, seed, &c.ground_truth);
        LongEpisode e;
        e.id = c.id;
        e.cross_final_psnr = a.segments.back().psnr;
        e.naive_final_psnr = b.segments.back().psnr;
        e.cross_drift = drift_slope(a.segments);
        e.naive_drift = drift_slope(b.segments);
        r.episodes[i] = e;
    });
    int wins = 0;
    for (const auto& e : r.episodes) {
        wins += e.cross_final_psnr >= e.naive_final_psnr ? 1 : 0;
    }
    r.win_rate = r.episodes.empty() ? 0.0 : static_cast<double>(wins) / static_cast<double>(r.episodes.size());
    return r;
}

nlohmann::json to_json(const LongReport& r) {
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : r.episodes) {
        eps.push_back({{"id", e.id},
                       {"cross_final_psnr", e.cross_final_psnr},
                       {"naive_final_psnr", e.naive_final_psnr},
                       {"cross_drift", e.cross_drift},
                       {"naive_drift", e.naive_drift}});
    }
    return {{"win_rate", r.win_rate}, {"episodes", eps}};
}

} // namespace mvhoi::eval
