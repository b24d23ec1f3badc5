#include "mvhoi/cli.hpp"

#include "mvhoi/attention_enhance.hpp"
#include "mvhoi/checkpoint.hpp"
#include "mvhoi/dataset.hpp"
#include "mvhoi/eval.hpp"
#include "mvhoi/metrics.hpp"
#include "mvhoi/parallel.hpp"
#include "mvhoi/refiner.hpp"
#include "mvhoi/scheduler.hpp"
#include "mvhoi/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace mvhoi::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    std::string config;
    std::vector<std::string> overrides;
    std::string out;  // overrides paths.out
    int episode = -1;
    std::string mode = "cross";
    bool quiet = false;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Config resolve(const Options& o) {
    Config cfg = load_config(o.config, o.overrides);
    if (!o.out.empty()) {
        cfg.paths.out = o.out;
    }
    return cfg;
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << j.dump(2) << '\n';
}

void write_video(const fs::path& dir, const std::string& prefix, const Video& v) {
    fs::create_directories(dir);
    for (std::size_t i = 0; i < v.size(); ++i) {
        char name[48];
        std::snprintf(name, sizeof(name), "%s_%03zu.ppm", prefix.c_str(), i);
        write_ppm(dir / name, v[i]);
    }
}

json weights_json(const std::vector<uoa::ViewWeights>& ws) {
    json out = json::array();
    for (const auto& w : ws) {
        out.push_back({{"frame", w.frame}, {"layer", w.layer}, {"w", std::vector<double>(w.w.data(), w.w.data() + w.w.size())}});
    }
    return out;
}

train::Progress logger(const Options& o, const char* stage, int every, int total) {
    if (o.quiet) {
        return {};
    }
    return [stage, every, total](int step, double loss) {
        if (every > 0 && ((step + 1) % every == 0 || step + 1 == total)) {
            std::fprintf(stderr, "%s step %d/%d loss %.6f\n", stage, step + 1, total, loss);
        }
    };
}

train::Stage1Model load_stage1(const Config& cfg) {
    train::Stage1Model m = train::make_stage1(cfg);
    restore(m.params, load_checkpoint(cfg.paths.stage1));
    return m;
}

refiner::Stage2Model load_stage2(const Config& cfg) {
    refiner::Stage2Model m = refiner::make_stage2(cfg);
    restore(m.params, load_checkpoint(cfg.paths.stage2));
    return m;
}

eval::EpisodeCase pick_case(const Config& cfg, data::Split split, eval::Mode mode, int episode) {
    const auto specs = data::split_specs(cfg, split);
    const int index = episode < 0 ? 0 : episode;
    if (static_cast<std::size_t>(index) >= specs.size()) {
        throw UsageError("--episode " + std::to_string(episode) + " out of range (split has " +
                         std::to_string(specs.size()) + ")");
    }
    char id[32];
    std::snprintf(id, sizeof(id), "ep_%05d", index);
    return eval::make_case(cfg, specs[static_cast<std::size_t>(index)], mode, id);
}

std::vector<synth::Episode> holdout_episodes(const Config& cfg) {
    auto specs = data::split_specs(cfg, data::Split::Holdout);
    if (cfg.eval.episodes >= 0 && static_cast<std::size_t>(cfg.eval.episodes) < specs.size()) {
        specs.resize(static_cast<std::size_t>(cfg.eval.episodes));
    }
    std::vector<synth::Episode> out(specs.size());
    parallel_for(specs.size(), [&](std::size_t i) { out[i] = data::make_episode(cfg, specs[i]); });
    return out;
}

json stage1_json(const train::Stage1Report& r) {
    return {{"step_psnr", r.step_psnr},
            {"copy_step_psnr", r.copy_step_psnr},
            {"rollout_psnr", r.rollout_psnr},
            {"copy_rollout_psnr", r.copy_rollout_psnr},
            {"retrieval", r.retrieval},
            {"spin_episodes", r.spin_episodes}};
}

int gen_data(const Options& o) {
    const Config cfg = resolve(o);
    for (auto split : {data::Split::Train, data::Split::Holdout, data::Split::Long}) {
        data::generate_split(cfg, split, cfg.data.dir);
    }
    write_json(fs::path(cfg.data.dir) / "config.json", to_json(cfg));
    return 0;
}

int train_stage1_cmd(const Options& o) {
    const Config cfg = resolve(o);
    const auto episodes = data::load_split(cfg.data.dir, data::Split::Train);
    std::vector<train::Stage1Episode> prepared;
    for (const auto& ep : episodes) {
        prepared.push_back(train::prepare_stage1(ep));
    }
    train::Stage1Model model = train::make_stage1(cfg);
    const auto start = std::chrono::steady_clock::now();
    const auto log = train::train_stage1(model, prepared, cfg, logger(o, "stage1", cfg.train.log_every, cfg.train.steps));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fs::create_directories(fs::path(cfg.paths.stage1).parent_path().empty() ? fs::path(".")
                                                                               : fs::path(cfg.paths.stage1).parent_path());
    save_checkpoint(model.params, cfg.paths.stage1);
    write_json(fs::path(cfg.paths.out) / "stage1_log.json", {{"loss", log.loss}, {"seconds", seconds}});
    return 0;
}

int train_stage2_cmd(const Options& o) {
    const Config cfg = resolve(o);
    const auto episodes = data::load_split(cfg.data.dir, data::Split::Train);
    std::vector<refiner::Stage2Episode> prepared;
    for (const auto& ep : episodes) {
        prepared.push_back(refiner::prepare_stage2(ep));
    }
    refiner::Stage2Model model = refiner::make_stage2(cfg);
    const auto start = std::chrono::steady_clock::now();
    const auto loss = refiner::train_stage2(model, prepared, cfg,
                                            logger(o, "stage2", cfg.train.stage2.log_every, cfg.train.stage2.steps));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    fs::create_directories(fs::path(cfg.paths.stage2).parent_path().empty() ? fs::path(".")
                                                                               : fs::path(cfg.paths.stage2).parent_path());
    save_checkpoint(model.params, cfg.paths.stage2);
    write_json(fs::path(cfg.paths.out) / "stage2_log.json", {{"loss", loss}, {"seconds", seconds}});
    return 0;
}

int infer_cmd(const Options& o) {
    const Config cfg = resolve(o);
    const auto s1 = load_stage1(cfg);
    const auto s2 = load_stage2(cfg);
    const sched::Pipeline pipe{&s1, &s2};
    const auto c = pick_case(cfg, data::Split::Holdout, eval::mode_from_string(o.mode), o.episode);
    const auto clip = sched::run_clip(pipe, c.source, sched::Arm{true, cfg.infer.alpha}, cfg.infer.steps,
                                      cfg.data.delta_t, cfg.seed);
    const fs::path dir = fs::path(cfg.paths.out) / "infer" / c.id;
    write_video(dir, "refined", clip.video);
    write_video(dir, "coarse", clip.coarse);
    write_json(dir / "weights.json", weights_json(clip.coarse_weights));
    write_json(dir / "metrics.json",
               {{"psnr", metrics::capped(metrics::psnr(clip.video, c.ground_truth))},
                {"ssim", metrics::ssim(clip.video, c.ground_truth)}});
    return 0;
}

int infer_long_cmd(const Options& o) {
    const Config cfg = resolve(o);
    const auto s1 = load_stage1(cfg);
    const auto s2 = load_stage2(cfg);
    const sched::Pipeline pipe{&s1, &s2};
    const auto c = pick_case(cfg, data::Split::Long, eval::mode_from_string(o.mode), o.episode);
    sched::SegmentPlan plan;
    plan.segment = cfg.infer.segment;
    plan.total = static_cast<Index>(c.source.frames.size());
    plan.steps = cfg.infer.steps;
    plan.alpha = cfg.infer.alpha;
    plan.naive = cfg.infer.mode == "naive";
    const auto r = sched::cross_iterative_infer(pipe, c.source, plan, cfg.data.delta_t, cfg.seed, &c.ground_truth);
    const fs::path dir = fs::path(cfg.paths.out) / "infer-long" / c.id;
    write_video(dir, "refined", r.video);
    json segs = json::array();
    for (const auto& s : r.segments) {
        segs.push_back({{"start", s.start},
                        {"end", s.end},
                        {"init", sched::to_string(s.init)},
                        {"argmax", s.argmax},
                        {"psnr", s.psnr},
                        {"ssim", s.ssim}});
    }
    write_json(dir / "segments.json", {{"mode", cfg.infer.mode}, {"segments", segs}});
    return 0;
}

std::vector<eval::ProtocolReport> run_arms(const Config& cfg, const sched::Pipeline& pipe,
                                           const std::vector<std::pair<eval::ArmKind, double>>& arms) {
    std::vector<eval::ProtocolReport> reports;
    for (auto mode : {eval::Mode::Self, eval::Mode::Cross}) {
        const auto cases = eval::make_cases(cfg, data::Split::Holdout, mode, cfg.eval.episodes);
        for (const auto& [arm, alpha] : arms) {
            const auto runner = eval::pipeline_runner(pipe, eval::arm_settings(arm, alpha), cfg.infer.steps,
                                                      cfg.data.delta_t, cfg.seed);
            reports.push_back(eval::run_protocol(mode, arm, alpha, cases, runner));
        }
    }
    return reports;
}

void print_summary(const std::vector<eval::ProtocolReport>& reports) {
    for (const auto& r : reports) {
        std::printf("%-5s %-8s alpha=%.2f  psnr=%.3f  ssim=%.4f  retrieval=%.3f  sharpness=%.5f\n",
                    eval::to_string(r.mode).c_str(), eval::to_string(r.arm).c_str(), r.alpha, r.psnr, r.ssim,
                    r.retrieval, r.sharpness);
    }
}

int eval_cmd(const Options& o) {
    const Config cfg = resolve(o);
    const auto s1 = load_stage1(cfg);
    const auto s2 = load_stage2(cfg);
    const auto reports = run_arms(cfg, {&s1, &s2}, {{eval::ArmKind::CrgAe, cfg.infer.alpha}});
    eval::write_reports(fs::path(cfg.paths.out) / "eval", reports);
    const auto r1 = train::stage1_report(s1, holdout_episodes(cfg), cfg.data.delta_t);
    write_json(fs::path(cfg.paths.out) / "eval" / "stage1.json", stage1_json(r1));
    if (!o.quiet) {
        print_summary(reports);
        std::printf("stage1 step %.3f (copy %.3f)  rollout %.3f (copy %.3f)  retrieval %.3f over %d spin episodes\n",
                    r1.step_psnr, r1.copy_step_psnr, r1.rollout_psnr, r1.copy_rollout_psnr, r1.retrieval,
                    r1.spin_episodes);
    }
    return 0;
}

int ablate_cmd(const Options& o) {
    const Config cfg = resolve(o);
    const auto s1 = load_stage1(cfg);
    const auto s2 = load_stage2(cfg);
    const sched::Pipeline pipe{&s1, &s2};
    std::vector<std::pair<eval::ArmKind, double>> arms = {{eval::ArmKind::Baseline, 0.0}, {eval::ArmKind::Crg, 0.0}};
    for (double a : cfg.eval.alphas) {
        if (a > 0.0) {
            arms.emplace_back(eval::ArmKind::CrgAe, a);
        }
    }
    const auto reports = run_arms(cfg, pipe, arms);
    const fs::path dir = fs::path(cfg.paths.out) / "ablate";
    eval::write_reports(dir, reports);

    sched::SegmentPlan plan;
    plan.segment = cfg.infer.segment;
    plan.total = cfg.data.long_frames;
    plan.steps = cfg.infer.steps;
    plan.alpha = cfg.infer.alpha;
    const auto long_cases = eval::make_cases(cfg, data::Split::Long, eval::Mode::Self, -1);
    const auto long_report = eval::compare_long(pipe, long_cases, plan, cfg.data.delta_t, cfg.seed);
    write_json(dir / "long.json", eval::to_json(long_report));
    if (!o.quiet) {
        print_summary(reports);
        std::printf("long: cross-iterative >= naive on %.0f%% of episodes\n", 100.0 * long_report.win_rate);
    }
    return 0;
}

int dump_attn_cmd(const Options& o) {
    const Config cfg = resolve(o);
    const auto s1 = load_stage1(cfg);
    const auto specs = data::split_specs(cfg, data::Split::Holdout);
    int index = o.episode;
    if (index < 0) {
        for (std::size_t i = 0; i < specs.size(); ++i) {
            if (specs[i].trajectory.kind == synth::TrajectoryKind::Spin) {
                index = static_cast<int>(i);
                break;
            }
        }
    }
    const auto c = pick_case(cfg, data::Split::Holdout, eval::Mode::Self, index);
    const Index frames = static_cast<Index>(c.source.frames.size());
    const Index dt = cfg.data.delta_t;
    const auto seq = motion::extract_sequence(s1.params, s1.motion, c.source.frames, c.source.object, c.source.hoi, dt);
    std::vector<RowVector> motions;
    for (Index g = 0; g < (frames - 1) / dt; ++g) {
        motions.push_back(seq[static_cast<std::size_t>(g * dt)].value);
    }
    const auto roll = uoa::rollout(s1.params, s1.uoa, c.source.o_init, motions, c.source.refs);
    const auto weights = ae::extract_view_weights(roll.weights, frames, dt);
    const auto bias = ae::logit_bias(weights, cfg.infer.alpha, ae::kBiasBound);
    const fs::path dir = fs::path(cfg.paths.out) / "attn";
    fs::create_directories(dir);
    ae::write_bias_csv(dir / (c.id + ".csv"), weights, bias);
    json gt = json::array();
    for (std::size_t g = 0; g < roll.weights.size(); ++g) {
        gt.push_back({{"frame", g * static_cast<std::size_t>(dt)},
                      {"azimuth", c.gt_azimuths[g * static_cast<std::size_t>(dt)]},
                      {"argmax", metrics::argmax(roll.weights[g].w)}});
    }
    write_json(dir / (c.id + ".json"), {{"ref_azimuths", c.ref_azimuths}, {"steps", gt}});
    return 0;
}

void report_error(const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

} // namespace

int run_command(const std::vector<std::string>& args) {
    CLI::App app{"mvhoi: reference-guided hand-object video synthesis on a synthetic world"};
    app.require_subcommand(1, 1);
    Options o;
    using Handler = int (*)(const Options&);
    const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
        {"gen-data", "render the train, holdout and long splits", gen_data},
        {"train-stage1", "train the motion encoder and unified object anchor", train_stage1_cmd},
        {"train-stage2", "train the video refiner", train_stage2_cmd},
        {"infer", "single-clip inference on a holdout episode", infer_cmd},
        {"infer-long", "segmented long-video inference on a long episode", infer_long_cmd},
        {"eval", "self and cross reenactment metrics", eval_cmd},
        {"ablate", "guidance and attention-bias ablation plus the long-video comparison", ablate_cmd},
        {"dump-attn", "per-frame view weights and logit bias as CSV", dump_attn_cmd},
    };
    Handler chosen = nullptr;
    for (const auto& [name, help, fn] : commands) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--set", o.overrides, "override, key=value (repeatable)")->take_all();
        sub->add_option("--out", o.out, "output directory (paths.out)");
        sub->add_flag("--quiet", o.quiet, "no progress output");
        if (std::string(name) == "infer" || std::string(name) == "infer-long" || std::string(name) == "dump-attn") {
            sub->add_option("--episode", o.episode, "episode index within the split");
        }
        if (std::string(name) == "infer" || std::string(name) == "infer-long") {
            sub->add_option("--mode", o.mode, "self or cross reenactment")->check(CLI::IsMember({"self", "cross"}));
        }
        sub->callback([&chosen, h = fn] { chosen = h; });
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        report_error("usage", e.what());
        return 2;
    }
    try {
        return chosen(o);
    } catch (const UsageError& e) {
        report_error("usage", e.what());
        return 2;
    } catch (const ConfigError& e) {
        report_error("config", e.what());
        return 2;
    } catch (const CheckpointError& e) {
        report_error("checkpoint", e.what());
        return 3;
    } catch (const synth::EpisodeError& e) {
        report_error("dataset", e.what());
        return 3;
    } catch (const std::exception& e) {
        report_error("runtime", e.what());
        return 1;
    }
}

int main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) {
        args.emplace_back(argv[i]);
    }
    return run_command(args);
}

} // namespace mvhoi::cli
