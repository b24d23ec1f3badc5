// Acceptance run: one PASS/FAIL line per criterion.
#include "gradcheck.hpp"

#include "mvhoi/attention_enhance.hpp"
#include "mvhoi/checkpoint.hpp"
#include "mvhoi/cli.hpp"
#include "mvhoi/dataset.hpp"
#include "mvhoi/eval.hpp"
#include "mvhoi/losses.hpp"
#include "mvhoi/metrics.hpp"
#include "mvhoi/parallel.hpp"
#include "mvhoi/refiner.hpp"
#include "mvhoi/scheduler.hpp"
#include "mvhoi/training.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

using namespace mvhoi;
using mvhoi::testing::gradient_error;
using mvhoi::testing::param_gradient_error;
using mvhoi::testing::random_matrix;
using mvhoi::testing::randomize;
using MaskColumn = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, 1>;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
    bool pass = true;
    std::string detail;
    double seconds = 0.0;
};

// Collects named checks; the first failure is kept for the summary line.
struct Checks {
    bool pass = true;
    std::vector<std::string> failures;
    void expect(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            failures.push_back(what);
        }
    }
    std::string summary(const std::string& ok_text) const {
        if (pass) {
            return ok_text;
        }
        std::string s = failures.front();
        if (failures.size() > 1) {
            s += " (+" + std::to_string(failures.size() - 1) + " more)";
        }
        return s;
    }
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

// ---------------------------------------------------------------- 1

double oracle_hoi_loss(const Matrix& v, const Matrix& u, const MaskColumn& mask, double beta) {
    double s_hoi = 0.0;
    for (Index i = 0; i < mask.size(); ++i) {
        s_hoi += mask(i);
    }
    double total = 0.0;
    for (Index i = 0; i < v.rows(); ++i) {
        const double w = (mask(i) != 0 && s_hoi > 0.0) ? beta * static_cast<double>(mask.size()) / s_hoi : 1.0;
        for (Index c = 0; c < v.cols(); ++c) {
            total += w * (v(i, c) - u(i, c)) * (v(i, c) - u(i, c));
        }
    }
    return total / static_cast<double>(v.size());
}

std::shared_ptr<ad::AttentionLayout> two_group_layout(Index n, const Matrix* key_bias) {
    auto layout = std::make_shared<ad::AttentionLayout>();
    layout->rows = n;
    ad::AttentionGroup refs;
    ad::AttentionGroup frame;
    const Index k = n / 3;
    for (Index i = 0; i < k; ++i) {
        refs.queries.push_back(i);
        refs.keys.push_back(i);
        frame.keys.push_back(i);
    }
    for (Index i = k; i < n; ++i) {
        frame.queries.push_back(i);
        frame.keys.push_back(i);
    }
    if (key_bias != nullptr) {
        frame.key_bias = *key_bias;
    }
    layout->groups = {refs, frame};
    return layout;
}

Outcome exactness() {
    Checks c;
    Rng rng(101);

    RowVector half(3);
    half << 0.5, 0.5, 0.5;
    c.expect(ae::logit_bias(half, 1.7, ae::kBiasBound).cwiseAbs().maxCoeff() == 0.0, "w = 0.5 gives nonzero bias");

    for (int trial = 0; trial < 20; ++trial) {
        const Index n = 12;
        const Index d = 8;
        const Matrix q = random_matrix(n, d, rng);
        const Matrix k = random_matrix(n, d, rng);
        const Matrix v = random_matrix(n, d, rng);
        RowVector w(n / 3);
        for (Index i = 0; i < w.size(); ++i) {
            w(i) = rng.uniform();
        }
        const Matrix zero_bias = ae::logit_bias(w, 0.0, ae::kBiasBound);
        Matrix frame_bias(1, n);
        frame_bias.setZero();
        frame_bias.leftCols(n / 3) = zero_bias;
        ad::Tape tape;
        const Matrix plain =
            ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), two_group_layout(n, nullptr), 2)
                .value();
        const Matrix biased = ad::attention(tape.constant(q), tape.constant(k), tape.constant(v),
                                            two_group_layout(n, &frame_bias), 2)
                                  .value();
        c.expect(plain == biased, "alpha = 0 attention differs bitwise");

        Matrix strong(1, n);
        for (Index i = 0; i < n; ++i) {
            strong(0, i) = rng.uniform(-40.0, 40.0);
        }
        ad::AttentionTap tap;
        ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), two_group_layout(n, &strong), 2, &tap);
        for (const Matrix& p : tap.mean_probs) {
            c.expect((p.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9, "attention rows do not sum to 1");
        }

        const Matrix logits = random_matrix(5, 7, rng, 3.0);
        const Matrix bias = random_matrix(5, 7, rng, 20.0);
        Matrix shifted = bias;
        for (Index r = 0; r < 5; ++r) {
            shifted.row(r).array() += rng.uniform(-50.0, 50.0);
        }
        const Matrix p0 = ad::softmax_with_bias(tape.constant(logits), tape.constant(bias)).value();
        const Matrix p1 = ad::softmax_with_bias(tape.constant(logits), tape.constant(shifted)).value();
        c.expect((p0.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9, "softmax rows do not sum to 1");
        c.expect((p0 - p1).cwiseAbs().maxCoeff() < 1e-12, "row-constant bias changes the softmax");
    }

    // The refiner path with an alpha = 0 bias spec is the unbiased path.
    {
        Config cfg;
        cfg.data.size = 16;
        cfg.data.frames = 4;
        cfg.data.delta_t = 2;
        cfg.data.references = 2;
        cfg.model.d = 16;
        cfg.model.video_d = 16;
        cfg.model.video_layers = 2;
        cfg.model.heads = 2;
        auto model = refiner::make_stage2(cfg);
        randomize(model.params, rng, 0.1);
        const auto ep = refiner::prepare_stage2(data::make_episode(cfg, data::split_specs(cfg, data::Split::Train)[0]));
        const auto cond = refiner::compose_condition(ep.frames, ep.hoi, ep.object, ep.crops, ep.delta_t, ep.refs);
        std::vector<uoa::ViewWeights> w(static_cast<std::size_t>(cond.frames()));
        for (auto& x : w) {
            x.w = RowVector(2);
            x.w << 0.8, 0.2;
        }
        const auto zero = ae::logit_bias(w, 0.0, ae::kBiasBound);
        const Matrix x = random_matrix(cond.frames() * 256, 3, rng);
        ad::Tape t1(&model.params);
        ad::Tape t2(&model.params);
        const Matrix a = refiner::velocity(t1, model.refiner, t1.constant(x), 0.5, cond).value();
        const Matrix b = refiner::velocity(t2, model.refiner, t2.constant(x), 0.5, cond, &zero).value();
        c.expect(a == b, "refiner alpha = 0 velocity differs bitwise");
    }

    for (int trial = 0; trial < 100; ++trial) {
        const Index pixels = 8 * 8 * (1 + trial % 4);
        const Matrix v = random_matrix(pixels, 3, rng);
        const Matrix u = random_matrix(pixels, 3, rng);
        MaskColumn mask(pixels);
        for (Index i = 0; i < pixels; ++i) {
            mask(i) = trial == 0 ? 1 : trial == 1 ? 0 : (rng.uniform() < rng.uniform() ? 1 : 0);
        }
        const double beta = rng.uniform(0.0, 5.0);
        const double expect = oracle_hoi_loss(v, u, mask, beta);
        c.expect(std::abs(losses::hoi_weighted_fm_loss(v, u, mask, beta) - expect) < 1e-12,
                 "reweighted loss differs from the per-pixel oracle");
        ad::Tape tape;
        const double taped =
            losses::hoi_weighted_fm_loss(tape.constant(v), tape.constant(u), losses::hoi_weights(mask, beta))
                .value()(0, 0);
        c.expect(std::abs(taped - expect) < 1e-12, "taped reweighted loss differs from the oracle");
    }
    return {c.pass, c.summary("bias identities, softmax normalization and 100 loss oracle cases hold")};
}

// ---------------------------------------------------------------- 2

ad::Var project(ad::Tape& tape, ad::Var out, std::uint64_t seed) {
    Rng rng(seed);
    return ad::sum_all(ad::mul(out, tape.constant(random_matrix(out.rows(), out.cols(), rng))));
}

Outcome gradients() {
    constexpr double kTol = 1e-4;
    constexpr int kSeeds = 10;
    double worst = 0.0;
    std::string worst_name;
    auto record = [&](const std::string& name, double err) {
        if (err > worst) {
            worst = err;
            worst_name = name;
        }
    };
    for (int s = 0; s < kSeeds; ++s) {
        Rng rng(900 + s);
        const Matrix a = random_matrix(3, 4, rng);
        const Matrix b = random_matrix(3, 4, rng);
        const Matrix row = random_matrix(1, 4, rng);
        const Matrix col = random_matrix(3, 1, rng);
        const Matrix pos = (random_matrix(3, 4, rng).array().abs() + 0.5).matrix();
        const Matrix sq = random_matrix(4, 5, rng);
        const Matrix gain = random_matrix(1, 4, rng);
        auto flat = std::make_shared<IndexVector>(IndexVector{3, 3, 0, 11, 5, 7});
        auto rows = std::make_shared<IndexVector>(IndexVector{2, 0, 2, 1});
        const std::vector<std::tuple<std::string, testing::LossBuilder, std::vector<Matrix>>> ops = {
            {"add", [](ad::Tape& t, auto& v) { return project(t, ad::add(v[0], v[1]), 1); }, {a, b}},
            {"add broadcast", [](ad::Tape& t, auto& v) { return project(t, ad::add(v[0], v[1]), 2); }, {a, row}},
            {"sub", [](ad::Tape& t, auto& v) { return project(t, ad::sub(v[0], v[1]), 3); }, {a, col}},
            {"mul", [](ad::Tape& t, auto& v) { return project(t, ad::mul(v[0], v[1]), 4); }, {a, b}},
            {"mul broadcast", [](ad::Tape& t, auto& v) { return project(t, ad::mul(v[0], v[1]), 5); }, {a, row}},
            {"div", [](ad::Tape& t, auto& v) { return project(t, ad::div(v[0], v[1]), 6); }, {a, pos}},
            {"scale", [](ad::Tape& t, auto& v) { return project(t, ad::scale(v[0], -1.3), 7); }, {a}},
            {"add_scalar", [](ad::Tape& t, auto& v) { return project(t, ad::add_scalar(v[0], 0.3), 7); }, {a}},
            {"matmul", [](ad::Tape& t, auto& v) { return project(t, ad::matmul(v[0], v[1]), 8); }, {a, sq}},
            {"transpose", [](ad::Tape& t, auto& v) { return project(t, ad::transpose(v[0]), 9); }, {a}},
            {"reshape", [](ad::Tape& t, auto& v) { return project(t, ad::reshape(v[0], 2, 6), 10); }, {a}},
            {"concat_rows", [](ad::Tape& t, auto& v) { return project(t, ad::concat_rows({v[0], v[1]}), 11); },
             {a, b}},
            {"concat_cols", [](ad::Tape& t, auto& v) { return project(t, ad::concat_cols({v[0], v[1]}), 12); },
             {a, col}},
            {"slice_rows", [](ad::Tape& t, auto& v) { return project(t, ad::slice_rows(v[0], 1, 2), 13); }, {a}},
            {"slice_cols", [](ad::Tape& t, auto& v) { return project(t, ad::slice_cols(v[0], 1, 2), 14); }, {a}},
            {"sum", [](ad::Tape& t, auto& v) { return project(t, ad::sum(v[0], ad::Axis::Rows), 15); }, {a}},
            {"mean", [](ad::Tape& t, auto& v) { return project(t, ad::mean(v[0], ad::Axis::Cols), 16); }, {a}},
            {"sum_all", [](ad::Tape&, auto& v) { return ad::sum_all(ad::mul(v[0], v[0])); }, {a}},
            {"mean_all", [](ad::Tape&, auto& v) { return ad::mean_all(ad::mul(v[0], v[0])); }, {a}},
            {"layer_norm", [](ad::Tape& t, auto& v) { return project(t, ad::layer_norm(v[0], v[1], v[2]), 17); },
             {a, row, gain}},
            {"gelu", [](ad::Tape& t, auto& v) { return project(t, ad::gelu(v[0]), 18); }, {a}},
            {"softmax_with_bias",
             [](ad::Tape& t, auto& v) { return project(t, ad::softmax_with_bias(v[0], v[1]), 19); }, {a, b}},
            {"gather", [flat](ad::Tape& t, auto& v) { return project(t, ad::gather(v[0], flat, 2, 3), 20); }, {a}},
            {"gather_rows", [rows](ad::Tape& t, auto& v) { return project(t, ad::gather_rows(v[0], rows), 21); },
             {a}},
        };
        for (const auto& [name, f, in] : ops) {
            record(name, gradient_error(f, in));
        }

        const Index n = 9;
        Matrix kb = random_matrix(1, n, rng);
        auto layout = two_group_layout(n, &kb);
        record("attention", gradient_error(
                                [layout](ad::Tape& t, const std::vector<ad::Var>& v) {
                                    return project(t, ad::attention(v[0], v[1], v[2], layout, 2), 22);
                                },
                                {random_matrix(n, 4, rng), random_matrix(n, 4, rng), random_matrix(n, 4, rng)}));
    }

    Config cfg;
    cfg.data.size = 16;
    cfg.data.frames = 8;
    cfg.data.delta_t = 2;
    cfg.data.references = 2;
    cfg.model.d = 16;
    cfg.model.d_motion = 8;
    cfg.model.layers = 3;
    cfg.model.heads = 2;
    cfg.model.registers = 2;
    cfg.model.motion_layers = 1;
    cfg.model.video_d = 16;
    cfg.model.video_layers = 2;
    const auto spec = data::split_specs(cfg, data::Split::Train)[0];
    const auto episode = data::make_episode(cfg, spec);
    const auto s1ep = train::prepare_stage1(episode);
    Config small = cfg;
    small.data.frames = 4;
    const auto s2ep = refiner::prepare_stage2(data::make_episode(small, data::split_specs(small, data::Split::Train)[0]));
    std::vector<double> uoa_err(kSeeds);
    std::vector<double> ref_err(kSeeds);
    parallel_for(static_cast<std::size_t>(kSeeds), [&](std::size_t s) {
        Config c1 = cfg;
        c1.seed = 40 + s;
        auto m1 = train::make_stage1(c1);
        Rng rng(c1.seed);
        randomize(m1.params, rng, 0.05);
        uoa_err[s] = param_gradient_error(
            m1.params,
            [&](ad::Tape& tape) { return train::stage1_forward(tape, m1, s1ep, 1, 2, {1.0, 0.1, 0.1}).loss; }, rng);

        Config c2 = small;
        c2.seed = 60 + s;
        auto m2 = refiner::make_stage2(c2);
        Rng r2(c2.seed);
        randomize(m2.params, r2, 0.1);
        const auto guidance = refiner::proxy_guidance(s2ep, true, c2.train.augment, c2.seed);
        const auto cond = refiner::compose_condition(s2ep.frames, s2ep.hoi, s2ep.object, guidance, 2, s2ep.refs);
        std::vector<uoa::ViewWeights> w(static_cast<std::size_t>(cond.frames()));
        for (auto& x : w) {
            x.w = RowVector(2);
            x.w << r2.uniform(0.05, 0.95), r2.uniform(0.05, 0.95);
        }
        const auto bias = ae::logit_bias(w, 1.0, ae::kBiasBound);
        const Matrix eps = random_matrix(cond.frames() * 256, 3, r2);
        const auto pair = refiner::flow_pair(refiner::stack_frames(s2ep.frames), eps, 0.3);
        const Matrix weights = losses::hoi_weights(
            [&] {
                MaskColumn m(cond.frames() * 256);
                for (Index f = 0; f < cond.frames(); ++f) {
                    m.segment(f * 256, 256) = Eigen::Map<const MaskColumn>(
                        cond.hoi[static_cast<std::size_t>(f)].bits.data(), 256);
                }
                return m;
            }(),
            2.0);
        ref_err[s] = param_gradient_error(
            m2.params,
            [&](ad::Tape& tape) {
                const ad::Var v = refiner::velocity(tape, m2.refiner, tape.constant(pair.x_t), 0.3, cond, &bias);
                return losses::hoi_weighted_fm_loss(v, tape.constant(pair.u_t), weights);
            },
            r2);
    });
    for (int s = 0; s < kSeeds; ++s) {
        record("UOA stage-one loss", uoa_err[static_cast<std::size_t>(s)]);
        record("refiner flow loss", ref_err[static_cast<std::size_t>(s)]);
    }
    const bool ok = worst < kTol;
    return {ok, "25 ops + composed UOA/refiner over 10 seeds, worst relative error " + fmt("%.2e", worst) + " (" +
                    worst_name + ")"};
}

// ---------------------------------------------------------------- 3

Outcome flow() {
    Checks c;
    Rng rng(5);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix x0 = random_matrix(64, 3, rng);
        const Matrix eps = random_matrix(64, 3, rng);
        const auto at0 = refiner::flow_pair(x0, eps, 0.0);
        const auto at1 = refiner::flow_pair(x0, eps, 1.0);
        c.expect(at0.x_t == x0, "x_0 endpoint");
        c.expect(at1.x_t == eps, "x_1 endpoint");
        c.expect(at0.u_t == eps - x0, "velocity identity");
        for (int n : {1, 4, 16}) {
            const Matrix u = eps - x0;
            const Matrix got = refiner::integrate_flow(eps, n, [&](const Matrix&, double) { return u; });
            worst = std::max(worst, (got - x0).cwiseAbs().maxCoeff());
        }
    }
    c.expect(worst < 1e-12, "Euler with the oracle velocity misses x_0 by " + fmt("%.2e", worst));
    return {c.pass, c.summary("endpoints exact; oracle Euler error " + fmt("%.1e", worst) + " for N in {1, 4, 16}")};
}

// ---------------------------------------------------------------- trained models

struct Work {
    fs::path dir;
    bool fresh = false;
    bool quiet = false;
};

std::string config_key(const Config& cfg, const std::string& tag) {
    const json j = to_json(cfg);
    const std::string text = j.at("seed").dump() + j.at("data").dump() + j.at("model").dump() + j.at("train").dump() +
                             "|" + tag;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text.data(), text.size())));
    return buf;
}

// Trains (or reuses a cached run with the same config) and reports the training time.
double cached_train(const Work& w, const Config& cfg, const std::string& tag, ParamStore& params,
                    const std::function<void()>& train) {
    const fs::path ckpt = w.dir / (tag + ".mvhc");
    const fs::path meta = w.dir / (tag + ".json");
    const std::string key = config_key(cfg, tag);
    if (!w.fresh && fs::exists(ckpt) && fs::exists(meta)) {
        std::ifstream in(meta);
        const json j = json::parse(in);
        if (j.value("key", "") == key) {
            restore(params, load_checkpoint(ckpt));
            if (!w.quiet) {
                std::fprintf(stderr, "  reusing %s (trained in %.0f s)\n", tag.c_str(), j.at("seconds").get<double>());
            }
            return j.at("seconds").get<double>();
        }
    }
    const auto t0 = Clock::now();
    train();
    const double seconds = since(t0);
    fs::create_directories(w.dir);
    save_checkpoint(params, ckpt);
    std::ofstream(meta) << json{{"key", key}, {"seconds", seconds}}.dump(2) << '\n';
    return seconds;
}

std::vector<synth::Episode> episodes(const Config& cfg, data::Split split, int limit) {
    auto specs = data::split_specs(cfg, split);
    if (limit >= 0 && static_cast<std::size_t>(limit) < specs.size()) {
        specs.resize(static_cast<std::size_t>(limit));
    }
    std::vector<synth::Episode> out(specs.size());
    parallel_for(specs.size(), [&](std::size_t i) { out[i] = data::make_episode(cfg, specs[i]); });
    return out;
}

train::Progress progress(const Work& w, const char* name, int every, int total) {
    if (w.quiet) {
        return {};
    }
    return [name, every, total](int step, double loss) {
        if ((step + 1) % every == 0 || step + 1 == total) {
            std::fprintf(stderr, "  %s %d/%d loss %.5f\n", name, step + 1, total, loss);
        }
    };
}

struct Trained {
    train::Stage1Model stage1;
    double stage1_seconds = 0.0;
    refiner::Stage2Model stage2;
    double stage2_seconds = 0.0;
    bool has_stage2 = false;
};

void ensure_stage1(const Work& w, const Config& cfg, Trained& t) {
    if (t.stage1_seconds > 0.0) {
        return;
    }
    t.stage1 = train::make_stage1(cfg);
    t.stage1_seconds = cached_train(w, cfg, "stage1", t.stage1.params, [&] {
        std::vector<train::Stage1Episode> prepared;
        for (const auto& ep : episodes(cfg, data::Split::Train, -1)) {
            prepared.push_back(train::prepare_stage1(ep));
        }
        train::train_stage1(t.stage1, prepared, cfg, progress(w, "stage1", cfg.train.log_every, cfg.train.steps));
    });
}

refiner::Stage2Model train_stage2(const Work& w, const Config& cfg, const std::string& tag, double& seconds) {
    refiner::Stage2Model m = refiner::make_stage2(cfg);
    seconds = cached_train(w, cfg, tag, m.params, [&] {
        std::vector<refiner::Stage2Episode> prepared;
        for (const auto& ep : episodes(cfg, data::Split::Train, -1)) {
            prepared.push_back(refiner::prepare_stage2(ep));
        }
        refiner::train_stage2(m, prepared, cfg,
                              progress(w, tag.c_str(), cfg.train.stage2.log_every, cfg.train.stage2.steps));
    });
    return m;
}

void ensure_stage2(const Work& w, const Config& cfg, Trained& t) {
    if (t.has_stage2) {
        return;
    }
    t.stage2 = train_stage2(w, cfg, "stage2", t.stage2_seconds);
    t.has_stage2 = true;
}

// ---------------------------------------------------------------- 4

Outcome stage1_learning(const Work& w, const Config& cfg, Trained& t) {
    ensure_stage1(w, cfg, t);
    const auto r = train::stage1_report(t.stage1, episodes(cfg, data::Split::Holdout, -1), cfg.data.delta_t);
    Checks c;
    const double step_gain = r.step_psnr - r.copy_step_psnr;
    const double roll_gain = r.rollout_psnr - r.copy_rollout_psnr;
    c.expect(t.stage1_seconds <= 1800.0, "training took " + fmt("%.0f s", t.stage1_seconds) + " > 1800 s");
    c.expect(step_gain >= 3.0, "single-step gain " + fmt("%.2f dB", step_gain) + " < 3 dB");
    c.expect(roll_gain >= 3.0, "rollout gain " + fmt("%.2f dB", roll_gain) + " < 3 dB");
    c.expect(r.retrieval >= 0.90, "spin retrieval " + fmt("%.3f", r.retrieval) + " < 0.90");
    std::ostringstream d;
    d << "step " << fmt("%.2f", r.step_psnr) << " vs copy " << fmt("%.2f", r.copy_step_psnr) << " dB, rollout "
      << fmt("%.2f", r.rollout_psnr) << " vs copy " << fmt("%.2f", r.copy_rollout_psnr) << " dB, retrieval "
      << fmt("%.3f", r.retrieval) << " over " << r.spin_episodes << " spin episodes, trained in "
      << fmt("%.0f s", t.stage1_seconds);
    return {c.pass, c.pass ? d.str() : c.summary("") + "; " + d.str()};
}

// ---------------------------------------------------------------- 5

struct Ablation {
    eval::ProtocolReport baseline;
    eval::ProtocolReport crg;
    eval::ProtocolReport crg_ae;
};

Outcome ablation(const Work& w, const Config& cfg, Trained& t, Ablation& out) {
    ensure_stage1(w, cfg, t);
    ensure_stage2(w, cfg, t);
    const auto t0 = Clock::now();
    const sched::Pipeline pipe{&t.stage1, &t.stage2};
    const auto cases = eval::make_cases(cfg, data::Split::Holdout, eval::Mode::Cross, cfg.eval.episodes);
    auto run = [&](eval::ArmKind arm) {
        const auto runner = eval::pipeline_runner(pipe, eval::arm_settings(arm, cfg.infer.alpha), cfg.infer.steps,
                                                  cfg.data.delta_t, cfg.seed);
        return eval::run_protocol(eval::Mode::Cross, arm, cfg.infer.alpha, cases, runner);
    };
    out.baseline = run(eval::ArmKind::Baseline);
    out.crg = run(eval::ArmKind::Crg);
    out.crg_ae = run(eval::ArmKind::CrgAe);
    const double eval_seconds = since(t0);
    const double total = t.stage2_seconds + eval_seconds;

    int wins = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        wins += out.crg_ae.episodes[i].ssim > out.baseline.episodes[i].ssim ? 1 : 0;
    }
    const double win_rate = static_cast<double>(wins) / static_cast<double>(cases.size());
    Checks c;
    c.expect(total <= 3600.0, "train + eval took " + fmt("%.0f s", total) + " > 3600 s");
    c.expect(out.crg.ssim >= out.baseline.ssim, "+CRG below baseline");
    c.expect(out.crg_ae.ssim >= out.crg.ssim, "+CRG+AE below +CRG");
    c.expect(win_rate >= 0.70, "+CRG+AE beats baseline on " + fmt("%.0f%%", 100.0 * win_rate) + " < 70%");
    std::ostringstream d;
    d << "cross SSIM baseline " << fmt("%.4f", out.baseline.ssim) << " <= +CRG " << fmt("%.4f", out.crg.ssim)
      << " <= +CRG+AE " << fmt("%.4f", out.crg_ae.ssim) << ", +CRG+AE > baseline on " << wins << "/"
      << cases.size() << ", " << fmt("%.0f s", total) << " (train " << fmt("%.0f s", t.stage2_seconds) << ")";
    return {c.pass, c.pass ? d.str() : c.summary("") + "; " + d.str()};
}

// ---------------------------------------------------------------- 6

Outcome leakage(const Work& w, const Config& cfg, Trained& t) {
    ensure_stage1(w, cfg, t);
    ensure_stage2(w, cfg, t);
    Config plain = cfg;
    plain.train.stage2.augment = false;
    double seconds = 0.0;
    const refiner::Stage2Model no_aug = train_stage2(w, plain, "stage2_noaug", seconds);

    // Both models see the same blurry rollout guidance.
    const auto cases = eval::make_cases(cfg, data::Split::Holdout, eval::Mode::Cross, 50);
    const sched::Arm arm = eval::arm_settings(eval::ArmKind::CrgAe, cfg.infer.alpha);
    std::vector<double> with(cases.size());
    std::vector<double> without(cases.size());
    for (const refiner::Stage2Model* model : {static_cast<const refiner::Stage2Model*>(&t.stage2), &no_aug}) {
        const sched::Pipeline pipe{&t.stage1, model};
        auto& dst = model == &t.stage2 ? with : without;
        parallel_for(cases.size(), [&](std::size_t i) {
            const auto clip = sched::run_clip(pipe, cases[i].source, arm, cfg.infer.steps, cfg.data.delta_t, cfg.seed);
            dst[i] = eval::object_sharpness(clip.video, cases[i].source.hoi);
        });
    }
    int wins = 0;
    double mean_with = 0.0;
    double mean_without = 0.0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        wins += with[i] > without[i] ? 1 : 0;
        mean_with += with[i] / static_cast<double>(cases.size());
        mean_without += without[i] / static_cast<double>(cases.size());
    }
    const double rate = static_cast<double>(wins) / static_cast<double>(cases.size());
    std::ostringstream d;
    d << "augmented model sharper on " << wins << "/" << cases.size() << " (mean Laplacian variance "
      << fmt("%.5f", mean_with) << " vs " << fmt("%.5f", mean_without) << ")";
    return {rate >= 0.70, d.str()};
}

// ---------------------------------------------------------------- 7

Outcome long_video(const Work& w, const Config& cfg, Trained& t) {
    ensure_stage1(w, cfg, t);
    ensure_stage2(w, cfg, t);
    const auto t0 = Clock::now();
    const sched::Pipeline pipe{&t.stage1, &t.stage2};
    sched::SegmentPlan plan;
    plan.segment = cfg.infer.segment;
    plan.total = cfg.data.long_frames;
    plan.steps = cfg.infer.steps;
    plan.alpha = cfg.infer.alpha;
    const auto cases = eval::make_cases(cfg, data::Split::Long, eval::Mode::Self, 20);
    const auto r = eval::compare_long(pipe, cases, plan, cfg.data.delta_t, cfg.seed);
    const double seconds = since(t0);
    double cross = 0.0;
    double naive = 0.0;
    for (const auto& e : r.episodes) {
        cross += e.cross_final_psnr / static_cast<double>(r.episodes.size());
        naive += e.naive_final_psnr / static_cast<double>(r.episodes.size());
    }
    Checks c;
    c.expect(cases.size() == 20 && plan.total == 60, "expected 20 episodes of 60 frames");
    c.expect(seconds <= 1800.0, "took " + fmt("%.0f s", seconds) + " > 1800 s");
    c.expect(r.win_rate >= 0.70, "cross-iterative wins " + fmt("%.0f%%", 100.0 * r.win_rate) + " < 70%");
    std::ostringstream d;
    d << "cross-iterative >= naive on " << fmt("%.0f%%", 100.0 * r.win_rate) << " of " << cases.size()
      << " episodes, final-segment PSNR " << fmt("%.2f", cross) << " vs " << fmt("%.2f", naive) << " dB, "
      << fmt("%.0f s", seconds);
    return {c.pass, c.pass ? d.str() : c.summary("") + "; " + d.str()};
}

// ---------------------------------------------------------------- 8

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            std::stringstream ss;
            ss << in.rdbuf();
            out[fs::relative(e.path(), dir).string()] = ss.str();
        }
    }
    return out;
}

Outcome determinism(const Work& w) {
    Checks c;
    const fs::path root = w.dir / "smoke";
    fs::remove_all(root);
    fs::create_directories(root);

    json cfg = {{"seed", 3},
                {"data",
                 {{"train_episodes", 6}, {"holdout_episodes", 3}, {"long_episodes", 2}, {"size", 16}, {"frames", 8},
                  {"references", 2}, {"delta_t", 2}, {"long_frames", 16}}},
                {"model",
                 {{"d", 16}, {"d_motion", 8}, {"layers", 2}, {"heads", 2}, {"registers", 1}, {"motion_layers", 1},
                  {"video_d", 16}, {"video_layers", 2}}},
                {"train", {{"batch", 2}, {"steps", 50}, {"log_every", 0}, {"stage2", {{"batch", 2}, {"steps", 50}}}}},
                {"infer", {{"steps", 3}, {"segment", 6}}},
                {"eval", {{"episodes", 3}}}};
    std::vector<std::string> reports;
    for (const char* run : {"a", "b"}) {
        const fs::path dir = root / run;
        json j = cfg;
        j["data"]["dir"] = (dir / "data").string();
        j["paths"] = {{"stage1", (dir / "stage1.mvhc").string()},
                      {"stage2", (dir / "stage2.mvhc").string()},
                      {"out", (dir / "out").string()}};
        fs::create_directories(dir);
        std::ofstream(dir / "c.json") << j.dump(2);
        for (const char* cmd : {"gen-data", "train-stage1", "train-stage2", "infer", "eval"}) {
            const int code = cli::run_command({cmd, "--config", (dir / "c.json").string(), "--quiet"});
            c.expect(code == 0, std::string(cmd) + " exited with " + std::to_string(code));
        }
        std::ifstream in(dir / "out/eval/report.json");
        std::stringstream ss;
        ss << in.rdbuf();
        reports.push_back(ss.str());
    }
    c.expect(!reports[0].empty() && reports[0] == reports[1], "smoke-run metric JSON differs between runs");
    for (const char* split : {"train", "holdout", "long"}) {
        c.expect(tree(root / "a/data" / split) == tree(root / "b/data" / split),
                 std::string("generated ") + split + " split differs");
    }

    // Episode round trip: write, read back bit-exact, and rewrite byte-identically.
    const auto ep = synth::read_episode(root / "a/data/holdout/ep_00000");
    synth::write_episode(ep, root / "rewrite");
    c.expect(tree(root / "rewrite") == tree(root / "a/data/holdout/ep_00000"), "episode rewrite is not byte-identical");
    const auto back = synth::read_episode(root / "rewrite");
    bool same = back.frames.size() == ep.frames.size();
    for (std::size_t i = 0; same && i < ep.frames.size(); ++i) {
        same = back.frames[i].pixels == ep.frames[i].pixels && back.hoi_masks[i].bits == ep.hoi_masks[i].bits &&
               back.object_masks[i].bits == ep.object_masks[i].bits &&
               back.poses[i].azimuth == ep.poses[i].azimuth;
    }
    c.expect(same, "episode round trip is not bit-exact");

    // Checkpoint: save, load, save gives identical bytes; values are float32 rounded.
    Config small;
    small.data.size = 16;
    small.data.references = 2;
    small.model.d = 16;
    small.model.d_motion = 8;
    small.model.layers = 2;
    small.model.heads = 2;
    auto m = train::make_stage1(small);
    Rng rng(8);
    randomize(m.params, rng, 0.3);
    save_checkpoint(m.params, root / "one.mvhc");
    auto m2 = train::make_stage1(small);
    restore(m2.params, load_checkpoint(root / "one.mvhc"));
    save_checkpoint(m2.params, root / "two.mvhc");
    c.expect(tree(root).at("one.mvhc") == tree(root).at("two.mvhc"), "checkpoint save-load-save changes bytes");
    bool rounded = true;
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const Matrix expect = m.params[i].value().cast<float>().cast<double>();
        rounded = rounded && expect == m2.params[i].value();
    }
    c.expect(rounded, "checkpoint values are not the float32 rounding of the originals");
    fs::remove_all(root);
    return {c.pass, c.summary("smoke metrics, dataset trees, episode and checkpoint round trips identical")};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance criteria"};
    std::string config_path = MVHOI_DESK_CONFIG;
    std::string work_dir = "acceptance";
    std::vector<int> only;
    Work w;
    app.add_option("--config", config_path, "JSON config (default: the desk-scale config)");
    app.add_option("--work", work_dir, "directory for cached checkpoints");
    app.add_option("--only", only, "criteria to run (default all)")->delimiter(',');
    app.add_flag("--fresh", w.fresh, "retrain even when cached checkpoints match");
    app.add_flag("--quiet", w.quiet, "no training progress");
    CLI11_PARSE(app, argc, argv);
    w.dir = work_dir;

    Config cfg;
    try {
        cfg = load_config(config_path);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }
    const std::set<int> selected(only.begin(), only.end());
    auto wanted = [&](int n) { return selected.empty() || selected.count(n) > 0; };

    Trained trained;
    Ablation ablation_report;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"exactness", [] { return exactness(); }},
        {"gradients", [] { return gradients(); }},
        {"flow", [] { return flow(); }},
        {"stage-I learning", [&] { return stage1_learning(w, cfg, trained); }},
        {"stage-II ablation", [&] { return ablation(w, cfg, trained, ablation_report); }},
        {"leakage probe", [&] { return leakage(w, cfg, trained); }},
        {"long video", [&] { return long_video(w, cfg, trained); }},
        {"determinism & formats", [&] { return determinism(w); }},
    };
    const double limits[] = {60.0, 300.0, 60.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int n = static_cast<int>(i) + 1;
        if (!wanted(n)) {
            continue;
        }
        const auto t0 = Clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        o.seconds = since(t0);
        if (limits[i] > 0.0 && o.seconds > limits[i]) {
            o.pass = false;
            o.detail += "; exceeded " + fmt("%.0f s", limits[i]);
        }
        all = all && o.pass;
        std::printf("%s %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first.c_str(), o.seconds,
                    o.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
