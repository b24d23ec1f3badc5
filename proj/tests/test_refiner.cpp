#include "doctest.h"
#include "gradcheck.hpp"

#include "mvhoi/attention_enhance.hpp"
#include "mvhoi/dataset.hpp"
#include "mvhoi/losses.hpp"
#include "mvhoi/refiner.hpp"

#include <cmath>
#include <numeric>

using namespace mvhoi;
using mvhoi::testing::random_matrix;

namespace {

Config tiny_config() {
    Config cfg;
    cfg.data.size = 16;
    cfg.data.frames = 8;
    cfg.data.references = 2;
    cfg.data.train_episodes = 3;
    cfg.data.holdout_episodes = 2;
    cfg.model.d = 16;
    cfg.model.d_motion = 8;
    cfg.model.layers = 2;
    cfg.model.heads = 2;
    cfg.model.registers = 1;
    cfg.model.motion_layers = 1;
    cfg.model.video_d = 16;
    cfg.model.video_layers = 2;
    return cfg;
}

refiner::Stage2Episode tiny_episode(const Config& cfg, std::size_t i = 0) {
    return refiner::prepare_stage2(data::make_episode(cfg, data::split_specs(cfg, data::Split::Train)[i]));
}

refiner::ConditionSet condition_for(const refiner::Stage2Episode& ep, const std::vector<Image>& guidance) {
    return refiner::compose_condition(ep.frames, ep.hoi, ep.object, guidance, ep.delta_t, ep.refs);
}

void randomize(ParamStore& params, Rng& rng, double scale) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& v = params[i].value();
        v += random_matrix(v.rows(), v.cols(), rng, scale);
    }
}

Image constant(Index size, double v) {
    Image img(size, size);
    img.pixels.setConstant(v);
    return img;
}

} // namespace

TEST_CASE("flow pair endpoints and degenerate pair") {
    Rng rng(1);
    const Matrix x0 = random_matrix(12, 3, rng);
    const Matrix eps = random_matrix(12, 3, rng);
    const auto a = refiner::flow_pair(x0, eps, 0.0);
    CHECK(a.x_t == x0);
    CHECK(a.u_t == eps - x0);
    const auto b = refiner::flow_pair(x0, eps, 1.0);
    CHECK(b.x_t == eps);
    const auto c = refiner::flow_pair(x0, x0, 0.37);
    CHECK((c.x_t - x0).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(c.u_t.isZero(0.0));
    CHECK_THROWS_AS(refiner::flow_pair(x0, eps, 1.5), std::invalid_argument);
    CHECK_THROWS_AS(refiner::flow_pair(x0, eps, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(refiner::flow_pair(x0, Matrix::Zero(3, 3), 0.5), std::invalid_argument);
}

TEST_CASE("euler integration with the oracle velocity recovers the data") {
    Rng rng(2);
    for (int n : {1, 4, 16}) {
        const Matrix x0 = random_matrix(20, 3, rng);
        const Matrix eps = random_matrix(20, 3, rng);
        const Matrix x = refiner::integrate_flow(eps, n, [&](const Matrix&, double) { return Matrix(eps - x0); });
        CHECK((x - x0).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(refiner::integrate_flow(Matrix::Zero(2, 3), 0, {}), std::invalid_argument);
}

TEST_CASE("logit bias formula, clamping and zero strength") {
    RowVector w(4);
    w << 0.5, 0.9, 0.0, 1.0;
    const RowVector b = ae::logit_bias(w, 1.0);
    CHECK(b(0) == 0.0);
    CHECK(b(1) == doctest::Approx(std::log(9.0)).epsilon(1e-12));
    CHECK(b(2) == doctest::Approx(std::log(1e-4 / (1.0 - 1e-4))).epsilon(1e-12));
    CHECK(b(3) == doctest::Approx(-b(2)).epsilon(1e-12));
    const RowVector strong = ae::logit_bias(w, 3.0);
    CHECK(strong(2) == -15.0);
    CHECK(strong(3) == 15.0);
    CHECK(ae::logit_bias(w, 0.0).isZero(0.0));
    CHECK_THROWS_AS(ae::logit_bias(w, -1.0), std::invalid_argument);
}

TEST_CASE("logit bias is strictly monotone in w") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        RowVector w(5);
        for (Index i = 0; i < 5; ++i) {
            w(i) = rng.uniform(0.01, 0.99);
        }
        const RowVector b = ae::logit_bias(w, rng.uniform(0.1, 2.0));
        for (Index i = 0; i < 5; ++i) {
            for (Index j = 0; j < 5; ++j) {
                CHECK((w(i) > w(j)) == (b(i) > b(j)));
            }
        }
    }
}

TEST_CASE("attention under key bias") {
    Rng rng(4);
    const Index rows = 12;
    const Index d = 8;
    auto layout = [&](RowVector kb) {
        auto l = std::make_shared<ad::AttentionLayout>();
        l->rows = rows;
        IndexVector all(static_cast<std::size_t>(rows));
        std::iota(all.begin(), all.end(), Index{0});
        l->groups.push_back({all, all, std::move(kb)});
        return std::shared_ptr<const ad::AttentionLayout>(l);
    };
    const Matrix q = random_matrix(rows, d, rng);
    const Matrix k = random_matrix(rows, d, rng);
    const Matrix v = random_matrix(rows, d, rng);
    auto run = [&](const RowVector& kb, ad::AttentionTap* tap) {
        ad::Tape tape;
        return ad::attention(tape.constant(q), tape.constant(k), tape.constant(v), layout(kb), 2, tap).value();
    };

    SUBCASE("zero bias is bitwise the unbiased path") {
        CHECK(run(RowVector(), nullptr) == run(RowVector::Zero(rows), nullptr));
    }
    SUBCASE("rows stay normalized and row-constant shifts cancel") {
        for (int trial = 0; trial < 20; ++trial) {
            const RowVector kb = random_matrix(1, rows, rng, 10.0);
            ad::AttentionTap tap;
            const Matrix out = run(kb, &tap);
            CHECK((tap.mean_probs[0].rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-9);
            const Matrix shifted = run((kb.array() + rng.uniform(-20.0, 20.0)).matrix(), nullptr);
            CHECK((out - shifted).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SUBCASE("raising alpha moves mass onto the heaviest view") {
        RowVector w(3);
        w << 0.6, 0.3, 0.1;
        double prev = -1.0;
        for (double alpha : {0.0, 0.5, 1.0, 2.0, 4.0}) {
            const RowVector b = ae::logit_bias(w, alpha);
            RowVector kb(rows);
            for (Index j = 0; j < rows; ++j) {
                kb(j) = b(j % 3);
            }
            ad::AttentionTap tap;
            run(kb, &tap);
            double mass = 0.0;
            for (Index j = 0; j < rows; j += 3) {
                mass += tap.mean_probs[0].col(j).sum();
            }
            CHECK(mass > prev);
            prev = mass;
        }
    }
}

TEST_CASE("nearest guidance ties toward the earlier frame") {
    CHECK(ae::nearest_guidance(6, 4, 6) == 1);
    CHECK(ae::nearest_guidance(5, 4, 6) == 1);
    CHECK(ae::nearest_guidance(7, 4, 6) == 2);
    CHECK(ae::nearest_guidance(2, 4, 6) == 0);
    CHECK(ae::nearest_guidance(19, 4, 5) == 4);
    CHECK(ae::nearest_guidance(0, 4, 1) == 0);

    std::vector<uoa::ViewWeights> coarse(3);
    for (std::size_t i = 0; i < 3; ++i) {
        coarse[i].w = RowVector::Constant(2, static_cast<double>(i));
        coarse[i].frame = static_cast<Index>(i);
    }
    const auto full = ae::extract_view_weights(coarse, 9, 4);
    REQUIRE(full.size() == 9);
    const int expect[] = {0, 0, 0, 1, 1, 1, 1, 2, 2};
    for (std::size_t t = 0; t < 9; ++t) {
        CHECK(full[t].w(0) == expect[t]);
        CHECK(full[t].frame == static_cast<Index>(t));
    }
    CHECK_THROWS_AS(ae::extract_view_weights({}, 9, 4), std::invalid_argument);
}

TEST_CASE("proxy guidance augmentation") {
    const Config cfg = tiny_config();
    const auto ep = tiny_episode(cfg);
    const Image& crop = ep.crops[3];
    SUBCASE("deterministic per seed") {
        CHECK(refiner::augment_proxy_guidance(crop, 9, cfg.train.augment).pixels ==
              refiner::augment_proxy_guidance(crop, 9, cfg.train.augment).pixels);
        CHECK(refiner::augment_proxy_guidance(crop, 9, cfg.train.augment).pixels !=
              refiner::augment_proxy_guidance(crop, 10, cfg.train.augment).pixels);
    }
    SUBCASE("null magnitudes are the identity") {
        AugmentConfig none{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0};
        CHECK(refiner::augment_proxy_guidance(crop, 5, none).pixels == crop.pixels);
    }
    SUBCASE("degradation removes high-frequency energy") {
        Config big = cfg;
        big.data.size = 32;
        int lower = 0;
        int total = 0;
        for (std::uint64_t s = 0; s < 40; ++s) {
            const auto obj = synth::make_object(7000 + s);
            synth::Pose pose;
            pose.azimuth = 0.3 * static_cast<double>(s);
            pose.elevation = 0.2;
            const Image c = synth::render_object_crop(obj, pose, 32);
            const Image d = refiner::augment_proxy_guidance(c, s, big.train.augment);
            lower += laplacian_variance(d) < laplacian_variance(c) ? 1 : 0;
            ++total;
        }
        CHECK(static_cast<double>(lower) >= 0.95 * total);
    }
}

TEST_CASE("condition composition") {
    const Config cfg = tiny_config();
    const auto ep = tiny_episode(cfg);
    const Index frames = static_cast<Index>(ep.frames.size());
    std::vector<Image> guidance;
    for (Index g = 0; g < (frames - 1) / ep.delta_t + 1; ++g) {
        guidance.push_back(constant(16, 0.1 * static_cast<double>(g + 1)));
    }
    const auto c = condition_for(ep, guidance);
    REQUIRE(c.frames() == frames);
    for (Index t = 0; t < frames; ++t) {
        const auto i = static_cast<std::size_t>(t);
        const double want = 0.1 * static_cast<double>(ae::nearest_guidance(t, ep.delta_t, 3) + 1);
        int pasted = 0;
        for (Index p = 0; p < 256; ++p) {
            const bool in = ep.hoi[i].bits(p / 16, p % 16) != 0;
            if (!in) {
                CHECK(c.composed[i].pixels.row(p) == ep.frames[i].pixels.row(p));
            } else if (c.composed[i].pixels(p, 0) != 0.0) {
                CHECK(c.composed[i].pixels(p, 0) == doctest::Approx(want));
                ++pasted;
            }
        }
        CHECK(pasted > 0);
    }
    SUBCASE("an empty mask passes the frame through") {
        MaskSequence hoi = ep.hoi;
        hoi[2] = Mask(16, 16);
        const auto e = refiner::compose_condition(ep.frames, hoi, ep.object, guidance, ep.delta_t, ep.refs);
        CHECK(e.composed[2].pixels == ep.frames[2].pixels);
    }
    SUBCASE("missing guidance is an error") {
        std::vector<Image> short_g(guidance.begin(), guidance.begin() + 2);
        CHECK_THROWS_AS(condition_for(ep, short_g), std::invalid_argument);
    }
    SUBCASE("no guidance zeroes the interaction region") {
        const auto e = condition_for(ep, {});
        CHECK_FALSE(e.has_guidance);
        for (Index p = 0; p < 256; ++p) {
            if (ep.hoi[0].bits(p / 16, p % 16) != 0) {
                CHECK(e.composed[0].pixels.row(p).isZero(0.0));
            }
        }
    }
}

TEST_CASE("adapter is a no-op at initialization") {
    const Config cfg = tiny_config();
    const auto model = refiner::make_stage2(cfg);
    const auto ep = tiny_episode(cfg);
    const auto ep2 = tiny_episode(cfg, 1);
    const auto a = condition_for(ep, refiner::proxy_guidance(ep, true, cfg.train.augment, 1));
    auto b = condition_for(ep, {});
    b.refs = ep2.refs;
    Rng rng(5);
    const Matrix x = random_matrix(a.frames() * 256, 3, rng);
    ad::Tape t1(&model.params);
    ad::Tape t2(&model.params);
    const Matrix va = refiner::velocity(t1, model.refiner, t1.constant(x), 0.4, a).value();
    const Matrix vb = refiner::velocity(t2, model.refiner, t2.constant(x), 0.4, b).value();
    CHECK(va == vb);
    CHECK(model.refiner.adapter.size() == 2);
}

TEST_CASE("refiner gradients match finite differences") {
    Config cfg = tiny_config();
    cfg.data.frames = 4;
    cfg.data.delta_t = 2;
    cfg.data.references = 2;
    for (std::uint64_t seed : {11u, 12u}) {
        cfg.seed = seed;
        auto model = refiner::make_stage2(cfg);
        Rng rng(seed);
        randomize(model.params, rng, 0.1);
        const auto ep = tiny_episode(cfg);
        const auto guidance = refiner::proxy_guidance(ep, true, cfg.train.augment, seed);
        const auto c = condition_for(ep, guidance);
        std::vector<uoa::ViewWeights> w(static_cast<std::size_t>(c.frames()));
        for (auto& v : w) {
            v.w = RowVector(2);
            v.w << 0.7, 0.3;
        }
        const auto bias = ae::logit_bias(w, 1.0);
        const Matrix eps = random_matrix(c.frames() * 256, 3, rng);
        const Matrix weights = Matrix::Constant(c.frames() * 256, 1, 1.0);
        const auto u = refiner::flow_pair(refiner::stack_frames(ep.frames), eps, 0.3);

        // Parameter gradients: probe entries by central differences.
        Gradients g;
        auto loss_of = [&](ad::Tape& tape) {
            const ad::Var v = refiner::velocity(tape, model.refiner, tape.constant(u.x_t), 0.3, c, &bias);
            return losses::hoi_weighted_fm_loss(v, tape.constant(u.u_t), weights);
        };
        {
            ad::Tape tape(&model.params);
            g = tape.backward(loss_of(tape));
        }
        double num = 0.0;
        double den = 0.0;
        for (int probe = 0; probe < 40; ++probe) {
            const std::size_t id = rng.below(model.params.size());
            Matrix& v = model.params[id].value();
            const Index j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(v.size())));
            const double keep = v.data()[j];
            auto eval = [&](double x) {
                v.data()[j] = x;
                ad::Tape tape(&model.params);
                return loss_of(tape).value()(0, 0);
            };
            const double fd = (eval(keep + 1e-5) - eval(keep - 1e-5)) / 2e-5;
            v.data()[j] = keep;
            num += (fd - g[id].data()[j]) * (fd - g[id].data()[j]);
            den += std::max(fd * fd, g[id].data()[j] * g[id].data()[j]);
        }
        CHECK(std::sqrt(num / den) < 1e-4);
    }
}

TEST_CASE("sampling contracts") {
    Config cfg = tiny_config();
    cfg.data.frames = 4;
    cfg.data.delta_t = 2;
    auto model = refiner::make_stage2(cfg);
    Rng rng(6);
    randomize(model.params, rng, 0.05);
    const auto ep = tiny_episode(cfg);
    auto c = condition_for(ep, refiner::proxy_guidance(ep, false, cfg.train.augment, 0));
    std::vector<uoa::ViewWeights> w(static_cast<std::size_t>(c.frames()));
    for (auto& v : w) {
        v.w = RowVector(2);
        v.w << 0.8, 0.2;
    }

    SUBCASE("zero strength equals the unbiased sampler bitwise") {
        const Video plain = refiner::sample_video(model.params, model.refiner, c, 3, 0.0, 4);
        c.weights = w;
        const Video zero = refiner::sample_video(model.params, model.refiner, c, 3, 0.0, 4);
        const Video biased = refiner::sample_video(model.params, model.refiner, c, 3, 1.0, 4);
        bool differs = false;
        for (std::size_t i = 0; i < plain.size(); ++i) {
            CHECK(plain[i].pixels == zero[i].pixels);
            differs = differs || plain[i].pixels != biased[i].pixels;
        }
        CHECK(differs);
    }
    SUBCASE("outside the mask the output is the source") {
        const Video out = refiner::sample_video(model.params, model.refiner, c, 4, 0.0, 5);
        for (std::size_t i = 0; i < out.size(); ++i) {
            for (Index p = 0; p < 256; ++p) {
                if (c.hoi[i].bits(p / 16, p % 16) == 0) {
                    CHECK(out[i].pixels.row(p) == c.source[i].pixels.row(p));
                }
            }
        }
    }
    SUBCASE("a single step is eps minus the velocity at t = 1") {
        const Video out = refiner::sample_video(model.params, model.refiner, c, 1, 0.0, 8);
        Rng noise(mix_seed(8, 0xf10));
        Matrix eps(c.frames() * 256, 3);
        for (Index i = 0; i < eps.size(); ++i) {
            eps.data()[i] = noise.normal();
        }
        ad::Tape tape(&model.params);
        const Matrix v = refiner::velocity(tape, model.refiner, tape.constant(eps), 1.0, c).value();
        const Video expect = refiner::unstack_frames(eps - v, c.frames(), 16);
        for (std::size_t i = 0; i < out.size(); ++i) {
            for (Index p = 0; p < 256; ++p) {
                if (c.hoi[i].bits(p / 16, p % 16) != 0) {
                    for (Index ch = 0; ch < 3; ++ch) {
                        CHECK(out[i].pixels(p, ch) == std::clamp(expect[i].pixels(p, ch), 0.0, 1.0));
                    }
                }
            }
        }
    }
    SUBCASE("enhancement without view weights is an error") {
        c.weights.clear();
        CHECK_THROWS_AS(refiner::sample_video(model.params, model.refiner, c, 2, 1.0, 1), std::invalid_argument);
    }
}

TEST_CASE("stage two training lowers held-out loss deterministically") {
    Config cfg = tiny_config();
    cfg.data.frames = 4;
    cfg.data.delta_t = 2;
    cfg.train.stage2.batch = 2;
    cfg.train.stage2.steps = 25;
    cfg.train.stage2.lr = 3e-3;
    std::vector<refiner::Stage2Episode> train;
    for (std::size_t i = 0; i < 3; ++i) {
        train.push_back(tiny_episode(cfg, i));
    }
    std::vector<refiner::Stage2Episode> held;
    for (const auto& s : data::split_specs(cfg, data::Split::Holdout)) {
        held.push_back(refiner::prepare_stage2(data::make_episode(cfg, s)));
    }
    auto a = refiner::make_stage2(cfg);
    auto b = refiner::make_stage2(cfg);
    const double before = refiner::stage2_eval_loss(a, held, cfg, 99);
    const auto la = refiner::train_stage2(a, train, cfg);
    const auto lb = refiner::train_stage2(b, train, cfg);
    CHECK(la == lb);
    CHECK(refiner::stage2_eval_loss(a, held, cfg, 99) < before);
    CHECK_THROWS_AS(refiner::train_stage2(a, {}, cfg), std::invalid_argument);
}

TEST_CASE("adapter-only training freezes the trunk") {
    Config cfg = tiny_config();
    cfg.train.stage2.adapter_only = true;
    const auto m = refiner::make_stage2(cfg);
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const bool adapter = m.params.name(i).rfind("refiner.adapter.", 0) == 0;
        CHECK(m.params[i].requires_grad() == adapter);
    }
}
