#include "mvhoi/dataset.hpp"

#include "mvhoi/parallel.hpp"
#include "mvhoi/rng.hpp"

#include <cstdio>
#include <numbers>

namespace mvhoi::data {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kObjectBase[] = {1000, 500000, 900000};
constexpr std::uint64_t kCrossOffset = 250000;

int split_count(const Config& cfg, Split s) {
    switch (s) {
    case Split::Train: return cfg.data.train_episodes;
    case Split::Holdout: return cfg.data.holdout_episodes;
    case Split::Long: return cfg.data.long_episodes;
    }
    return 0;
}

} // namespace

std::string to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Holdout: return "holdout";
    case Split::Long: return "long";
    }
    return "train";
}

Index split_frames(const Config& cfg, Split split) {
    return split == Split::Long ? cfg.data.long_frames : cfg.data.frames + 1;
}

std::vector<EpisodeSpec> split_specs(const Config& cfg, Split split) {
    const int count = split_count(cfg, split);
    const auto s = static_cast<std::size_t>(split);
    const Index frames = split_frames(cfg, split);
    std::vector<EpisodeSpec> specs;
    constexpr double pi = std::numbers::pi;
    for (int i = 0; i < count; ++i) {
        Rng rng(mix_seed(mix_seed(cfg.seed, s + 1), static_cast<std::uint64_t>(i)));
        EpisodeSpec e;
        e.object_seed = kObjectBase[s] + static_cast<std::uint64_t>(i);
        e.seed = rng.next();
        e.frames = frames;
        e.trajectory.kind = static_cast<synth::TrajectoryKind>(i % 4);
        e.trajectory.start_azimuth = rng.uniform(0.0, 2.0 * pi);
        // At most 2 pi per 20 frames keeps every step under pi / 8.
        const double per_frame = rng.uniform(0.5, 1.0) * 2.0 * pi / 20.0;
        e.trajectory.total_rotation = (rng.uniform() < 0.5 ? -1.0 : 1.0) * per_frame * static_cast<double>(frames);
        specs.push_back(e);
    }
    return specs;
}

synth::EpisodeConfig episode_config(const Config& cfg, Index frames) {
    synth::EpisodeConfig ec;
    ec.size = cfg.data.size;
    ec.frames = frames;
    ec.references = cfg.data.references;
    ec.delta_t = cfg.data.delta_t;
    return ec;
}

synth::Episode make_episode(const Config& cfg, const EpisodeSpec& spec) {
    return synth::generate_episode(synth::make_object(spec.object_seed), spec.trajectory,
                                   episode_config(cfg, spec.frames), spec.seed);
}

synth::Episode make_cross_target(const Config& cfg, const EpisodeSpec& spec) {
    return synth::generate_episode(synth::make_object(spec.object_seed + kCrossOffset), spec.trajectory,
                                   episode_config(cfg, spec.frames), spec.seed);
}

fs::path split_dir(const fs::path& root, Split split) { return root / to_string(split); }

void generate_split(const Config& cfg, Split split, const fs::path& root) {
    const auto specs = split_specs(cfg, split);
    const fs::path dir = split_dir(root, split);
    fs::create_directories(dir);
    parallel_for(specs.size(), [&](std::size_t i) {
        char name[32];
        std::snprintf(name, sizeof(name), "ep_%05zu", i);
        synth::write_episode(make_episode(cfg, specs[i]), dir / name);
    });
}

std::vector<synth::Episode> load_split(const fs::path& root, Split split, int limit) {
    const fs::path dir = split_dir(root, split);
    if (!fs::is_directory(dir)) {
        throw synth::EpisodeError(synth::EpisodeError::Kind::MissingFile, "missing dataset split: " + dir.string());
    }
    std::vector<fs::path> eps;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_directory()) {
            eps.push_back(e.path());
        }
    }
    std::sort(eps.begin(), eps.end());
    if (limit >= 0 && static_cast<std::size_t>(limit) < eps.size()) {
        eps.resize(static_cast<std::size_t>(limit));
    }
    std::vector<synth::Episode> out(eps.size());
    parallel_for(eps.size(), [&](std::size_t i) { out[i] = synth::read_episode(eps[i]); });
    return out;
}

} // namespace mvhoi::data
