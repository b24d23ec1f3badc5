#pragma once

#include "mvhoi/config.hpp"
#include "mvhoi/synthworld.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mvhoi::data {

enum class Split { Train, Holdout, Long };

std::string to_string(Split s);

struct EpisodeSpec {
    std::uint64_t object_seed = 0;
    synth::TrajectorySpec trajectory;
    std::uint64_t seed = 0;
    Index frames = 20;
};

// Deterministic episode recipes; object seeds of different splits never overlap.
std::vector<EpisodeSpec> split_specs(const Config& cfg, Split split);
// Frame count of a split: T + 1 for clip splits so a rollout spans t = 0..T.
Index split_frames(const Config& cfg, Split split);
synth::EpisodeConfig episode_config(const Config& cfg, Index frames);
synth::Episode make_episode(const Config& cfg, const EpisodeSpec& spec);
// Different object along the identical pose and hand trajectory.
synth::Episode make_cross_target(const Config& cfg, const EpisodeSpec& spec);

std::filesystem::path split_dir(const std::filesystem::path& root, Split split);
void generate_split(const Config& cfg, Split split, const std::filesystem::path& root);
std::vector<synth::Episode> load_split(const std::filesystem::path& root, Split split, int limit = -1);

} // namespace mvhoi::data
