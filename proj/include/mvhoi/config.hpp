#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvhoi {

struct DataConfig {
    std::string dir = "data";
    int train_episodes = 200;
    int holdout_episodes = 50;
    int long_episodes = 20;
    int size = 32;
    int frames = 20;
    int references = 4;
    int delta_t = 4;
    int long_frames = 60;
};

struct ModelConfig {
    int d = 128;
    int d_motion = 64;
    int layers = 4;
    int heads = 4;
    int patch = 4;
    int registers = 4;
    int motion_layers = 2;
    int tap_layer = -1;  // -1: penultimate block
    int video_d = 128;
    int video_layers = 4;
    std::vector<int> adapter_blocks;  // empty: {0, L_v / 2, L_v - 1}
    int temporal_window = 0;  // 0: every frame attends to every frame
};

struct AugmentConfig {
    double scale = 0.1;
    double translate = 0.05;
    double shear_deg = 5.0;
    double jitter = 0.2;
    double blur_min = 0.5;
    double blur_max = 2.0;
    double noise_max = 0.05;
};

struct Stage2Config {
    int batch = 4;
    double lr = 3e-4;
    int steps = 2000;
    double beta = 2.0;
    bool augment = true;
    double guidance_dropout = 0.1;
    bool adapter_only = false;
    double grad_clip = 1.0;
    int log_every = 100;
};

// Top-level batch/lr/steps/lambdas drive Stage I.
struct TrainConfig {
    int batch = 16;
    double lr = 3e-4;
    int steps = 3000;
    double lambda1 = 1.0;
    double lambda2 = 0.1;
    double lambda3 = 0.1;
    double grad_clip = 1.0;
    int log_every = 100;
    Stage2Config stage2;
    AugmentConfig augment;
};

struct InferConfig {
    int steps = 10;
    double alpha = 1.0;
    int segment = 20;
    std::string mode = "cross-iterative";  // or "naive"
};

struct EvalConfig {
    std::vector<double> alphas = {0.0, 0.5, 1.0, 2.0};
    int episodes = 50;
};

struct PathConfig {
    std::string stage1 = "runs/stage1.mvhc";
    std::string stage2 = "runs/stage2.mvhc";
    std::string out = "runs/out";
};

struct Config {
    std::uint64_t seed = 7;
    DataConfig data;
    ModelConfig model;
    TrainConfig train;
    InferConfig infer;
    EvalConfig eval;
    PathConfig paths;

    void validate() const;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const Config& c);
// Unknown keys and type errors raise ConfigError naming the key.
Config config_from_json(const nlohmann::json& j);
Config load_config(const std::filesystem::path& path);
// Applies "a.b.c=value"; value is parsed as JSON when possible, else taken
// as a string.
void apply_override(nlohmann::json& j, const std::string& assignment);
Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

} // namespace mvhoi
