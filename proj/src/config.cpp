#include "mvhoi/config.hpp"

#include <cmath>
#include <fstream>

namespace mvhoi {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataConfig, dir, train_episodes, holdout_episodes, long_episodes, size,
                                                frames, references, delta_t, long_frames)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, d, d_motion, layers, heads, patch, registers,
                                                motion_layers, tap_layer, video_d, video_layers, adapter_blocks,
                                                temporal_window)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AugmentConfig, scale, translate, shear_deg, jitter, blur_min, blur_max,
                                                noise_max)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Stage2Config, batch, lr, steps, beta, augment, guidance_dropout,
                                                adapter_only, grad_clip, log_every)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, batch, lr, steps, lambda1, lambda2, lambda3, grad_clip,
                                                log_every, stage2, augment)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(InferConfig, steps, alpha, segment, mode)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalConfig, alphas, episodes)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PathConfig, stage1, stage2, out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Config, seed, data, model, train, infer, eval, paths)

namespace {

bool compatible(const json& def, const json& val) {
    if (def.is_number_float()) {
        return val.is_number();
    }
    if (def.is_number_integer()) {
        return val.is_number_integer() || (val.is_number_float() && val.get<double>() == std::floor(val.get<double>()));
    }
    if (def.is_array()) {
        return val.is_array();
    }
    return def.type() == val.type();
}

void merge(json& base, const json& user, const std::string& prefix) {
    if (!user.is_object()) {
        throw ConfigError("config section " + (prefix.empty() ? std::string("<root>") : prefix) +
                          " must be a JSON object");
    }
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (!base.contains(it.key())) {
            throw ConfigError("unknown config key: " + key);
        }
        json& slot = base[it.key()];
        if (slot.is_object()) {
            merge(slot, it.value(), key);
        } else if (!compatible(slot, it.value())) {
            throw ConfigError("config key " + key + " expects " + std::string(slot.type_name()) + ", got " +
                              it.value().type_name());
        } else if (slot.is_number_integer() && it.value().is_number_float()) {
            slot = static_cast<std::int64_t>(it.value().get<double>());
        } else {
            slot = it.value();
        }
    }
}

} // namespace

void Config::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) {
            throw ConfigError("invalid config: " + what);
        }
    };
    need(data.size >= 16 && data.size % (model.patch * 2) == 0, "data.size must be >= 16 and divisible by 2*patch");
    need(data.frames >= 2 * data.delta_t && data.delta_t >= 1, "data.frames must be at least 2 * data.delta_t");
    need(data.references >= 1, "data.references must be >= 1");
    need(model.d % model.heads == 0 && model.video_d % model.heads == 0, "model widths must divide by heads");
    need(model.layers >= 1 && model.video_layers >= 1 && model.motion_layers >= 1, "layer counts must be >= 1");
    need(model.tap_layer >= -1 && model.tap_layer < model.layers, "model.tap_layer out of range");
    for (int b : model.adapter_blocks) {
        need(b >= 0 && b < model.video_layers, "model.adapter_blocks entries must index trunk blocks");
    }
    need(train.batch >= 1 && train.stage2.batch >= 1, "batch sizes must be >= 1");
    need(train.stage2.beta >= 0.0, "train.stage2.beta must be >= 0");
    need(infer.steps >= 1, "infer.steps must be >= 1");
    need(infer.alpha >= 0.0, "infer.alpha must be >= 0");
    need(infer.segment >= data.delta_t && infer.segment % data.delta_t == 0,
         "infer.segment must be a positive multiple of data.delta_t");
    need(infer.mode == "cross-iterative" || infer.mode == "naive", "infer.mode must be cross-iterative or naive");
    need(train.augment.blur_min <= train.augment.blur_max && train.augment.blur_min >= 0.0, "augment blur range invalid");
}

json to_json(const Config& c) {
    json j = c;
    return j;
}

Config config_from_json(const json& j) {
    json merged = to_json(Config{});
    merge(merged, j, "");
    Config c = merged.get<Config>();
    c.validate();
    return c;
}

Config load_config(const std::filesystem::path& path) { return load_config(path, {}); }

void apply_override(json& j, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override must look like key=value: " + assignment);
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::parse_error&) {
        value = text;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) {
            throw ConfigError("malformed override key: " + key);
        }
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        if (!node->contains(part)) {
            (*node)[part] = json::object();
        }
        node = &(*node)[part];
        if (!node->is_object()) {
            throw ConfigError("override key " + key + " descends into a non-object");
        }
        start = dot + 1;
    }
}

Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) {
            throw ConfigError("missing config file: " + path.string());
        }
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ConfigError("malformed config " + path.string() + ": " + e.what());
        }
    }
    for (const auto& o : overrides) {
        apply_override(j, o);
    }
    return config_from_json(j);
}

} // namespace mvhoi
