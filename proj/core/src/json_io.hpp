#pragma once

// JSON conversions shared by the config and checkpoint readers. Readers
// overlay present keys onto the given defaults and reject unknown keys.

#include <initializer_list>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "jamident/diffnet.hpp"
#include "jamident/training.hpp"

namespace jamident::json_io {

using nlohmann::json;

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <class V>
void read_opt(const json& j, const char* key, V& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<V>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": wrong type");
    }
}

inline json to_json(const diffnet::ModelConfig& c) {
    return {{"image_channels", c.image_channels}, {"image_height", c.image_height}, {"image_width", c.image_width},
            {"patch", c.patch}, {"embed_dim", c.embed_dim}, {"heads", c.heads}, {"blocks", c.blocks},
            {"expansion", c.expansion}, {"num_classes", c.num_classes}, {"conv_kernel", c.conv_kernel},
            {"lambda", c.lambda}};
}

inline diffnet::ModelConfig model_from_json(const json& j, diffnet::ModelConfig c, const std::string& where) {
    check_keys(j, where, {"image_channels", "image_height", "image_width", "patch", "embed_dim", "heads", "blocks",
                          "expansion", "num_classes", "conv_kernel", "lambda"});
    read_opt(j, "image_channels", c.image_channels, where);
    read_opt(j, "image_height", c.image_height, where);
    read_opt(j, "image_width", c.image_width, where);
    read_opt(j, "patch", c.patch, where);
    read_opt(j, "embed_dim", c.embed_dim, where);
    read_opt(j, "heads", c.heads, where);
    read_opt(j, "blocks", c.blocks, where);
    read_opt(j, "expansion", c.expansion, where);
    read_opt(j, "num_classes", c.num_classes, where);
    read_opt(j, "conv_kernel", c.conv_kernel, where);
    read_opt(j, "lambda", c.lambda, where);
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

inline training::MaskMode mode_from(const json& j, const std::string& where) {
    if (!j.is_string()) throw ConfigError(where + ".mode: expected a string");
    auto m = training::mask_mode_from_string(j.get<std::string>());
    if (!m) throw ConfigError(where + ".mode: expected continuous or discrete");
    return *m;
}

inline void check_mask(const training::MaskStrategy& s, const std::string& where) {
    try {
        s.masked_count(100);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

inline json to_json(const training::MaskEnsembleConfig& c) {
    return {{"branches", c.branches}, {"mode", std::string(training::to_string(c.mask.mode))},
            {"rate", c.mask.rate}, {"noise_std", c.noise_std}};
}

inline training::MaskEnsembleConfig mask_from_json(const json& j, training::MaskEnsembleConfig c, const std::string& where) {
    check_keys(j, where, {"branches", "mode", "rate", "noise_std"});
    read_opt(j, "branches", c.branches, where);
    if (j.contains("mode")) c.mask.mode = mode_from(j.at("mode"), where);
    read_opt(j, "rate", c.mask.rate, where);
    read_opt(j, "noise_std", c.noise_std, where);
    if (c.branches < 1) throw ConfigError(where + ".branches must be >= 1");
    if (!(c.noise_std >= 0.0)) throw ConfigError(where + ".noise_std must be >= 0");
    check_mask(c.mask, where);
    return c;
}

inline json to_json(const training::ConsistencyConfig& c) {
    return {{"feature_weight", c.feature_weight}, {"prob_weight", c.prob_weight},
            {"mode", std::string(training::to_string(c.mask.mode))}, {"rate", c.mask.rate},
            {"noise_std", c.noise_std}, {"ce_on_both", c.ce_on_both}};
}

inline training::ConsistencyConfig consistency_from_json(const json& j, training::ConsistencyConfig c,
                                                         const std::string& where) {
    check_keys(j, where, {"feature_weight", "prob_weight", "mode", "rate", "noise_std", "ce_on_both"});
    read_opt(j, "feature_weight", c.feature_weight, where);
    read_opt(j, "prob_weight", c.prob_weight, where);
    if (j.contains("mode")) c.mask.mode = mode_from(j.at("mode"), where);
    read_opt(j, "rate", c.mask.rate, where);
    read_opt(j, "noise_std", c.noise_std, where);
    read_opt(j, "ce_on_both", c.ce_on_both, where);
    if (!(c.feature_weight >= 0.0) || !(c.prob_weight >= 0.0)) throw ConfigError(where + ": weights must be >= 0");
    if (!(c.noise_std >= 0.0)) throw ConfigError(where + ".noise_std must be >= 0");
    check_mask(c.mask, where);
    return c;
}

inline json to_json(const training::TrainConfig& c) {
    return {{"epochs", c.epochs}, {"lr", c.lr}, {"momentum", c.momentum}, {"batch_size", c.batch_size},
            {"recalibrate_bn", c.recalibrate_bn}};
}

inline training::TrainConfig train_from_json(const json& j, training::TrainConfig c, const std::string& where) {
    check_keys(j, where, {"epochs", "lr", "momentum", "batch_size", "recalibrate_bn"});
    read_opt(j, "epochs", c.epochs, where);
    read_opt(j, "lr", c.lr, where);
    read_opt(j, "momentum", c.momentum, where);
    read_opt(j, "batch_size", c.batch_size, where);
    read_opt(j, "recalibrate_bn", c.recalibrate_bn, where);
    if (c.epochs == 0 || c.batch_size == 0) throw ConfigError(where + ": epochs and batch_size must be positive");
    if (!(c.lr > 0.0)) throw ConfigError(where + ".lr must be positive");
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw ConfigError(where + ".momentum must lie in [0, 1)");
    return c;
}

} // namespace jamident::json_io
