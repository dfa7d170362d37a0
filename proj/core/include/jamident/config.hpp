#pragma once

// Run configuration. One JSON file can set every knob; keys that are absent
// keep the preset's value and unknown keys are rejected.
//
// {
//   "scale": "desk" | "full",
//   "seed": 1,
//   "dataset": {"isnr_grid_db": [...], "samples_per_type_per_isnr": 100, "train_parts": 3, "test_parts": 1,
//               "fs_hz": 1e8, "signal_samples": 1600, "snr_db": 10, "rician_k_db": 15},
//   "model": {"patch": 4, "embed_dim": 32, "heads": 4, "blocks": 2, "expansion": 2, "lambda": 0.8, ...},
//   "train": {"epochs": 15, "lr": 0.1, "momentum": 0, "batch_size": 32, "recalibrate_bn": true},
//   "mask": {"branches": 4, "mode": "discrete", "rate": 0.3, "noise_std": 0.1},
//   "consistency": {"feature_weight": 0.2, "prob_weight": 0.2, "mode": "discrete", "rate": 0.3,
//                   "noise_std": 0.1, "ce_on_both": false},
//   "attack": {"eps_255": [3, 6, 8, 14]},
//   "eval": {"mask_eval": true, "split": "test"}
// }

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "jamident/dataset.hpp"
#include "jamident/diffnet.hpp"
#include "jamident/training.hpp"

namespace jamident::config {

// Invalid configuration (maps to the CLI's validation exit code).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct AttackSettings {
    std::vector<int> eps_255 = {3, 6, 8, 14};
};

struct EvalSettings {
    bool mask_eval = true;
    std::string split = "test";
};

struct Seeds {
    std::uint64_t dataset = 0;
    std::uint64_t init = 0;
    std::uint64_t train = 0;
    std::uint64_t attack = 0;
    std::uint64_t eval = 0;
};

struct AppConfig {
    std::string scale = "desk";
    std::uint64_t seed = 1;
    dataset::DatasetConfig dataset = dataset::DatasetConfig::desk_scale();
    diffnet::ModelConfig model{};
    training::TrainConfig train{};
    training::MaskEnsembleConfig mask{};
    training::ConsistencyConfig consistency{};
    AttackSettings attack{};
    EvalSettings eval{};

    static AppConfig desk_scale();
    static AppConfig full_scale();

    // Every stochastic stream is derived from the single master seed.
    Seeds seeds() const;
    // Propagates the master seed into the dataset and training configs.
    void set_seed(std::uint64_t s);
};

AppConfig parse_config(const std::string& json_text, const AppConfig& base);
AppConfig load_config(const std::filesystem::path& path, const AppConfig& base);
std::string to_json(const AppConfig& cfg);

} // namespace jamident::config
