#pragma once

// Model checkpoints: <name>.bin holds every parameter and buffer as one flat
// little-endian float32 blob; <name>.json beside it holds the model config,
// the parameter table (name -> offset, shape) and training metadata.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "jamident/diffnet.hpp"
#include "jamident/training.hpp"

namespace jamident::checkpoint {

struct TrainingMeta {
    training::Strategy strategy = training::Strategy::baseline;
    std::uint64_t master_seed = 0;
    std::uint64_t init_seed = 0;
    std::uint64_t train_seed = 0;
    training::TrainConfig train{};
    training::MaskEnsembleConfig mask{};
    training::ConsistencyConfig consistency{};
    std::vector<double> loss_curve;
};

struct Loaded {
    diffnet::DiffTransformer<float> model;
    TrainingMeta meta;
};

std::filesystem::path header_path(const std::filesystem::path& blob);

void save(const diffnet::DiffTransformer<float>& model, const TrainingMeta& meta, const std::filesystem::path& blob);
// Throws std::runtime_error when either file is missing or inconsistent.
Loaded load(const std::filesystem::path& blob);

} // namespace jamident::checkpoint
