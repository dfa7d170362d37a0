#pragma once

// End-to-end steps behind the command-line tool: dataset generation,
// training, clean evaluation, adversarial evaluation and the FLOPs report.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "jamident/checkpoint.hpp"
#include "jamident/config.hpp"
#include "jamident/evaluate.hpp"

namespace jamident::pipeline {

namespace fs = std::filesystem;

dataset::DatasetManifest gen_dataset(const config::AppConfig& cfg, const fs::path& out_dir, std::ostream& log);

struct TrainRequest {
    config::AppConfig cfg;
    training::Strategy strategy = training::Strategy::baseline;
    fs::path dataset_dir;
    fs::path checkpoint;  // <name>.bin; the header goes to <name>.json
    fs::path log_file;    // JSON lines, one record per epoch
};

// Trains on the dataset's train split; echoes each epoch record to `log`
// and appends it to the log file.
training::TrainResult train(const TrainRequest& req, std::ostream& log);

struct EvalRequest {
    config::AppConfig cfg;
    fs::path dataset_dir;
    fs::path checkpoint;
    fs::path out_dir;
};

// Predictor for a loaded checkpoint under the run configuration.
evaluate::Predictor make_predictor(const checkpoint::TrainingMeta& meta, const config::AppConfig& cfg);

evaluate::EvalReport eval(const EvalRequest& req, std::ostream& log);
std::vector<evaluate::EvalReport> attack_eval(const EvalRequest& req, std::ostream& log);

// One JSON line for an epoch record.
std::string format_record(const training::EpochRecord& r);

} // namespace jamident::pipeline
