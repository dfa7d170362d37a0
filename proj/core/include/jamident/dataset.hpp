#pragma once

// Synthetic dataset generation and its on-disk form:
//   manifest.json  metadata, split and seeds
//   images.f32     N x 3 x 40 x 40 little-endian float32
//   labels.u8      N class labels
//   isnr.f32       N ISNR values in dB, little-endian float32

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "jamident/siggen.hpp"
#include "jamident/tfmap.hpp"

namespace jamident::dataset {

struct DatasetConfig {
    std::vector<double> isnr_grid_db = {-14.0, -8.0, 0.0, 8.0};
    std::size_t samples_per_type_per_isnr = 100;
    std::size_t train_parts = 3;  // train : test ratio within every (type, ISNR) stratum
    std::size_t test_parts = 1;
    siggen::ScenarioConfig scenario{};
    tfmap::StftConfig stft{};
    std::uint64_t seed = 1;

    static DatasetConfig desk_scale();
    static DatasetConfig full_scale();  // 12 ISNRs, 400 per (type, ISNR)

    std::size_t num_samples() const;
    void validate() const;  // throws std::invalid_argument
};

struct DatasetManifest {
    int version = 1;
    std::size_t num_classes = siggen::kNumJammingTypes;
    std::vector<std::string> class_names;
    std::vector<double> isnr_grid_db;
    std::size_t samples_per_type_per_isnr = 0;
    std::size_t num_samples = 0;
    std::size_t train_parts = 3;
    std::size_t test_parts = 1;
    double fs_hz = 0.0;
    std::size_t signal_samples = 0;
    double snr_db = 0.0;
    tfmap::StftConfig stft{};
    std::uint64_t seed = 0;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;

    std::string to_json() const;
    static DatasetManifest from_json(const std::string& text);
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<float> images;  // num_samples * kImagePixels
    std::vector<std::uint8_t> labels;
    std::vector<float> isnr_db;

    std::size_t size() const { return labels.size(); }
    std::span<const float> image(std::size_t i) const;
    tfmap::Spectrogram spectrogram(std::size_t i) const;
    const std::vector<std::size_t>& split(const std::string& name) const;  // "train" or "test"
};

// Seed of sample i's synthesis stream.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t type, std::size_t isnr_index, std::size_t k);

// Samples are ordered by type, then ISNR, then repetition. Within each
// stratum the first train_parts/(train_parts + test_parts) go to training.
Dataset generate(const DatasetConfig& cfg, std::size_t workers = 1);

void write(const Dataset& ds, const std::filesystem::path& dir);
// Throws std::runtime_error on missing files or size mismatches.
Dataset read(const std::filesystem::path& dir);

DatasetManifest gen_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir, std::size_t workers = 1);

// Little-endian float32 blob helpers (shared with checkpoints).
void write_f32(const std::filesystem::path& p, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& p);

} // namespace jamident::dataset
