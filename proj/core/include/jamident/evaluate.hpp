#pragma once

// Clean and adversarial evaluation, CSV reports and the FLOPs report.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jamident/dataset.hpp"
#include "jamident/diffnet.hpp"
#include "jamident/training.hpp"

namespace jamident::evaluate {

// How a trained model turns an image into a class decision.
struct Predictor {
    training::Strategy strategy = training::Strategy::baseline;
    bool mask_eval = true;  // masked models: ensemble (true) or plain forward
    training::MaskEnsembleConfig mask{};
    std::uint64_t eval_seed = 0;    // ensemble masks at prediction time
    std::uint64_t attack_seed = 0;  // ensemble masks inside the attack's forward pass

    bool uses_ensemble() const { return strategy == training::Strategy::masked && mask_eval; }
};

struct Tally {
    std::size_t samples = 0;
    std::size_t correct = 0;
    double accuracy() const { return samples ? static_cast<double>(correct) / static_cast<double>(samples) : 0.0; }
};

struct EvalReport {
    std::string split;
    double epsilon = 0.0;
    int eps_255 = 0;
    Tally overall;
    std::vector<double> isnr_grid_db;
    std::vector<Tally> per_isnr;
    std::vector<Tally> per_class;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    std::vector<int> predictions;                     // one per evaluated sample, split order
};

// Predicted class for one image. Sample index keys the ensemble's masks.
int predict(diffnet::DiffTransformer<float>& model, const tfmap::Spectrogram& img, std::size_t sample,
            const Predictor& pred);

// FGSM example for one sample against the predictor's decision path.
tfmap::Spectrogram attack_sample(diffnet::DiffTransformer<float>& model, const tfmap::Spectrogram& img, int label,
                                 double epsilon, std::size_t sample, const Predictor& pred);

EvalReport evaluate(const diffnet::DiffTransformer<float>& model, const dataset::Dataset& ds, const std::string& split,
                    const Predictor& pred, std::size_t workers = 1);

// One report per budget, in the given order; budgets are in units of 1/255.
std::vector<EvalReport> eval_adversarial(const diffnet::DiffTransformer<float>& model, const dataset::Dataset& ds,
                                         const std::string& split, const std::vector<int>& eps_255,
                                         const Predictor& pred, std::size_t workers = 1);

// accuracy.csv, accuracy_by_isnr.csv, accuracy_by_class.csv, confusion.csv
void write_clean_reports(const EvalReport& r, const std::filesystem::path& dir);
// attack.csv, attack_by_isnr.csv, attack_by_class.csv
void write_attack_reports(const std::vector<EvalReport>& rows, const std::filesystem::path& dir);

struct FlopsReport {
    std::uint64_t total = 0;
    double band_lo = 1.0e6;
    double band_hi = 2.6e6;
    diffnet::FlopsBreakdown breakdown;

    bool in_band() const { return static_cast<double>(total) >= band_lo && static_cast<double>(total) <= band_hi; }
    std::string format() const;
};

FlopsReport flops_report(const diffnet::ModelConfig& cfg);

} // namespace jamident::evaluate
