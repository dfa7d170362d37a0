#pragma once

// Training loops for the three defense strategies, patch masking and the
// masked-ensemble prediction rule.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jamident/diffnet.hpp"
#include "jamident/rng.hpp"
#include "jamident/tensor.hpp"

namespace jamident::training {

using diffnet::DiffTransformer;
using diffnet::PatchSet;
using Model = DiffTransformer<float>;
using TensorF = ad::Tensor<float>;

enum class Strategy { baseline, masked, consistent };
std::string_view to_string(Strategy s);
std::optional<Strategy> strategy_from_string(std::string_view s);

// ---- masking ---------------------------------------------------------------

enum class MaskMode { continuous, discrete };
std::string_view to_string(MaskMode m);
std::optional<MaskMode> mask_mode_from_string(std::string_view s);

struct MaskStrategy {
    MaskMode mode = MaskMode::discrete;
    double rate = 0.3;  // fraction of patches hidden

    // round(rate * n). Throws unless 0 <= rate and the count leaves at least
    // one patch visible.
    std::size_t masked_count(std::size_t n_patches) const;
};

// Visible patches (sorted) after hiding `masked` consecutive indices starting
// at `start`, wrapping around the end of the sequence.
PatchSet continuous_mask(std::size_t n_patches, std::size_t masked, std::size_t start);

// Visible patches (sorted) for one random mask.
PatchSet sample_mask(const MaskStrategy& s, std::size_t n_patches, Rng& rng);

struct MaskEnsembleConfig {
    std::size_t branches = 4;
    MaskStrategy mask{};
    double noise_std = 0.1;  // feature noise added after the patch embedding
};

// Mean over branches of softmax(logits) for independently masked and noised
// copies of each image: B x classes. Masks are drawn branch-major from rng.
TensorF ensemble_probs(Model& model, std::span<const TensorF> images, const MaskEnsembleConfig& cfg, Rng& rng);
// Single image: probabilities of length classes.
TensorF ensemble_forward(Model& model, const TensorF& image, const MaskEnsembleConfig& cfg, Rng& rng);

// ---- consistency objective -------------------------------------------------

struct ConsistencyConfig {
    double feature_weight = 0.2;  // squared distance between pooled features
    double prob_weight = 0.2;     // squared distance between class probabilities
    MaskStrategy mask{};
    double noise_std = 0.1;
    bool ce_on_both = false;      // average the CE over both branches
};

struct ConsistencyLoss {
    TensorF total;
    TensorF ce;
    TensorF feature;  // batch mean of ||z_regular - z_robust||^2
    TensorF prob;     // batch mean of ||p_regular - p_robust||^2
    TensorF regular_logits;
};

// Regular branch sees the clean full image; the robust branch sees a masked,
// feature-noised copy.
ConsistencyLoss consistency_loss(Model& model, std::span<const TensorF> images, std::span<const int> labels,
                                 const ConsistencyConfig& cfg, Rng& rng);

// ---- optimizer -------------------------------------------------------------

class Sgd {
public:
    Sgd(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {}
    // Applies one step to every trainable parameter and clears gradients.
    void step(ad::ParamList<float>& params);

private:
    double lr_;
    double momentum_;
    std::vector<std::vector<float>> velocity_;
};

// ---- training --------------------------------------------------------------

// Row-major float images (N x image_numel) with labels; `indices` selects
// the rows used.
struct ImageSet {
    std::span<const float> images;
    std::span<const std::uint8_t> labels;
    std::vector<std::size_t> indices;

    std::size_t size() const { return indices.size(); }
    TensorF image(std::size_t k, std::size_t numel) const;
    int label(std::size_t k) const { return labels[indices[k]]; }
};

struct TrainConfig {
    std::size_t epochs = 15;
    double lr = 0.001;
    double momentum = 0.0;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;  // shuffling, masks and noise
    bool recalibrate_bn = true;  // re-estimate batch-norm statistics after the last epoch
};

struct EpochRecord {
    std::size_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

struct TrainOptions {
    Strategy strategy = Strategy::baseline;
    TrainConfig train{};
    MaskEnsembleConfig mask{};
    ConsistencyConfig consistency{};
    ProgressFn progress;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t steps = 0;
};

// Replaces the batch-norm running statistics with their average over the
// clean images of `data` under the current weights, in batches of
// `batch_size`. Leaves the model in eval mode.
void recalibrate_batchnorm(Model& model, const ImageSet& data, std::size_t batch_size);

// Runs the selected strategy. Throws std::runtime_error when the loss turns
// non-finite, naming the epoch, batch and largest parameter magnitude.
TrainResult train(Model& model, const ImageSet& data, const TrainOptions& opts);

} // namespace jamident::training
