#pragma once

// Differential-transformer classifier over spectrogram patches.
//
// image (3 x 40 x 40) -> 100 patches of 48 values -> conv1d(k=3) + BN + ReLU
// -> 2 x [pre-norm multi-head differential attention, pre-norm gated FFN]
// -> mean over patches -> linear -> 8 logits.
//
// Differential attention replaces softmax(QK^T/sqrt d) with the difference
// softmax(Q1 K1^T/sqrt d) - lambda * softmax(Q2 K2^T/sqrt d) of two score
// maps, which cancels attention mass common to both maps.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "jamident/rng.hpp"
#include "jamident/tensor.hpp"

namespace jamident::diffnet {

using ad::Tensor;

struct ModelConfig {
    std::size_t image_channels = 3;
    std::size_t image_height = 40;
    std::size_t image_width = 40;
    std::size_t patch = 4;
    std::size_t embed_dim = 32;
    std::size_t heads = 4;
    std::size_t blocks = 2;
    std::size_t expansion = 2;
    std::size_t num_classes = 8;
    std::size_t conv_kernel = 3;
    double lambda = 0.8;

    std::size_t patch_dim() const { return image_channels * patch * patch; }
    std::size_t patches_per_row() const { return image_width / patch; }
    std::size_t num_patches() const { return (image_height / patch) * (image_width / patch); }
    std::size_t head_dim() const { return embed_dim / heads; }
    std::size_t hidden_dim() const { return expansion * embed_dim; }
    std::size_t image_numel() const { return image_channels * image_height * image_width; }

    // Throws std::invalid_argument on inconsistent dimensions.
    void validate() const;
};

// Sorted list of patch indices that take part in a forward pass.
using PatchSet = std::vector<std::size_t>;

template <class T>
struct DiffHead {
    Tensor<T> wq;  // C x 2d, columns [Q1 | Q2]
    Tensor<T> wk;  // C x 2d, columns [K1 | K2]
    Tensor<T> wv;  // C x d
    Tensor<T> ln_gamma;
    Tensor<T> ln_beta;
};

template <class T>
struct MultiDiffLayer {
    std::vector<DiffHead<T>> heads;
    Tensor<T> wo;  // C x C
};

template <class T>
struct EluLayer {
    Tensor<T> w1;  // C x bC
    Tensor<T> w2;  // C x bC
    Tensor<T> w3;  // bC x C
};

template <class T>
struct EncoderBlock {
    Tensor<T> ln1_gamma, ln1_beta;
    MultiDiffLayer<T> attn;
    Tensor<T> ln2_gamma, ln2_beta;
    EluLayer<T> ffn;
};

template <class T>
struct PatchEmbed {
    Tensor<T> conv_w;  // K x patch_dim x C
    Tensor<T> conv_b;
    Tensor<T> bn_gamma, bn_beta;
    Tensor<T> bn_mean, bn_var;  // running statistics, not trained
};

// ---- building blocks (usable on their own) ---------------------------------

// Flat gather index mapping a C x H x W image to N x (C*p*p) patches:
// p x p tiles in row-major tile order, each flattened channel-major.
std::vector<std::size_t> patch_index(const ModelConfig& cfg);

template <class T>
Tensor<T> patch_split(const Tensor<T>& image, const ModelConfig& cfg);

// Inverse of patch_split on raw values.
template <class T>
std::vector<T> patch_merge(std::span<const T> patches, const ModelConfig& cfg);

// (softmax(Q1 K1^T/sqrt d) - lambda * softmax(Q2 K2^T/sqrt d)) V for one sequence.
template <class T>
Tensor<T> diff_attention(const Tensor<T>& x, const DiffHead<T>& head, T lambda);

// The N x N differential score matrix of one head (for inspection and tests).
template <class T>
Tensor<T> diff_scores(const Tensor<T>& x, const DiffHead<T>& head, T lambda);

// Concat_i((1 - lambda) * LN(head_i)) W_O, attention restricted to each row
// segment (empty segments = a single sequence).
template <class T>
Tensor<T> multi_diff(const Tensor<T>& x, const MultiDiffLayer<T>& layer, T lambda,
                     std::span<const std::size_t> segments = {});

// (SiLU(x W1) * x W2) W3
template <class T>
Tensor<T> elu_block(const Tensor<T>& x, const EluLayer<T>& layer);

// O = MultiDiff(LN(x)) + x ; O' = ELU(LN(O)) + O
template <class T>
Tensor<T> encoder_block(const Tensor<T>& x, const EncoderBlock<T>& block, T lambda,
                        std::span<const std::size_t> segments = {});

// ---- model -----------------------------------------------------------------

template <class T>
struct FeatureNoise {
    T stddev = T(0);
    Rng* rng = nullptr;
};

template <class T>
struct ForwardOutput {
    Tensor<T> logits;    // B x classes
    Tensor<T> features;  // B x C, pooled features feeding the classifier
    Tensor<T> tokens;    // (sum of active patches) x C, last encoder output
    std::vector<std::size_t> segments;
};

template <class T>
class DiffTransformer {
public:
    explicit DiffTransformer(ModelConfig cfg = {}, std::uint64_t init_seed = 0);

    DiffTransformer(const DiffTransformer&) = delete;
    DiffTransformer& operator=(const DiffTransformer&) = delete;
    DiffTransformer(DiffTransformer&&) noexcept = default;
    DiffTransformer& operator=(DiffTransformer&&) noexcept = default;

    const ModelConfig& config() const { return cfg_; }
    T lambda() const { return static_cast<T>(cfg_.lambda); }

    ad::ParamList<T>& params() { return params_; }
    const ad::ParamList<T>& params() const { return params_; }
    const ad::Param<T>& param(const std::string& name) const;
    std::size_t param_count(bool trainable_only = true) const;

    void set_training(bool on) { training_ = on; }
    bool training() const { return training_; }

    // Weight of the newest batch in the running statistics (training mode).
    void set_batchnorm_momentum(double m) { bn_momentum_ = m; }
    double batchnorm_momentum() const { return bn_momentum_; }
    // Running mean 0, running variance 1.
    void reset_batchnorm_stats();

    // Deep copy of all parameter values and buffers.
    DiffTransformer clone() const;
    template <class U>
    DiffTransformer<U> cast() const;
    void copy_values_from(const DiffTransformer& other);

    // images: each C x H x W. active: empty, or one PatchSet per image (an
    // empty PatchSet inside means "all patches"). Throws on empty selections.
    ForwardOutput<T> forward_batch(std::span<const Tensor<T>> images, std::span<const PatchSet> active = {},
                                   FeatureNoise<T> noise = {});

    // Logits (length classes) for a single image.
    Tensor<T> forward(const Tensor<T>& image, const PatchSet* active = nullptr, FeatureNoise<T> noise = {});

    PatchEmbed<T>& embed() { return embed_; }
    std::vector<EncoderBlock<T>>& blocks() { return blocks_; }
    Tensor<T>& head_w() { return head_w_; }
    Tensor<T>& head_b() { return head_b_; }

private:
    Tensor<T> make_param(const std::string& name, ad::Shape shape, double bound, Rng& rng, bool trainable = true);
    Tensor<T> make_const(const std::string& name, ad::Shape shape, T value, bool trainable = true);

    ModelConfig cfg_;
    bool training_ = false;
    double bn_momentum_ = 0.1;
    ad::ParamList<T> params_;
    PatchEmbed<T> embed_;
    std::vector<EncoderBlock<T>> blocks_;
    Tensor<T> head_w_;  // C x classes
    Tensor<T> head_b_;
};

// Argmax with ties resolved to the lowest index.
template <class T>
int argmax(std::span<const T> values);

template <class T>
int predict(DiffTransformer<T>& m, const Tensor<T>& image);

// Analytic FLOPs of one unmasked forward pass. Convention: one
// multiply-accumulate is 2 FLOPs (bias adds absorbed), normalizations and
// softmax 5 FLOPs per element, SiLU 5 per element, other elementwise ops 1.
struct FlopsItem {
    std::string name;
    std::uint64_t flops = 0;
};
struct FlopsBreakdown {
    std::vector<FlopsItem> items;
    std::uint64_t total() const;
};
FlopsBreakdown count_flops(const ModelConfig& cfg);

template <class T>
std::uint64_t count_flops(const DiffTransformer<T>& m) {
    return count_flops(m.config()).total();
}

// Full patch set {0..n-1}.
PatchSet all_patches(std::size_t n);

} // namespace jamident::diffnet
