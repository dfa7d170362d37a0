#pragma once

// White-box FGSM under an L-infinity budget on spectrogram pixels.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "jamident/diffnet.hpp"
#include "jamident/tensor.hpp"
#include "jamident/tfmap.hpp"

namespace jamident::attack {

// Perturbation levels, in units of 1/255.
inline constexpr std::array<int, 4> kEpsLevels255 = {3, 6, 8, 14};

struct AttackConfig {
    double epsilon = 0.0;  // pixel-scale L-infinity budget
    std::uint64_t seed = 0;
};

// Differentiable scalar loss of a 3 x 40 x 40 image tensor.
using LossFn = std::function<ad::Tensor<float>(const ad::Tensor<float>& image)>;

ad::Tensor<float> image_tensor(const tfmap::Spectrogram& img, bool requires_grad = false);
tfmap::Spectrogram to_spectrogram(std::span<const float> values);

// Gradient of the loss w.r.t. the pixels, averaged over the three channels
// (one value per 40 x 40 position).
std::vector<float> channel_mean_gradient(const tfmap::Spectrogram& img, const LossFn& loss);

// x_a = clip(x + eps * sign(g), 0, 1) with g the channel-averaged loss
// gradient; the same step is applied to every channel. Guarantees
// |x_a - x| <= eps per pixel (float rounding is resolved toward x), and
// returns x unchanged for eps == 0.
tfmap::Spectrogram fgsm_from_loss(const tfmap::Spectrogram& img, double epsilon, const LossFn& loss);

// FGSM against the plain (unmasked) forward pass, cross-entropy loss.
tfmap::Spectrogram fgsm(diffnet::DiffTransformer<float>& model, const tfmap::Spectrogram& img, int label,
                        const AttackConfig& cfg);

} // namespace jamident::attack
