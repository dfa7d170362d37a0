#include "jamident/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace jamident::attack {

namespace {

constexpr std::size_t kPlane = tfmap::kImageSize * tfmap::kImageSize;

float step_pixel(float x, double delta) {
    const double target = std::clamp(static_cast<double>(x) + delta, 0.0, 1.0);
    auto out = static_cast<float>(target);
    const double budget = std::abs(delta);
    while (std::abs(static_cast<double>(out) - static_cast<double>(x)) > budget) out = std::nextafter(out, x);
    return out;
}

} // namespace

ad::Tensor<float> image_tensor(const tfmap::Spectrogram& img, bool requires_grad) {
    return ad::Tensor<float>::from_data({tfmap::kImageChannels, tfmap::kImageSize, tfmap::kImageSize},
                                        std::vector<float>(img.pixels.begin(), img.pixels.end()), requires_grad);
}

tfmap::Spectrogram to_spectrogram(std::span<const float> values) {
    if (values.size() != tfmap::kImagePixels) throw std::invalid_argument("to_spectrogram: expected 4800 values");
    tfmap::Spectrogram s;
    std::copy(values.begin(), values.end(), s.pixels.begin());
    return s;
}

std::vector<float> channel_mean_gradient(const tfmap::Spectrogram& img, const LossFn& loss) {
    auto x = image_tensor(img, true);
    auto l = loss(x);
    l.backward();
    const auto g = x.grad_or_zero();
    std::vector<float> mean(kPlane, 0.0f);
    for (std::size_t c = 0; c < tfmap::kImageChannels; ++c)
        for (std::size_t i = 0; i < kPlane; ++i) mean[i] += g[c * kPlane + i];
    for (auto& v : mean) v /= static_cast<float>(tfmap::kImageChannels);
    return mean;
}

tfmap::Spectrogram fgsm_from_loss(const tfmap::Spectrogram& img, double epsilon, const LossFn& loss) {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("fgsm: epsilon must be non-negative");
    if (epsilon == 0.0) return img;

    const auto g = channel_mean_gradient(img, loss);
    tfmap::Spectrogram out = img;
    for (std::size_t i = 0; i < kPlane; ++i) {
        const double sign = g[i] > 0.0f ? 1.0 : (g[i] < 0.0f ? -1.0 : 0.0);
        if (sign == 0.0) continue;
        for (std::size_t c = 0; c < tfmap::kImageChannels; ++c) {
            float& px = out.pixels[c * kPlane + i];
            px = step_pixel(px, sign * epsilon);
        }
    }
    return out;
}

tfmap::Spectrogram fgsm(diffnet::DiffTransformer<float>& model, const tfmap::Spectrogram& img, int label,
                        const AttackConfig& cfg) {
    const bool was_training = model.training();
    model.set_training(false);
    const int labels[] = {label};
    auto loss = [&](const ad::Tensor<float>& x) {
        auto logits = model.forward(x);
        return ad::cross_entropy(ad::reshape(logits, {1, logits.numel()}), std::span<const int>(labels));
    };
    auto out = fgsm_from_loss(img, cfg.epsilon, loss);
    ad::zero_grad(model.params());
    model.set_training(was_training);
    return out;
}

} // namespace jamident::attack
