#include "doctest.h"

#include <cmath>

#include "criteria.hpp"
#include "jamident/attack.hpp"
#include "jamident/siggen.hpp"

using namespace jamident;

namespace {

tfmap::Spectrogram example_image(std::size_t i) {
    const auto t = siggen::kAllJammingTypes[i % siggen::kNumJammingTypes];
    const auto ex = siggen::synth_example(t, 0.0, {}, 500 + i);
    return tfmap::signal_to_image(ex.received);
}

double ce_of(diffnet::DiffTransformer<float>& m, const tfmap::Spectrogram& img, int label) {
    const auto logits = m.forward(attack::image_tensor(img));
    const int l[] = {label};
    return ad::cross_entropy(ad::reshape(logits, {1, logits.numel()}), std::span<const int>(l)).item();
}

} // namespace

TEST_CASE("FGSM budget, clipping, channel tying and linear surrogate") {
    const auto r = criteria::fgsm_contract();
    INFO(r.detail);
    CHECK(r.pass);
}

TEST_CASE("zero budget is the identity and negative budgets are rejected") {
    diffnet::DiffTransformer<float> m({}, 2);
    const auto img = example_image(3);
    CHECK(attack::fgsm(m, img, 3, {0.0, 0}).pixels == img.pixels);
    CHECK_THROWS_AS(attack::fgsm(m, img, 3, {-0.01, 0}), std::invalid_argument);
}

TEST_CASE("channel-averaged gradient matches finite differences") {
    diffnet::DiffTransformer<float> m({}, 4);
    m.set_training(false);
    const auto img = example_image(5);
    const int label = 5;
    attack::LossFn loss = [&](const ad::Tensor<float>& x) {
        const auto logits = m.forward(x);
        const int l[] = {label};
        return ad::cross_entropy(ad::reshape(logits, {1, logits.numel()}), std::span<const int>(l));
    };
    const auto g = attack::channel_mean_gradient(img, loss);
    REQUIRE(g.size() == 1600);

    // perturb one position in all three channels at once: d/dh = 3 * mean gradient
    const double h = 1e-2;
    for (std::size_t pos : {0u, 417u, 820u, 1599u}) {
        auto up = img, dn = img;
        for (std::size_t c = 0; c < 3; ++c) {
            up.pixels[c * 1600 + pos] += static_cast<float>(h);
            dn.pixels[c * 1600 + pos] -= static_cast<float>(h);
        }
        const double num = (ce_of(m, up, label) - ce_of(m, dn, label)) / (2 * h) / 3.0;
        CHECK(std::abs(num - g[pos]) <= 2e-3 * std::max(1.0, std::abs(num)) + 1e-4);
    }
}

TEST_CASE("a small FGSM step does not lower the batch loss") {
    diffnet::DiffTransformer<float> m({}, 6);
    m.set_training(false);
    double clean = 0.0, adv = 0.0;
    for (std::size_t i = 0; i < 16; ++i) {
        const auto img = example_image(i);
        const int label = static_cast<int>(i % 8);
        clean += ce_of(m, img, label);
        adv += ce_of(m, attack::fgsm(m, img, label, {3.0 / 255.0, 0}), label);
    }
    CHECK(adv >= clean);
}
