#include "jamident/tfmap.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace jamident::tfmap {

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

PowerMap stft_power(const siggen::ComplexSignal& s, const StftConfig& cfg) {
    if (cfg.n_fft == 0 || cfg.hop == 0 || cfg.frames == 0)
        throw std::invalid_argument("stft_power: n_fft, hop and frames must be positive");
    if (s.size() < cfg.required_samples())
        throw std::invalid_argument("stft_power: signal has " + std::to_string(s.size()) + " samples, need " +
                                    std::to_string(cfg.required_samples()));

    const std::size_t n = cfg.n_fft;
    const auto w = hann_window(n);
    std::vector<siggen::cplx> twiddle(n);
    for (std::size_t i = 0; i < n; ++i)
        twiddle[i] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));

    PowerMap pm{n, cfg.frames, std::vector<double>(n * cfg.frames)};
    std::vector<siggen::cplx> frame(n);
    for (std::size_t f = 0; f < cfg.frames; ++f) {
        const std::size_t start = f * cfg.hop;
        for (std::size_t m = 0; m < n; ++m) frame[m] = s.samples[start + m] * w[m];
        for (std::size_t k = 0; k < n; ++k) {
            siggen::cplx acc{};
            for (std::size_t m = 0; m < n; ++m) acc += frame[m] * twiddle[(k * m) % n];
            const std::size_t row = (k + n / 2) % n;
            pm.at(row, f) = std::norm(acc);
        }
    }
    return pm;
}

namespace {

std::vector<double> log_values(const PowerMap& pm) {
    if (pm.rows != kImageSize || pm.cols != kImageSize || pm.values.size() != kImageSize * kImageSize)
        throw std::invalid_argument("to_image: power map must be 40x40");
    std::vector<double> v(pm.values.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(pm.values[i] >= 0.0)) throw std::invalid_argument("to_image: power map must be non-negative");
        v[i] = std::log10(pm.values[i] + kLogFloor);
    }
    return v;
}

} // namespace

LogBounds log_bounds(const PowerMap& pm) {
    const auto v = log_values(pm);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return {*lo, *hi};
}

Spectrogram to_image(const PowerMap& pm, LogBounds bounds) {
    const auto v = log_values(pm);
    const double span = bounds.hi - bounds.lo;

    Spectrogram img;
    const std::size_t plane = kImageSize * kImageSize;
    for (std::size_t i = 0; i < plane; ++i) {
        const float px = span > 0.0 ? static_cast<float>(std::clamp((v[i] - bounds.lo) / span, 0.0, 1.0)) : 0.5f;
        for (std::size_t c = 0; c < kImageChannels; ++c) img.pixels[c * plane + i] = px;
    }
    return img;
}

Spectrogram to_image(const PowerMap& pm) { return to_image(pm, log_bounds(pm)); }

Spectrogram signal_to_image(const siggen::ComplexSignal& s, const StftConfig& cfg) {
    return to_image(stft_power(s, cfg));
}

} // namespace jamident::tfmap
