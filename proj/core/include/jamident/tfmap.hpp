#pragma once

// STFT power maps and the normalized 3-channel spectrogram image.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "jamident/siggen.hpp"

namespace jamident::tfmap {

struct StftConfig {
    std::size_t n_fft = 40;   // also the Hann window length
    std::size_t hop = 40;
    std::size_t frames = 40;

    std::size_t required_samples() const { return (frames - 1) * hop + n_fft; }
};

// rows = frequency bins (fft-shifted, row n_fft/2 is 0 Hz), cols = frames.
struct PowerMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;  // row-major

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
};

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSize = 40;
inline constexpr std::size_t kImagePixels = kImageChannels * kImageSize * kImageSize;

// 3 x 40 x 40 image, channel-major then frequency row then time column.
// All pixels lie in [0, 1]; the three channels are identical.
struct Spectrogram {
    std::array<float, kImagePixels> pixels{};

    float at(std::size_t c, std::size_t r, std::size_t t) const {
        return pixels[(c * kImageSize + r) * kImageSize + t];
    }
    float& at(std::size_t c, std::size_t r, std::size_t t) {
        return pixels[(c * kImageSize + r) * kImageSize + t];
    }
};

inline constexpr double kLogFloor = 1e-12;

// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t n);

// Throws std::invalid_argument when the signal is shorter than
// cfg.required_samples() or the config is degenerate.
PowerMap stft_power(const siggen::ComplexSignal& s, const StftConfig& cfg = {});

// log10 of power with a 1e-12 floor, min-max normalized over the map and
// replicated into 3 channels. A constant map yields all 0.5. The map must be
// 40 x 40 and non-negative.
Spectrogram to_image(const PowerMap& pm);

// Range of log10(pm + floor) over the map.
struct LogBounds {
    double lo = 0.0;
    double hi = 0.0;
};
LogBounds log_bounds(const PowerMap& pm);

// Same transform with externally fixed normalization bounds; values outside
// [lo, hi] are clipped. to_image(pm) == to_image(pm, log_bounds(pm)).
Spectrogram to_image(const PowerMap& pm, LogBounds bounds);

Spectrogram signal_to_image(const siggen::ComplexSignal& s, const StftConfig& cfg = {});

} // namespace jamident::tfmap
