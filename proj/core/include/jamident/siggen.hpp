#pragma once

// Jamming and OFDM waveform synthesis, fading channels and ISNR mixing.
//
// All signals are complex baseband. The received-signal model is
//
//   J = alpha * (z * h) + (o * g) + n
//
// with z a jamming waveform through a single-path Rician gain h, o an OFDM
// communication signal through a Rayleigh multipath channel g, and n AWGN.
// alpha is chosen so the realized jamming-to-(comm+noise) power ratio hits
// the requested ISNR.

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "jamident/rng.hpp"

namespace jamident::siggen {

using cplx = std::complex<double>;

enum class JammingType : std::uint8_t { CW = 0, LFM, AM, TFM, BPSK, NAM, QFM, SFM };

inline constexpr std::size_t kNumJammingTypes = 8;
inline constexpr std::array<JammingType, kNumJammingTypes> kAllJammingTypes = {
    JammingType::CW,   JammingType::LFM, JammingType::AM,  JammingType::TFM,
    JammingType::BPSK, JammingType::NAM, JammingType::QFM, JammingType::SFM};

std::string_view to_string(JammingType t);
std::optional<JammingType> jamming_type_from_string(std::string_view s);
constexpr int label_of(JammingType t) { return static_cast<int>(t); }
JammingType jamming_type_from_label(int label);

bool is_fm(JammingType t);          // LFM, TFM, QFM, SFM
bool is_narrowband(JammingType t);  // AM, NAM, BPSK

// Parameter ranges of the interference catalogue. Frequencies in Hz.
struct ParamRanges {
    double carrier_min_hz = -25e6;
    double carrier_max_hz = 25e6;
    double fm_bandwidth_min_hz = 10e6;
    double fm_bandwidth_max_hz = 50e6;
    double nb_bandwidth_min_hz = 1.5e6;
    double nb_bandwidth_max_hz = 5e6;
    double period_min_s = 1e-5;
    double period_max_s = 1e-4;
    double isnr_min_db = -14.0;
    double isnr_max_db = 8.0;
};

struct JammingParams {
    JammingType type = JammingType::CW;
    double carrier_hz = 0.0;
    std::optional<double> bandwidth_hz;  // absent for CW
    std::optional<double> period_s;      // FM types only
    double isnr_db = 0.0;
    double init_phase_rad = 0.0;         // [0, 2*pi)
    std::uint64_t waveform_seed = 0;     // NAM noise and BPSK chips
};

struct OfdmConfig {
    double subcarrier_spacing_hz = 15e3;
    int num_subcarriers = 1200;
    double center_hz = 0.0;
    std::uint64_t payload_seed = 0;

    double occupied_bandwidth_hz() const { return subcarrier_spacing_hz * num_subcarriers; }
};

struct ChannelConfig {
    double rician_k_db = 15.0;
    std::vector<double> rayleigh_delays_s = {0.0, 1e-7, 2e-7, 3e-7, 4e-7, 5e-7};
    std::vector<double> rayleigh_gains_db = {0.0, -4.0, -8.0, -12.0, -16.0, -20.0};
    std::uint64_t seed = 0;
};

struct ComplexSignal {
    std::vector<cplx> samples;
    double sample_rate_hz = 0.0;

    std::size_t size() const { return samples.size(); }
    double mean_power() const;
};

JammingParams sample_params(JammingType type, Rng& rng, const ParamRanges& ranges = {});

// Unit mean power waveform. Throws std::invalid_argument when the occupied
// band |carrier| + bandwidth/2 would exceed fs/2, or n_samples == 0.
ComplexSignal synth_jamming(const JammingParams& p, std::size_t n_samples, double fs);

// Unit mean power OFDM signal with QPSK on every active subcarrier (DC
// excluded). Throws std::invalid_argument if fs does not exceed the occupied
// bandwidth.
ComplexSignal synth_ofdm(const OfdmConfig& cfg, std::size_t n_samples, double fs);

// Single complex gain with LOS/scatter power ratio 10^(k_db/10) and unit
// expected power; the LOS phase is uniform.
cplx draw_rician_gain(double k_db, Rng& rng);
ComplexSignal apply_rician(const ComplexSignal& s, double k_db, Rng& rng);

// Tap powers normalized to unit sum; delays rounded to the sample grid.
std::vector<double> normalized_tap_powers(std::span<const double> gains_db);
std::vector<std::size_t> tap_offsets(std::span<const double> delays_s, double fs);
std::vector<cplx> draw_rayleigh_taps(std::span<const double> tap_powers, Rng& rng);
ComplexSignal apply_rayleigh_multipath(const ComplexSignal& s, const ChannelConfig& ch, Rng& rng);

// J = alpha*jam + comm + n. Noise power is P_comm / 10^(snr_db/10); alpha
// sets 10*log10(P_jam / (P_comm + P_noise)) = isnr_db on this realization.
ComplexSignal mix_at_isnr(const ComplexSignal& jam, const ComplexSignal& comm, double isnr_db,
                          double snr_db, Rng& rng);

// Realized ISNR of a mixture's parts, as measured by mix_at_isnr.
struct MixParts {
    ComplexSignal jam;    // scaled jamming component
    ComplexSignal comm;
    ComplexSignal noise;
};
MixParts mix_parts(const ComplexSignal& jam, const ComplexSignal& comm, double isnr_db,
                   double snr_db, Rng& rng);

// End-to-end received-signal synthesis for one labelled example.
struct ScenarioConfig {
    double fs_hz = 100e6;
    std::size_t n_samples = 1600;
    double snr_db = 10.0;
    OfdmConfig ofdm{};
    ChannelConfig channel{};
    ParamRanges ranges{};
};

struct Example {
    JammingParams params;
    ComplexSignal received;
};

// Draws jamming parameters (ISNR overridden by isnr_db), synthesizes both
// paths through their channels and mixes. Pure function of its arguments.
Example synth_example(JammingType type, double isnr_db, const ScenarioConfig& cfg, std::uint64_t seed);

} // namespace jamident::siggen
