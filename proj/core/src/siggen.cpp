#include "jamident/siggen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace jamident::siggen {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::size_t kLowpassTaps = 101;
constexpr double kNamModulationStd = 0.5;
constexpr double kAmModulationDepth = 0.5;

constexpr std::array<std::string_view, kNumJammingTypes> kNames = {"CW",   "LFM", "AM",  "TFM",
                                                                   "BPSK", "NAM", "QFM", "SFM"};

double frac(double x) { return x - std::floor(x); }

void normalize_power(std::vector<cplx>& s) {
    double p = 0.0;
    for (const auto& v : s) p += std::norm(v);
    p /= static_cast<double>(s.size());
    if (!(p > 0.0)) throw std::runtime_error("cannot normalize a zero-power waveform");
    const double g = 1.0 / std::sqrt(p);
    for (auto& v : s) v *= g;
}

double mean_power(std::span<const cplx> s) {
    double p = 0.0;
    for (const auto& v : s) p += std::norm(v);
    return s.empty() ? 0.0 : p / static_cast<double>(s.size());
}

// Windowed-sinc (Hamming) low-pass, unit DC gain.
std::vector<double> lowpass_taps(double cutoff_hz, double fs) {
    std::vector<double> h(kLowpassTaps);
    const double fc = cutoff_hz / fs;
    const double mid = 0.5 * static_cast<double>(kLowpassTaps - 1);
    double sum = 0.0;
    for (std::size_t m = 0; m < kLowpassTaps; ++m) {
        const double x = static_cast<double>(m) - mid;
        const double sinc = x == 0.0 ? 2.0 * fc : std::sin(kTwoPi * fc * x) / (std::numbers::pi * x);
        const double w = 0.54 - 0.46 * std::cos(kTwoPi * static_cast<double>(m) / static_cast<double>(kLowpassTaps - 1));
        h[m] = sinc * w;
        sum += h[m];
    }
    for (auto& v : h) v /= sum;
    return h;
}

// Instantaneous frequency of the swept types at time t.
double sweep_frequency(const JammingParams& p, double t) {
    const double b = *p.bandwidth_hz;
    const double u = frac(t / *p.period_s);
    const double lo = p.carrier_hz - 0.5 * b;
    switch (p.type) {
        case JammingType::LFM: return lo + b * u;
        case JammingType::TFM: return lo + b * (u < 0.5 ? 2.0 * u : 2.0 - 2.0 * u);
        case JammingType::QFM: return lo + b * u * u;
        default: break;
    }
    throw std::logic_error("sweep_frequency: not a swept type");
}

} // namespace

std::string_view to_string(JammingType t) { return kNames.at(static_cast<std::size_t>(t)); }

std::optional<JammingType> jamming_type_from_string(std::string_view s) {
    for (std::size_t i = 0; i < kNames.size(); ++i)
        if (kNames[i] == s) return static_cast<JammingType>(i);
    return std::nullopt;
}

JammingType jamming_type_from_label(int label) {
    if (label < 0 || label >= static_cast<int>(kNumJammingTypes))
        throw std::out_of_range("jamming label out of range: " + std::to_string(label));
    return static_cast<JammingType>(label);
}

bool is_fm(JammingType t) {
    return t == JammingType::LFM || t == JammingType::TFM || t == JammingType::QFM || t == JammingType::SFM;
}

bool is_narrowband(JammingType t) {
    return t == JammingType::AM || t == JammingType::NAM || t == JammingType::BPSK;
}

double ComplexSignal::mean_power() const { return siggen::mean_power(samples); }

JammingParams sample_params(JammingType type, Rng& rng, const ParamRanges& r) {
    auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    JammingParams p;
    p.type = type;
    p.carrier_hz = uniform(r.carrier_min_hz, r.carrier_max_hz);
    if (is_fm(type)) {
        p.bandwidth_hz = uniform(r.fm_bandwidth_min_hz, r.fm_bandwidth_max_hz);
        p.period_s = uniform(r.period_min_s, r.period_max_s);
    } else if (is_narrowband(type)) {
        p.bandwidth_hz = uniform(r.nb_bandwidth_min_hz, r.nb_bandwidth_max_hz);
    }
    // BPSK shares the common ISNR axis with the other types.
    p.isnr_db = uniform(r.isnr_min_db, r.isnr_max_db);
    p.init_phase_rad = uniform(0.0, kTwoPi);
    p.waveform_seed = rng();
    return p;
}

ComplexSignal synth_jamming(const JammingParams& p, std::size_t n_samples, double fs) {
    if (n_samples == 0) throw std::invalid_argument("synth_jamming: n_samples must be positive");
    if (!(fs > 0.0)) throw std::invalid_argument("synth_jamming: sample rate must be positive");
    if (p.type != JammingType::CW && !p.bandwidth_hz)
        throw std::invalid_argument("synth_jamming: bandwidth required for " + std::string(to_string(p.type)));
    if (is_fm(p.type) && !p.period_s)
        throw std::invalid_argument("synth_jamming: period required for " + std::string(to_string(p.type)));

    const double bw = p.type == JammingType::CW ? 0.0 : *p.bandwidth_hz;
    if (std::abs(p.carrier_hz) + 0.5 * bw > 0.5 * fs + 1e-9)
        throw std::invalid_argument("synth_jamming: |carrier| + bandwidth/2 exceeds fs/2 (aliasing)");

    ComplexSignal out;
    out.sample_rate_hz = fs;
    out.samples.resize(n_samples);
    auto& s = out.samples;
    const double dt = 1.0 / fs;

    auto carrier = [&](std::size_t n) {
        const double t = static_cast<double>(n) * dt;
        return std::polar(1.0, kTwoPi * p.carrier_hz * t + p.init_phase_rad);
    };

    switch (p.type) {
        case JammingType::CW:
            for (std::size_t n = 0; n < n_samples; ++n) s[n] = carrier(n);
            break;

        case JammingType::LFM:
        case JammingType::TFM:
        case JammingType::QFM: {
            // Phase accumulation: the phase step from n to n+1 is 2*pi*f(n)/fs.
            double phase = p.init_phase_rad;
            for (std::size_t n = 0; n < n_samples; ++n) {
                s[n] = std::polar(1.0, phase);
                phase = std::fmod(phase + kTwoPi * sweep_frequency(p, static_cast<double>(n) * dt) * dt, kTwoPi);
            }
            break;
        }

        case JammingType::SFM: {
            const double fm = 1.0 / *p.period_s;
            const double index = bw / (2.0 * fm);
            for (std::size_t n = 0; n < n_samples; ++n) {
                const double t = static_cast<double>(n) * dt;
                s[n] = std::polar(1.0, kTwoPi * p.carrier_hz * t + index * std::sin(kTwoPi * fm * t) + p.init_phase_rad);
            }
            break;
        }

        case JammingType::AM: {
            const double fm = 0.5 * bw;
            for (std::size_t n = 0; n < n_samples; ++n) {
                const double t = static_cast<double>(n) * dt;
                s[n] = (1.0 + kAmModulationDepth * std::cos(kTwoPi * fm * t)) * carrier(n);
            }
            break;
        }

        case JammingType::NAM: {
            Rng rng = make_rng(p.waveform_seed, {0x4e414d});
            std::normal_distribution<double> gauss(0.0, 1.0);
            const auto h = lowpass_taps(0.5 * bw, fs);
            std::vector<double> white(n_samples + h.size() - 1);
            for (auto& v : white) v = gauss(rng);
            std::vector<double> lp(n_samples, 0.0);
            for (std::size_t n = 0; n < n_samples; ++n) {
                double acc = 0.0;
                for (std::size_t m = 0; m < h.size(); ++m) acc += h[m] * white[n + h.size() - 1 - m];
                lp[n] = acc;
            }
            const double mean = std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(n_samples);
            double var = 0.0;
            for (double v : lp) var += (v - mean) * (v - mean);
            var /= static_cast<double>(n_samples);
            const double g = var > 0.0 ? kNamModulationStd / std::sqrt(var) : 0.0;
            for (std::size_t n = 0; n < n_samples; ++n) s[n] = (1.0 + g * (lp[n] - mean)) * carrier(n);
            break;
        }

        case JammingType::BPSK: {
            Rng rng = make_rng(p.waveform_seed, {0x42505348});
            std::bernoulli_distribution coin(0.5);
            const double chips_per_sample = bw / fs;
            std::size_t current = 0;
            double chip = coin(rng) ? 1.0 : -1.0;
            for (std::size_t n = 0; n < n_samples; ++n) {
                const auto idx = static_cast<std::size_t>(std::floor(static_cast<double>(n) * chips_per_sample));
                while (current < idx) {
                    chip = coin(rng) ? 1.0 : -1.0;
                    ++current;
                }
                s[n] = chip * carrier(n);
            }
            break;
        }
    }

    normalize_power(s);
    return out;
}

ComplexSignal synth_ofdm(const OfdmConfig& cfg, std::size_t n_samples, double fs) {
    if (!(fs > cfg.occupied_bandwidth_hz()))
        throw std::invalid_argument("synth_ofdm: sample rate must exceed the occupied bandwidth");
    if (n_samples == 0) throw std::invalid_argument("synth_ofdm: n_samples must be positive");
    if (cfg.num_subcarriers <= 0 || cfg.num_subcarriers % 2 != 0)
        throw std::invalid_argument("synth_ofdm: num_subcarriers must be positive and even");

    const int half = cfg.num_subcarriers / 2;
    const double symbol_len = fs / cfg.subcarrier_spacing_hz;  // samples, need not be integral
    const double qpsk = 1.0 / std::numbers::sqrt2;

    ComplexSignal out;
    out.sample_rate_hz = fs;
    out.samples.assign(n_samples, cplx{});
    auto& s = out.samples;

    std::vector<cplx> data(static_cast<std::size_t>(cfg.num_subcarriers));
    for (std::size_t sym = 0;; ++sym) {
        const auto begin = static_cast<std::size_t>(std::ceil(static_cast<double>(sym) * symbol_len));
        if (begin >= n_samples) break;
        const auto end = std::min(n_samples, static_cast<std::size_t>(std::ceil(static_cast<double>(sym + 1) * symbol_len)));

        Rng rng = make_rng(cfg.payload_seed, {sym});
        std::bernoulli_distribution bit(0.5);
        for (auto& d : data) {
            const double re = bit(rng) ? qpsk : -qpsk;
            const double im = bit(rng) ? qpsk : -qpsk;
            d = cplx(re, im);
        }

        // Subcarriers -half..-1 and 1..half; DC stays empty.
        std::size_t slot = 0;
        for (int k = -half; k <= half; ++k) {
            if (k == 0) continue;
            const double w = kTwoPi * k * cfg.subcarrier_spacing_hz / fs;
            const cplx rot = std::polar(1.0, w);
            cplx ph = data[slot++] * std::polar(1.0, w * static_cast<double>(begin));
            for (std::size_t n = begin; n < end; ++n) {
                s[n] += ph;
                ph *= rot;
            }
        }
    }

    if (cfg.center_hz != 0.0) {
        for (std::size_t n = 0; n < n_samples; ++n)
            s[n] *= std::polar(1.0, kTwoPi * cfg.center_hz * static_cast<double>(n) / fs);
    }
    normalize_power(s);
    return out;
}

cplx draw_rician_gain(double k_db, Rng& rng) {
    if (!std::isfinite(k_db)) throw std::invalid_argument("apply_rician: k_db must be finite");
    const double k = std::pow(10.0, k_db / 10.0);
    const double los = std::sqrt(k / (k + 1.0));
    const double scatter = std::sqrt(1.0 / (k + 1.0));
    std::uniform_real_distribution<double> phase(0.0, kTwoPi);
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
    const double theta = phase(rng);
    const double re = gauss(rng);
    const double im = gauss(rng);
    return std::polar(los, theta) + scatter * cplx(re, im);
}

ComplexSignal apply_rician(const ComplexSignal& s, double k_db, Rng& rng) {
    const cplx g = draw_rician_gain(k_db, rng);
    ComplexSignal out = s;
    for (auto& v : out.samples) v *= g;
    return out;
}

std::vector<double> normalized_tap_powers(std::span<const double> gains_db) {
    if (gains_db.empty()) throw std::invalid_argument("rayleigh channel needs at least one tap");
    std::vector<double> p(gains_db.size());
    std::transform(gains_db.begin(), gains_db.end(), p.begin(), [](double db) { return std::pow(10.0, db / 10.0); });
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= total;
    return p;
}

std::vector<std::size_t> tap_offsets(std::span<const double> delays_s, double fs) {
    std::vector<std::size_t> out(delays_s.size());
    for (std::size_t i = 0; i < delays_s.size(); ++i) {
        if (delays_s[i] < 0.0) throw std::invalid_argument("rayleigh delays must be non-negative");
        out[i] = static_cast<std::size_t>(std::llround(delays_s[i] * fs));
    }
    return out;
}

std::vector<cplx> draw_rayleigh_taps(std::span<const double> tap_powers, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5));
    std::vector<cplx> taps(tap_powers.size());
    for (std::size_t l = 0; l < taps.size(); ++l) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        taps[l] = std::sqrt(tap_powers[l]) * cplx(re, im);
    }
    return taps;
}

ComplexSignal apply_rayleigh_multipath(const ComplexSignal& s, const ChannelConfig& ch, Rng& rng) {
    if (ch.rayleigh_delays_s.size() != ch.rayleigh_gains_db.size())
        throw std::invalid_argument("rayleigh delays and gains differ in length");
    const auto offsets = tap_offsets(ch.rayleigh_delays_s, s.sample_rate_hz);
    const auto powers = normalized_tap_powers(ch.rayleigh_gains_db);
    if (*std::max_element(offsets.begin(), offsets.end()) >= s.size())
        throw std::invalid_argument("rayleigh: max delay must be shorter than the signal");
    const auto taps = draw_rayleigh_taps(powers, rng);

    ComplexSignal out;
    out.sample_rate_hz = s.sample_rate_hz;
    out.samples.assign(s.size(), cplx{});
    for (std::size_t l = 0; l < taps.size(); ++l)
        for (std::size_t n = offsets[l]; n < s.size(); ++n) out.samples[n] += taps[l] * s.samples[n - offsets[l]];
    return out;
}

MixParts mix_parts(const ComplexSignal& jam, const ComplexSignal& comm, double isnr_db, double snr_db, Rng& rng) {
    if (jam.size() != comm.size()) throw std::invalid_argument("mix_at_isnr: jam and comm lengths differ");
    if (jam.sample_rate_hz != comm.sample_rate_hz) throw std::invalid_argument("mix_at_isnr: sample rates differ");
    const double p_jam = jam.mean_power();
    const double p_comm = comm.mean_power();
    if (!(p_jam > 0.0)) throw std::invalid_argument("mix_at_isnr: jamming input has zero power");
    if (!(p_comm > 0.0)) throw std::invalid_argument("mix_at_isnr: communication input has zero power");

    MixParts parts;
    parts.comm = comm;
    parts.noise.sample_rate_hz = comm.sample_rate_hz;
    parts.noise.samples.resize(comm.size());
    std::normal_distribution<double> gauss(0.0, std::sqrt(0.5 * p_comm / std::pow(10.0, snr_db / 10.0)));
    for (auto& v : parts.noise.samples) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        v = cplx(re, im);
    }
    const double p_noise = parts.noise.mean_power();
    const double alpha = std::sqrt(std::pow(10.0, isnr_db / 10.0) * (p_comm + p_noise) / p_jam);
    parts.jam = jam;
    for (auto& v : parts.jam.samples) v *= alpha;
    return parts;
}

ComplexSignal mix_at_isnr(const ComplexSignal& jam, const ComplexSignal& comm, double isnr_db, double snr_db, Rng& rng) {
    auto parts = mix_parts(jam, comm, isnr_db, snr_db, rng);
    ComplexSignal out = std::move(parts.jam);
    for (std::size_t n = 0; n < out.size(); ++n) out.samples[n] += parts.comm.samples[n] + parts.noise.samples[n];
    return out;
}

Example synth_example(JammingType type, double isnr_db, const ScenarioConfig& cfg, std::uint64_t seed) {
    Example ex;
    Rng param_rng = make_rng(seed, {1});
    ex.params = sample_params(type, param_rng, cfg.ranges);
    ex.params.isnr_db = isnr_db;

    Rng jam_ch = make_rng(seed, {2});
    const auto jam = apply_rician(synth_jamming(ex.params, cfg.n_samples, cfg.fs_hz), cfg.channel.rician_k_db, jam_ch);

    // Run the comm path long enough to flush the multipath transient.
    const auto offsets = tap_offsets(cfg.channel.rayleigh_delays_s, cfg.fs_hz);
    const std::size_t lead = offsets.empty() ? 0 : *std::max_element(offsets.begin(), offsets.end());
    OfdmConfig ofdm = cfg.ofdm;
    ofdm.payload_seed = mix_seed(seed, 3);
    Rng comm_ch = make_rng(seed, {4});
    auto comm = apply_rayleigh_multipath(synth_ofdm(ofdm, cfg.n_samples + lead, cfg.fs_hz), cfg.channel, comm_ch);
    comm.samples.erase(comm.samples.begin(), comm.samples.begin() + static_cast<std::ptrdiff_t>(lead));

    Rng mix_rng = make_rng(seed, {5});
    ex.received = mix_at_isnr(jam, comm, isnr_db, cfg.snr_db, mix_rng);
    return ex;
}

} // namespace jamident::siggen
