#pragma once

// Complex-baseband scene synthesis: OFDM legitimate bursts, narrowband
// interferers and an AWGN floor placed on an N-portion spectrum grid.
//
// Power reference: an OFDM burst at power_db = 0 and an interferer at
// gain = 1 both have unit mean power. The noise floor is expressed in dB
// against that same reference.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nbwatch/dsp.hpp"
#include "nbwatch/error.hpp"
#include "nbwatch/random.hpp"

namespace nbwatch {

struct SpectrumConfig {
    double channel_bandwidth_hz = 10e6;
    double sample_rate_hz = 10e6;
    std::size_t n_portions = 4;
    /// -infinity disables the noise floor entirely.
    double noise_floor_db = -20.0;

    double portion_width_hz() const { return channel_bandwidth_hz / static_cast<double>(n_portions); }

    void validate() const {
        detail::require(channel_bandwidth_hz > 0.0, "channel_bandwidth_hz must be positive");
        detail::require(sample_rate_hz > 0.0, "sample_rate_hz must be positive");
        detail::require(sample_rate_hz >= channel_bandwidth_hz, "sample_rate_hz must be >= channel_bandwidth_hz");
        detail::require(n_portions >= 1, "n_portions must be positive");
        detail::require(!std::isnan(noise_floor_db) && noise_floor_db != std::numeric_limits<double>::infinity(),
                        "noise_floor_db must be finite or -inf");
    }

    bool operator==(const SpectrumConfig&) const = default;
};

enum class Modulation { BPSK, QPSK };

struct OfdmParams {
    std::size_t n_subcarriers = 64;
    std::size_t cp_len = 16;
    /// Indexed in natural FFT order (index 0 is DC). Empty means all active except DC.
    std::vector<bool> active_subcarrier_mask;
    Modulation modulation = Modulation::QPSK;

    std::size_t symbol_len() const { return n_subcarriers + cp_len; }

    std::vector<bool> active_mask() const {
        if (!active_subcarrier_mask.empty()) return active_subcarrier_mask;
        std::vector<bool> m(n_subcarriers, true);
        if (!m.empty()) m[0] = false;
        return m;
    }

    void validate() const {
        detail::require(n_subcarriers >= 1, "n_subcarriers must be positive");
        detail::require(cp_len < n_subcarriers, "cp_len must be smaller than n_subcarriers");
        detail::require(active_subcarrier_mask.empty() || active_subcarrier_mask.size() == n_subcarriers,
                        "active_subcarrier_mask must have one entry per subcarrier");
        const auto m = active_mask();
        detail::require(std::find(m.begin(), m.end(), true) != m.end(), "no active subcarriers in mask");
    }

    bool operator==(const OfdmParams&) const = default;
};

enum class Waveform { GaussianNoise, OfdmPulse };

inline const char* to_string(Waveform w) {
    return w == Waveform::GaussianNoise ? "gaussian" : "ofdm-pulse";
}

inline Waveform parse_waveform(const std::string& s) {
    if (s == "gaussian" || s == "GaussianNoise" || s == "gaussian-noise") return Waveform::GaussianNoise;
    if (s == "ofdm-pulse" || s == "OfdmPulse" || s == "ofdm_pulse" || s == "pulse") return Waveform::OfdmPulse;
    throw ConfigError("unknown waveform '" + s + "' (expected gaussian or ofdm-pulse)");
}

struct InterfererSpec {
    std::size_t portion_index = 0;
    Waveform waveform = Waveform::GaussianNoise;
    double bandwidth_hz = 156e3;
    /// Amplitude multiplier; mean power scales as gain^2.
    double gain = 1.0;
    std::size_t start_sample = 0;
    std::size_t duration_samples = 1;

    void validate(const SpectrumConfig& spectrum) const {
        detail::require(portion_index < spectrum.n_portions,
                        "interferer portion_index " + std::to_string(portion_index) + " out of range [0, " +
                            std::to_string(spectrum.n_portions) + ")");
        detail::require(bandwidth_hz > 0.0, "interferer bandwidth_hz must be positive");
        detail::require(bandwidth_hz <= spectrum.portion_width_hz() * (1.0 + 1e-12),
                        "interferer bandwidth_hz exceeds the portion width");
        detail::require(gain >= 0.0 && gain <= 1.0, "interferer gain must lie in [0, 1]");
        detail::require(duration_samples >= 1, "interferer duration_samples must be positive");
    }

    bool operator==(const InterfererSpec&) const = default;
};

struct Burst {
    std::size_t start = 0;
    std::size_t duration = 0;
    bool operator==(const Burst&) const = default;
};

struct LegitSpec {
    OfdmParams ofdm;
    std::vector<Burst> bursts;
    /// Received level relative to the unit power reference.
    double power_db = 0.0;
    bool operator==(const LegitSpec&) const = default;
};

struct SceneSpec {
    SpectrumConfig spectrum;
    std::optional<LegitSpec> legit;
    std::vector<InterfererSpec> interferers;
    std::uint64_t seed = 0;
    bool operator==(const SceneSpec&) const = default;
};

struct ComplexBuffer {
    std::vector<Complex> samples;
    double sample_rate_hz = 10e6;

    std::size_t size() const { return samples.size(); }
    std::span<const Complex> view() const { return samples; }
};

/// Shaping filter length for narrowband interferers.
inline constexpr std::size_t kInterfererTaps = 257;

inline double portion_center_freq(std::size_t k, const SpectrumConfig& spectrum) {
    detail::require(spectrum.n_portions >= 1, "n_portions must be positive");
    if (k >= spectrum.n_portions)
        throw ConfigError("portion index " + std::to_string(k) + " out of range [0, " +
                          std::to_string(spectrum.n_portions) + ")");
    const double bw = spectrum.channel_bandwidth_hz;
    return -bw / 2.0 + (static_cast<double>(k) + 0.5) * bw / static_cast<double>(spectrum.n_portions);
}

namespace detail {

/// Inverse DFT without scaling, used when the subcarrier count is not a power of two.
inline std::vector<Complex> idft_direct(std::span<const Complex> x) {
    const std::size_t n = x.size();
    std::vector<Complex> out(n);
    for (std::size_t t = 0; t < n; ++t) {
        Complex acc{0.0, 0.0};
        for (std::size_t k = 0; k < n; ++k) {
            const double ph = 2.0 * std::numbers::pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
            acc += x[k] * Complex(std::cos(ph), std::sin(ph));
        }
        out[t] = acc;
    }
    return out;
}

inline Complex draw_symbol(Rng& rng, Modulation mod) {
    if (mod == Modulation::BPSK) return {rng.coin() ? 1.0 : -1.0, 0.0};
    constexpr double a = 0.70710678118654752440;
    return {rng.coin() ? a : -a, rng.coin() ? a : -a};
}

inline Complex complex_normal(Rng& rng, double sigma) {
    // Each component carries half the power.
    const double s = sigma * 0.70710678118654752440;
    const double re = rng.normal();
    const double im = rng.normal();
    return {re * s, im * s};
}

} // namespace detail

/// Back-to-back OFDM symbols with cyclic prefix, normalized to unit mean power.
inline ComplexBuffer synth_ofdm_burst(const OfdmParams& params, std::size_t n_symbols, std::uint64_t rng_seed,
                                      double sample_rate_hz = 10e6) {
    params.validate();
    detail::require(n_symbols >= 1, "n_symbols must be >= 1");

    const std::size_t n = params.n_subcarriers;
    const auto mask = params.active_mask();
    const auto n_active = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
    // Unscaled inverse transform of unit-magnitude symbols has mean power n_active.
    const double scale = 1.0 / std::sqrt(static_cast<double>(n_active));

    Rng rng(rng_seed);
    ComplexBuffer out;
    out.sample_rate_hz = sample_rate_hz;
    out.samples.reserve(n_symbols * params.symbol_len());
    std::vector<Complex> freq(n);
    for (std::size_t s = 0; s < n_symbols; ++s) {
        for (std::size_t k = 0; k < n; ++k)
            freq[k] = mask[k] ? detail::draw_symbol(rng, params.modulation) : Complex{0.0, 0.0};
        std::vector<Complex> time;
        if (dsp::is_power_of_two(n)) {
            time = freq;
            dsp::fft_inplace(time, true);
        } else {
            time = detail::idft_direct(freq);
        }
        for (auto& v : time) v *= scale;
        out.samples.insert(out.samples.end(), time.end() - static_cast<std::ptrdiff_t>(params.cp_len), time.end());
        out.samples.insert(out.samples.end(), time.begin(), time.end());
    }
    return out;
}

namespace detail {

inline void check_interferer(const InterfererSpec& spec, const SpectrumConfig& spectrum) {
    spectrum.validate();
    spec.validate(spectrum);
}

inline ComplexBuffer zero_buffer(std::size_t n, double fs) {
    ComplexBuffer b;
    b.sample_rate_hz = fs;
    b.samples.assign(n, Complex{0.0, 0.0});
    return b;
}

/// Expected output power of `h` driven by a unit-power sequence held constant
/// for `hold` samples with uniformly random symbol timing.
inline double held_sequence_gain(std::span<const double> h, std::size_t hold) {
    double acc = 0.0;
    const auto taps = static_cast<std::ptrdiff_t>(h.size());
    const auto L = static_cast<std::ptrdiff_t>(hold);
    for (std::ptrdiff_t i = 0; i < taps; ++i)
        for (std::ptrdiff_t j = 0; j < taps; ++j) {
            const auto lag = i > j ? i - j : j - i;
            if (lag < L) acc += h[i] * h[j] * (1.0 - static_cast<double>(lag) / static_cast<double>(L));
        }
    return acc;
}

} // namespace detail

/// Low-pass filtered complex Gaussian noise centred on the interferer's portion.
inline ComplexBuffer synth_narrowband_interferer(const InterfererSpec& spec, const SpectrumConfig& spectrum,
                                                 std::uint64_t rng_seed) {
    detail::check_interferer(spec, spectrum);
    const double fs = spectrum.sample_rate_hz;
    if (spec.gain == 0.0) return detail::zero_buffer(spec.duration_samples, fs);

    const auto h = dsp::design_lowpass(spec.bandwidth_hz / 2.0, fs, kInterfererTaps);
    Rng rng(rng_seed);
    std::vector<Complex> white(spec.duration_samples + h.size() - 1);
    for (auto& v : white) v = detail::complex_normal(rng, 1.0);

    ComplexBuffer out;
    out.sample_rate_hz = fs;
    out.samples = dsp::fir_valid(white, h);
    for (auto& v : out.samples) v *= spec.gain;
    dsp::frequency_shift(out.samples, portion_center_freq(spec.portion_index, spectrum), fs);
    return out;
}

/// Train of single-subcarrier OFDM symbols (random QPSK, one symbol per
/// 1/bandwidth seconds plus a quarter-length cyclic prefix), band-limited by
/// the same shaping filter as the noise interferer.
inline ComplexBuffer synth_ofdm_pulse_interferer(const InterfererSpec& spec, const SpectrumConfig& spectrum,
                                                 std::uint64_t rng_seed) {
    detail::check_interferer(spec, spectrum);
    detail::require(spec.waveform == Waveform::OfdmPulse, "synth_ofdm_pulse_interferer needs an OfdmPulse spec");
    const double fs = spectrum.sample_rate_hz;
    if (spec.gain == 0.0) return detail::zero_buffer(spec.duration_samples, fs);

    const auto useful = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fs / spec.bandwidth_hz)));
    const std::size_t hold = useful + useful / 4;
    const auto h = dsp::design_lowpass(spec.bandwidth_hz / 2.0, fs, kInterfererTaps);
    const double norm = 1.0 / std::sqrt(detail::held_sequence_gain(h, hold));

    Rng rng(rng_seed);
    const std::size_t offset = static_cast<std::size_t>(rng.below(hold));
    std::vector<Complex> held(spec.duration_samples + h.size() - 1);
    Complex sym = detail::draw_symbol(rng, Modulation::QPSK);
    for (std::size_t i = 0; i < held.size(); ++i) {
        if ((i + offset) % hold == 0) sym = detail::draw_symbol(rng, Modulation::QPSK);
        held[i] = sym;
    }

    ComplexBuffer out;
    out.sample_rate_hz = fs;
    out.samples = dsp::fir_valid(held, h);
    for (auto& v : out.samples) v *= spec.gain * norm;
    dsp::frequency_shift(out.samples, portion_center_freq(spec.portion_index, spectrum), fs);
    return out;
}

/// Dispatches on the interferer's waveform.
inline ComplexBuffer synth_interferer(const InterfererSpec& spec, const SpectrumConfig& spectrum,
                                      std::uint64_t rng_seed) {
    return spec.waveform == Waveform::OfdmPulse ? synth_ofdm_pulse_interferer(spec, spectrum, rng_seed)
                                                : synth_narrowband_interferer(spec, spectrum, rng_seed);
}

// Per-component renderers. compose_scene is their sample-wise sum, in the
// order legit, interferers (list order), noise.

inline void validate_scene(const SceneSpec& scene, std::size_t total_samples) {
    scene.spectrum.validate();
    detail::require(total_samples >= 1, "total_samples must be positive");
    for (const auto& itf : scene.interferers) {
        itf.validate(scene.spectrum);
        detail::require(itf.start_sample + itf.duration_samples <= total_samples,
                        "interferer window exceeds total_samples");
    }
    if (scene.legit) {
        scene.legit->ofdm.validate();
        for (const auto& b : scene.legit->bursts)
            detail::require(b.start + b.duration <= total_samples, "legit burst exceeds total_samples");
    }
}

inline std::vector<Complex> render_legit(const SceneSpec& scene, std::size_t total_samples) {
    std::vector<Complex> out(total_samples, Complex{0.0, 0.0});
    if (!scene.legit) return out;
    const auto& legit = *scene.legit;
    const double amp = std::sqrt(dsp::from_db(legit.power_db));
    const std::size_t symlen = legit.ofdm.symbol_len();
    for (std::size_t j = 0; j < legit.bursts.size(); ++j) {
        const auto& b = legit.bursts[j];
        if (b.duration == 0) continue;
        const std::size_t n_sym = (b.duration + symlen - 1) / symlen;
        const auto burst =
            synth_ofdm_burst(legit.ofdm, n_sym, derive_seed(scene.seed, {1, j}), scene.spectrum.sample_rate_hz);
        for (std::size_t i = 0; i < b.duration; ++i) out[b.start + i] += amp * burst.samples[i];
    }
    return out;
}

inline std::vector<Complex> render_interferer(const SceneSpec& scene, std::size_t index, std::size_t total_samples) {
    std::vector<Complex> out(total_samples, Complex{0.0, 0.0});
    const auto& spec = scene.interferers.at(index);
    const auto buf = synth_interferer(spec, scene.spectrum, derive_seed(scene.seed, {2, index}));
    for (std::size_t i = 0; i < spec.duration_samples; ++i) out[spec.start_sample + i] = buf.samples[i];
    return out;
}

inline std::vector<Complex> render_noise(const SceneSpec& scene, std::size_t total_samples) {
    std::vector<Complex> out(total_samples, Complex{0.0, 0.0});
    if (std::isinf(scene.spectrum.noise_floor_db)) return out;
    const double sigma = std::sqrt(dsp::from_db(scene.spectrum.noise_floor_db));
    Rng rng(derive_seed(scene.seed, {3}));
    for (auto& v : out) v = detail::complex_normal(rng, sigma);
    return out;
}

inline ComplexBuffer compose_scene(const SceneSpec& scene, std::size_t total_samples) {
    validate_scene(scene, total_samples);
    ComplexBuffer out;
    out.sample_rate_hz = scene.spectrum.sample_rate_hz;
    out.samples = render_legit(scene, total_samples);
    for (std::size_t i = 0; i < scene.interferers.size(); ++i) {
        const auto part = render_interferer(scene, i, total_samples);
        for (std::size_t n = 0; n < total_samples; ++n) out.samples[n] += part[n];
    }
    const auto noise = render_noise(scene, total_samples);
    for (std::size_t n = 0; n < total_samples; ++n) out.samples[n] += noise[n];
    return out;
}

} // namespace nbwatch
