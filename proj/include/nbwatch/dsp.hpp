#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "nbwatch/error.hpp"

namespace nbwatch {

using Complex = std::complex<double>;

namespace dsp {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 FFT. Forward uses exp(-j...), no scaling either way.
inline void fft_inplace(std::span<Complex> x, bool inverse = false) {
    const std::size_t n = x.size();
    if (!is_power_of_two(n)) throw ConfigError("fft size must be a power of two");

    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }

    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
        const std::size_t half = len / 2;
        // Twiddles computed directly per index; repeated multiplication drifts.
        std::vector<Complex> tw(half);
        for (std::size_t k = 0; k < half; ++k)
            tw[k] = Complex(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < half; ++k) {
                const Complex u = x[i + k];
                const Complex v = x[i + k + half] * tw[k];
                x[i + k] = u + v;
                x[i + k + half] = u - v;
            }
        }
    }
}

inline std::vector<Complex> fft(std::span<const Complex> x) {
    std::vector<Complex> out(x.begin(), x.end());
    fft_inplace(out);
    return out;
}

/// Inverse FFT normalized by 1/n.
inline std::vector<Complex> ifft(std::span<const Complex> x) {
    std::vector<Complex> out(x.begin(), x.end());
    fft_inplace(out, true);
    const double s = 1.0 / static_cast<double>(out.size());
    for (auto& v : out) v *= s;
    return out;
}

/// Baseband frequency (Hz) of FFT bin k for an n-point transform, in (-fs/2, fs/2].
inline double bin_frequency(std::size_t k, std::size_t n, double sample_rate_hz) {
    const auto ki = static_cast<long long>(k);
    const auto ni = static_cast<long long>(n);
    const long long signed_k = ki <= ni / 2 ? ki : ki - ni;
    return static_cast<double>(signed_k) * sample_rate_hz / static_cast<double>(n);
}

inline std::vector<double> hamming(std::size_t n) {
    std::vector<double> w(n, 1.0);
    if (n < 2) return w;
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    return w;
}

/// Periodic Hann window (the usual choice for spectral estimation).
inline std::vector<double> hann(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    return w;
}

/// Windowed-sinc low-pass FIR (Hamming), scaled to unit noise gain (sum h^2 = 1)
/// so white unit-power input yields unit-power output.
inline std::vector<double> design_lowpass(double cutoff_hz, double sample_rate_hz, std::size_t taps) {
    detail::require(taps % 2 == 1, "lowpass tap count must be odd");
    detail::require(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0, "lowpass cutoff must lie in (0, fs/2)");
    const double fc = cutoff_hz / sample_rate_hz;
    const auto w = hamming(taps);
    const double mid = static_cast<double>(taps - 1) / 2.0;
    std::vector<double> h(taps);
    double energy = 0.0;
    for (std::size_t i = 0; i < taps; ++i) {
        const double t = static_cast<double>(i) - mid;
        const double s = t == 0.0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * t) / (std::numbers::pi * t);
        h[i] = s * w[i];
        energy += h[i] * h[i];
    }
    const double norm = 1.0 / std::sqrt(energy);
    for (auto& v : h) v *= norm;
    return h;
}

/// 'Valid' convolution: output[n] = sum_k h[k] x[n + taps - 1 - k], length x.size() - taps + 1.
inline std::vector<Complex> fir_valid(std::span<const Complex> x, std::span<const double> h) {
    if (x.size() < h.size()) throw ShapeError("fir input shorter than filter");
    const std::size_t taps = h.size();
    std::vector<Complex> y(x.size() - taps + 1);
    for (std::size_t n = 0; n < y.size(); ++n) {
        double re = 0.0, im = 0.0;
        const Complex* xp = x.data() + n + taps - 1;
        for (std::size_t k = 0; k < taps; ++k) {
            re += h[k] * xp[-static_cast<std::ptrdiff_t>(k)].real();
            im += h[k] * xp[-static_cast<std::ptrdiff_t>(k)].imag();
        }
        y[n] = Complex(re, im);
    }
    return y;
}

/// Multiplies by exp(j 2 pi f n / fs) in place.
inline void frequency_shift(std::span<Complex> x, double freq_hz, double sample_rate_hz) {
    const double w = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
    for (std::size_t n = 0; n < x.size(); ++n) {
        const double ph = w * static_cast<double>(n);
        x[n] *= Complex(std::cos(ph), std::sin(ph));
    }
}

inline double mean_power(std::span<const Complex> x) {
    if (x.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& v : x) acc += std::norm(v);
    return acc / static_cast<double>(x.size());
}

inline double to_db(double p) { return 10.0 * std::log10(p); }
inline double from_db(double db) { return std::pow(10.0, db / 10.0); }

/// Welch averaged periodogram with a Hann window and 50% overlap.
/// Returns per-bin power in natural FFT order, scaled so the bins sum to the
/// mean signal power.
inline std::vector<double> welch_psd(std::span<const Complex> x, std::size_t fft_size) {
    if (!is_power_of_two(fft_size)) throw ConfigError("welch fft_size must be a power of two");
    if (x.size() < fft_size) throw ShapeError("welch input shorter than fft_size");
    const auto w = hann(fft_size);
    double wenergy = 0.0;
    for (double v : w) wenergy += v * v;

    const std::size_t hop = fft_size / 2 == 0 ? 1 : fft_size / 2;
    std::vector<double> psd(fft_size, 0.0);
    std::vector<Complex> seg(fft_size);
    std::size_t segments = 0;
    for (std::size_t start = 0; start + fft_size <= x.size(); start += hop) {
        for (std::size_t i = 0; i < fft_size; ++i) seg[i] = x[start + i] * w[i];
        fft_inplace(seg);
        for (std::size_t i = 0; i < fft_size; ++i) psd[i] += std::norm(seg[i]);
        ++segments;
    }
    const double scale = 1.0 / (static_cast<double>(segments) * wenergy * static_cast<double>(fft_size));
    for (auto& v : psd) v *= scale;
    return psd;
}

} // namespace dsp
} // namespace nbwatch
