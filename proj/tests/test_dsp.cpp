#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "nbwatch/dsp.hpp"
#include "nbwatch/random.hpp"

using namespace nbwatch;

namespace {

std::vector<Complex> direct_dft(const std::vector<Complex>& x) {
    const std::size_t n = x.size();
    std::vector<Complex> X(n);
    for (std::size_t k = 0; k < n; ++k)
        for (std::size_t t = 0; t < n; ++t)
            X[k] += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t % n) / double(n));
    return X;
}

std::vector<Complex> noise(std::size_t n, std::uint64_t seed) {
    Rng r(seed);
    std::vector<Complex> x(n);
    for (auto& v : x) v = {r.normal(), r.normal()};
    return x;
}

} // namespace

TEST(Fft, MatchesDirectDft) {
    for (std::size_t n : {1u, 2u, 8u, 64u, 256u}) {
        const auto x = noise(n, n);
        const auto X = dsp::fft(x);
        const auto ref = direct_dft(x);
        for (std::size_t k = 0; k < n; ++k) EXPECT_LT(std::abs(X[k] - ref[k]), 1e-9) << n << " " << k;
    }
}

TEST(Fft, InverseRoundTrip) {
    const auto x = noise(1024, 5);
    const auto y = dsp::ifft(dsp::fft(x));
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(std::abs(x[i] - y[i]), 1e-12);
}

TEST(Fft, RejectsNonPowerOfTwo) {
    std::vector<Complex> x(12);
    EXPECT_THROW(dsp::fft_inplace(x), ConfigError);
}

TEST(Dsp, BinFrequency) {
    EXPECT_EQ(dsp::bin_frequency(0, 8, 8.0), 0.0);
    EXPECT_EQ(dsp::bin_frequency(1, 8, 8.0), 1.0);
    EXPECT_EQ(dsp::bin_frequency(4, 8, 8.0), 4.0);
    EXPECT_EQ(dsp::bin_frequency(5, 8, 8.0), -3.0);
    EXPECT_EQ(dsp::bin_frequency(7, 8, 8.0), -1.0);
}

TEST(Dsp, LowpassUnitEnergySymmetric) {
    const auto h = dsp::design_lowpass(78e3, 10e6, 257);
    ASSERT_EQ(h.size(), 257u);
    EXPECT_NEAR(std::inner_product(h.begin(), h.end(), h.begin(), 0.0), 1.0, 1e-12);
    for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(h[i], h[h.size() - 1 - i], 1e-15);
    EXPECT_THROW(dsp::design_lowpass(78e3, 10e6, 256), ConfigError);
}

TEST(Dsp, LowpassFrequencyResponse) {
    const double fs = 10e6;
    const auto h = dsp::design_lowpass(500e3, fs, 257);
    auto response = [&](double f) {
        Complex acc{};
        for (std::size_t i = 0; i < h.size(); ++i) acc += h[i] * std::polar(1.0, -2.0 * std::numbers::pi * f * double(i) / fs);
        return std::abs(acc);
    };
    const double dc = response(0.0);
    EXPECT_NEAR(response(500e3) / dc, 0.5, 0.02); // -6 dB at the cutoff for a windowed sinc
    EXPECT_LT(response(1.5e6) / dc, 1e-2);
}

TEST(Dsp, FirValidMatchesOracle) {
    const auto x = noise(20, 1);
    const std::vector<double> h{0.5, -1.0, 2.0};
    const auto y = dsp::fir_valid(x, h);
    ASSERT_EQ(y.size(), 18u);
    for (std::size_t n = 0; n < y.size(); ++n) {
        const Complex ref = h[0] * x[n + 2] + h[1] * x[n + 1] + h[2] * x[n];
        EXPECT_LT(std::abs(y[n] - ref), 1e-12);
    }
}

TEST(Dsp, FrequencyShiftMovesTone) {
    const double fs = 1024.0;
    std::vector<Complex> x(1024, Complex{1.0, 0.0});
    dsp::frequency_shift(x, 64.0, fs);
    const auto X = dsp::fft(x);
    for (std::size_t k = 0; k < X.size(); ++k) EXPECT_NEAR(std::abs(X[k]), k == 64 ? 1024.0 : 0.0, 1e-6);
    EXPECT_NEAR(dsp::mean_power(x), 1.0, 1e-12);
}

TEST(Dsp, WelchSumsToMeanPower) {
    const auto x = noise(4096, 9);
    const auto p = dsp::welch_psd(x, 256);
    ASSERT_EQ(p.size(), 256u);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    EXPECT_NEAR(total, dsp::mean_power(x), 0.05 * dsp::mean_power(x));
}

TEST(Dsp, WelchLocatesTone) {
    std::vector<Complex> x(2048, Complex{0.0, 0.0});
    for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::polar(2.0, 2.0 * std::numbers::pi * 32.0 * double(n) / 128.0);
    const auto p = dsp::welch_psd(x, 128);
    const auto peak = std::max_element(p.begin(), p.end()) - p.begin();
    EXPECT_EQ(peak, 32);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 4.0, 1e-9);
}

TEST(Dsp, DbConversions) {
    EXPECT_NEAR(dsp::to_db(0.01), -20.0, 1e-12);
    EXPECT_NEAR(dsp::from_db(-20.0), 0.01, 1e-15);
}
