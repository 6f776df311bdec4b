#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "nbwatch/dataset.hpp"
#include "nbwatch/dsp.hpp"
#include "nbwatch/error.hpp"
#include "nbwatch/neuralnet.hpp"
#include "nbwatch/signalgen.hpp"

namespace nbwatch {

inline constexpr double kDefaultMultiThreshold = 0.15;

struct DetectionReport {
    std::vector<double> probs;
    std::size_t top_class = 0;
    std::vector<std::size_t> interfered_portions;
    std::int64_t latency_ns = 0;
};

/// Portions whose class probability reaches `threshold`, in portion order.
/// The no-emission and legit-only classes never contribute.
inline std::vector<std::size_t> detect_multi(std::span<const double> probs, double threshold = kDefaultMultiThreshold) {
    detail::require(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0, 1)");
    std::vector<std::size_t> out;
    for (std::size_t c = kFirstPortionClass; c < probs.size(); ++c)
        if (probs[c] >= threshold) out.push_back(c - kFirstPortionClass);
    return out;
}

/// Single-window inference with reusable buffers. One instance per thread;
/// the model may be shared.
class Classifier {
public:
    explicit Classifier(const nn::Model& model, double threshold = kDefaultMultiThreshold)
        : model_(&model), engine_(model.config, 1), threshold_(threshold) {}

    const nn::ModelConfig& config() const { return model_->config; }

    /// iq is interleaved I/Q of length 2 * input_size.
    DetectionReport classify(std::span<const float> iq) {
        if (iq.size() != 2 * model_->config.input_size)
            throw ShapeError("window has " + std::to_string(iq.size() / 2) + " samples, model expects " +
                             std::to_string(model_->config.input_size));
        auto in = engine_.input(0);
        const auto t0 = std::chrono::steady_clock::now();
        std::copy(iq.begin(), iq.end(), in.begin());
        engine_.forward(model_->params, 1, nullptr);
        const auto t1 = std::chrono::steady_clock::now();

        DetectionReport r;
        const auto p = engine_.probs(0);
        r.probs.assign(p.begin(), p.end());
        r.top_class = nn::argmax(r.probs);
        r.interfered_portions = detect_multi(r.probs, threshold_);
        r.latency_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
        return r;
    }

    DetectionReport classify(const IqWindow& w) { return classify(w.iq); }

private:
    const nn::Model* model_;
    nn::Engine engine_;
    double threshold_;
};

inline DetectionReport classify(const nn::Model& model, const IqWindow& window) {
    return Classifier(model).classify(window);
}

// ---------------------------------------------------------------------------
// Energy-detector baseline

struct EnergyDetectorConfig {
    /// Welch segment length; 0 means the whole window (must be a power of two).
    std::size_t fft_size = 0;
    double threshold_db = 6.0;
    /// Noise power in dB against the unit reference. Unset: use the
    /// spectrum's configured floor. Set it from calibrate_noise_floor() to
    /// use a measured value instead.
    std::optional<double> noise_floor_db;
};

struct EnergyReport {
    std::vector<bool> flags;
    /// Per-portion level, expressed as the total power a signal with that
    /// spectral density across the whole band would have (dB). White noise at
    /// the floor reads as the floor in every portion.
    std::vector<double> level_db;
    double floor_db = 0.0;

    std::vector<std::size_t> flagged_portions() const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < flags.size(); ++k)
            if (flags[k]) out.push_back(k);
        return out;
    }
};

namespace detail {

inline std::vector<double> portion_levels(std::span<const Complex> x, const SpectrumConfig& spectrum,
                                          std::size_t fft_size) {
    detail::require(dsp::is_power_of_two(fft_size), "energy detector fft_size must be a power of two");
    detail::require(x.size() >= fft_size, "buffer shorter than fft_size");
    const auto psd = dsp::welch_psd(x, fft_size);
    const std::size_t N = spectrum.n_portions;
    std::vector<double> sum(N, 0.0);
    std::vector<std::size_t> bins(N, 0);
    const double width = spectrum.portion_width_hz();
    const double lo = -spectrum.channel_bandwidth_hz / 2.0;
    for (std::size_t k = 0; k < fft_size; ++k) {
        const double f = dsp::bin_frequency(k, fft_size, spectrum.sample_rate_hz);
        const double pos = (f - lo) / width;
        if (pos < 0.0 || pos >= static_cast<double>(N)) continue;
        const auto p = static_cast<std::size_t>(pos);
        sum[p] += psd[k];
        ++bins[p];
    }
    std::vector<double> level(N);
    for (std::size_t p = 0; p < N; ++p) {
        detail::require(bins[p] > 0, "fft_size too small to resolve every portion");
        level[p] = dsp::to_db(sum[p] / static_cast<double>(bins[p]) * static_cast<double>(fft_size));
    }
    return level;
}

} // namespace detail

/// Measures the noise floor (dB) from a buffer assumed to hold noise only.
inline double calibrate_noise_floor(std::span<const Complex> noise, std::size_t fft_size) {
    const auto psd = dsp::welch_psd(noise, fft_size);
    double total = 0.0;
    for (double v : psd) total += v;
    return dsp::to_db(total);
}

inline EnergyReport energy_detect(std::span<const Complex> x, const SpectrumConfig& spectrum,
                                  const EnergyDetectorConfig& cfg = {}) {
    spectrum.validate();
    const std::size_t fft = cfg.fft_size == 0 ? x.size() : cfg.fft_size;
    detail::require(fft <= x.size(), "fft_size must not exceed the buffer length");
    EnergyReport r;
    r.level_db = detail::portion_levels(x, spectrum, fft);
    r.floor_db = cfg.noise_floor_db.value_or(spectrum.noise_floor_db);
    r.flags.resize(r.level_db.size());
    for (std::size_t k = 0; k < r.flags.size(); ++k) r.flags[k] = r.level_db[k] >= r.floor_db + cfg.threshold_db;
    return r;
}

inline EnergyReport energy_detect(const IqWindow& w, const SpectrumConfig& spectrum,
                                  const EnergyDetectorConfig& cfg = {}) {
    std::vector<Complex> x(w.iq.size() / 2);
    for (std::size_t n = 0; n < x.size(); ++n) x[n] = {w.iq[2 * n], w.iq[2 * n + 1]};
    return energy_detect(x, spectrum, cfg);
}

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
    double accuracy = 0.0;
    std::size_t count = 0;
    /// confusion[true][predicted]
    std::vector<std::vector<std::uint64_t>> confusion;

    bool operator==(const Evaluation&) const = default;
};

inline Evaluation evaluate(const nn::Model& model, std::span<const IqWindow* const> windows,
                           std::size_t batch = 256) {
    detail::require(!windows.empty(), "cannot evaluate an empty split");
    const std::size_t M = model.config.num_classes;
    Evaluation ev;
    ev.count = windows.size();
    ev.confusion.assign(M, std::vector<std::uint64_t>(M, 0));
    nn::Engine eng(model.config, std::min(batch, windows.size()));
    std::size_t correct = 0;
    for (std::size_t s = 0; s < windows.size(); s += eng.capacity()) {
        const std::size_t n = std::min(eng.capacity(), windows.size() - s);
        const auto chunk = windows.subspan(s, n);
        eng.load(chunk);
        eng.forward(model.params, n, nullptr);
        for (std::size_t b = 0; b < n; ++b) {
            const auto truth = chunk[b]->label;
            if (truth >= M) throw ShapeError("window label exceeds model class count");
            const auto pred = nn::argmax(eng.probs(b));
            ++ev.confusion[truth][pred];
            correct += pred == truth;
        }
    }
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(windows.size());
    return ev;
}

inline Evaluation evaluate(const nn::Model& model, const LabeledDataset& ds, std::span<const std::uint64_t> split) {
    return evaluate(model, select(ds, split));
}

/// Rows are true classes, columns predictions; first row and column are headers.
inline std::string confusion_csv(const Evaluation& ev) {
    std::ostringstream os;
    os << "true\\pred";
    for (std::size_t c = 0; c < ev.confusion.size(); ++c) os << ',' << class_name(c);
    os << '\n';
    for (std::size_t t = 0; t < ev.confusion.size(); ++t) {
        os << class_name(t);
        for (auto v : ev.confusion[t]) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Latency

struct LatencyStats {
    std::size_t trials = 0;
    double p50_ns = 0.0;
    double p95_ns = 0.0;
    double mean_ns = 0.0;
    double min_ns = 0.0;
    double max_ns = 0.0;
};

/// Nearest-rank percentile of an ascending sample.
inline double percentile(std::span<const double> sorted, double q) {
    detail::require(!sorted.empty(), "percentile of an empty sample");
    const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
    return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

/// Single-window forward-pass timing on the calling thread. The input is a
/// fixed pseudo-random window; warmup runs are not recorded.
inline LatencyStats bench_latency(const nn::Model& model, std::size_t n_trials, std::size_t warmup = 50,
                                  std::uint64_t seed = 1) {
    detail::require(n_trials >= 100, "bench_latency needs at least 100 trials");
    Rng rng(seed);
    IqWindow w;
    w.iq.resize(2 * model.config.input_size);
    for (auto& v : w.iq) v = static_cast<float>(rng.normal() * 0.3);
    Classifier clf(model);
    for (std::size_t i = 0; i < warmup; ++i) clf.classify(w);
    std::vector<double> t(n_trials);
    for (auto& v : t) v = static_cast<double>(clf.classify(w).latency_ns);
    std::sort(t.begin(), t.end());
    LatencyStats s;
    s.trials = n_trials;
    s.p50_ns = percentile(t, 0.50);
    s.p95_ns = percentile(t, 0.95);
    double acc = 0.0;
    for (double v : t) acc += v;
    s.mean_ns = acc / static_cast<double>(n_trials);
    s.min_ns = t.front();
    s.max_ns = t.back();
    return s;
}

} // namespace nbwatch
