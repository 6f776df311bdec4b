#pragma once

// Single-sample layer primitives. The batched engine in engine.hpp computes
// the same quantities with the same summation order; these are the building
// blocks exposed for direct use and testing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "nbwatch/error.hpp"
#include "nbwatch/random.hpp"

namespace nbwatch::nn {

/// Row-major [length][channels] feature map.
struct FeatureMap {
    std::size_t length = 0;
    std::size_t channels = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(std::size_t len, std::size_t ch, double fill = 0.0) : length(len), channels(ch), data(len * ch, fill) {}

    double& at(std::size_t t, std::size_t c) { return data[t * channels + c]; }
    double at(std::size_t t, std::size_t c) const { return data[t * channels + c]; }
};

/// Valid (unpadded), stride-1 convolution followed by ReLU.
/// weights: [filters][kernel][in_channels], bias: [filters].
inline FeatureMap conv1d_forward(const FeatureMap& input, std::span<const double> weights,
                                 std::span<const double> bias, std::size_t filters, std::size_t kernel) {
    const std::size_t ch = input.channels;
    if (kernel == 0 || kernel > input.length) throw ShapeError("conv1d kernel does not fit the input");
    if (weights.size() != filters * kernel * ch) throw ShapeError("conv1d weight shape mismatch");
    if (bias.size() != filters) throw ShapeError("conv1d bias shape mismatch");

    FeatureMap out(input.length - kernel + 1, filters);
    for (std::size_t t = 0; t < out.length; ++t) {
        for (std::size_t f = 0; f < filters; ++f) {
            double acc = bias[f];
            const double* w = weights.data() + f * kernel * ch;
            const double* x = input.data.data() + t * ch;
            for (std::size_t j = 0; j < kernel * ch; ++j) acc += w[j] * x[j];
            out.at(t, f) = acc > 0.0 ? acc : 0.0;
        }
    }
    return out;
}

struct PoolResult {
    FeatureMap out;
    /// For each output cell, 0 if the first element of the pair won, 1 otherwise.
    std::vector<std::uint8_t> argmax;
};

/// Max pooling, window 2, stride 2. Ties go to the first element.
inline PoolResult maxpool1d(const FeatureMap& input) {
    if (input.length < 2) throw ShapeError("maxpool1d needs at least two steps");
    PoolResult r;
    r.out = FeatureMap(input.length / 2, input.channels);
    r.argmax.assign(r.out.data.size(), 0);
    for (std::size_t p = 0; p < r.out.length; ++p)
        for (std::size_t c = 0; c < input.channels; ++c) {
            const double a = input.at(2 * p, c);
            const double b = input.at(2 * p + 1, c);
            const bool second = b > a;
            r.out.at(p, c) = second ? b : a;
            r.argmax[p * input.channels + c] = second ? 1 : 0;
        }
    return r;
}

/// Routes each pooled gradient to the position that won the forward max.
inline FeatureMap maxpool1d_backward(const PoolResult& pooled, const FeatureMap& grad_out, std::size_t input_length) {
    if (grad_out.length != pooled.out.length || grad_out.channels != pooled.out.channels)
        throw ShapeError("maxpool1d_backward gradient shape mismatch");
    FeatureMap g(input_length, grad_out.channels);
    for (std::size_t p = 0; p < grad_out.length; ++p)
        for (std::size_t c = 0; c < grad_out.channels; ++c)
            g.at(2 * p + pooled.argmax[p * grad_out.channels + c], c) = grad_out.at(p, c);
    return g;
}

/// y = b + x W with W stored input-major [in][out]; ReLU optional.
inline std::vector<double> dense_forward(std::span<const double> x, std::span<const double> weights,
                                         std::span<const double> bias, bool relu) {
    const std::size_t in = x.size();
    const std::size_t out_n = bias.size();
    if (weights.size() != in * out_n) throw ShapeError("dense weight shape mismatch");
    std::vector<double> y(bias.begin(), bias.end());
    for (std::size_t d = 0; d < in; ++d) {
        const double xv = x[d];
        if (xv == 0.0) continue;
        const double* w = weights.data() + d * out_n;
        for (std::size_t j = 0; j < out_n; ++j) y[j] += xv * w[j];
    }
    if (relu)
        for (auto& v : y) v = v > 0.0 ? v : 0.0;
    return y;
}

/// Inverted dropout: zeroes each unit with probability `rate` and scales the
/// survivors by 1 / (1 - rate). Returns the per-unit multiplier applied.
inline std::vector<double> dropout_apply(std::span<double> x, double rate, Rng& rng) {
    detail::require(rate >= 0.0 && rate < 1.0, "dropout rate must lie in [0, 1)");
    std::vector<double> mask(x.size(), 1.0);
    if (rate == 0.0) return mask;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (std::size_t i = 0; i < x.size(); ++i) {
        mask[i] = rng.uniform() < rate ? 0.0 : keep_scale;
        x[i] *= mask[i];
    }
    return mask;
}

/// Numerically stable softmax (max subtraction). Throws on non-finite logits.
inline std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw ShapeError("softmax of an empty vector");
    double mx = -std::numeric_limits<double>::infinity();
    for (double z : logits) {
        if (!std::isfinite(z)) throw std::domain_error("softmax received a non-finite logit");
        mx = std::max(mx, z);
    }
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (auto& v : p) v /= sum;
    return p;
}

inline constexpr double kLogEpsilon = 1e-12;

/// Categorical cross-entropy for a one-hot target: -log(max(p[target], 1e-12)).
inline double cce_loss(std::span<const double> probs, std::size_t target) {
    if (target >= probs.size()) throw ShapeError("cce target index out of range");
    return -std::log(std::max(probs[target], kLogEpsilon));
}

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

} // namespace nbwatch::nn
