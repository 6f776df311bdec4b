#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nbwatch/error.hpp"
#include "nbwatch/random.hpp"

namespace nbwatch::nn {

/// Conv1D(ReLU) -> MaxPool1D(2, stride 2) -> Flatten -> Dense(ReLU) ->
/// Dropout -> Dense -> Softmax over M classes. Input is (I, 2) IQ.
struct ModelConfig {
    std::size_t input_size = 128;
    std::size_t num_classes = 6;
    std::size_t conv_filters = 16;
    std::size_t conv_kernel = 3;
    std::size_t dense_units = 1000;
    double dropout_rate = 0.5;

    static constexpr std::size_t kInputChannels = 2;

    std::size_t conv_len() const { return input_size - conv_kernel + 1; }
    std::size_t pool_len() const { return conv_len() / 2; }
    std::size_t flat_size() const { return pool_len() * conv_filters; }

    void validate() const {
        detail::require(input_size >= 1, "input_size must be positive");
        detail::require(num_classes >= 2, "num_classes must be at least 2");
        detail::require(conv_filters >= 1, "conv_filters must be positive");
        detail::require(conv_kernel >= 1, "conv_kernel must be positive");
        detail::require(conv_kernel <= input_size, "conv_kernel larger than input_size");
        detail::require(conv_len() >= 2, "convolution output too short to pool");
        detail::require(dense_units >= 1, "dense_units must be positive");
        detail::require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout_rate must lie in [0, 1)");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kTensorCount = 6;
inline constexpr std::array<const char*, kTensorCount> kTensorNames{"conv_w",   "conv_b",   "dense1_w",
                                                                    "dense1_b", "dense2_w", "dense2_b"};

/// Tensor shapes, in storage order:
///   conv_w   [filters][kernel][2]
///   conv_b   [filters]
///   dense1_w [flat][dense_units]   (input-major)
///   dense1_b [dense_units]
///   dense2_w [dense_units][classes] (input-major)
///   dense2_b [classes]
inline std::array<std::vector<std::size_t>, kTensorCount> tensor_shapes(const ModelConfig& c) {
    return {{{c.conv_filters, c.conv_kernel, ModelConfig::kInputChannels},
             {c.conv_filters},
             {c.flat_size(), c.dense_units},
             {c.dense_units},
             {c.dense_units, c.num_classes},
             {c.num_classes}}};
}

inline std::size_t shape_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

/// Six parameter tensors; also used for gradients and optimizer moments.
struct ParamSet {
    std::vector<double> conv_w, conv_b, dense1_w, dense1_b, dense2_w, dense2_b;

    static ParamSet zeros(const ModelConfig& c) {
        ParamSet p;
        const auto shapes = tensor_shapes(c);
        auto t = p.tensors();
        for (std::size_t i = 0; i < kTensorCount; ++i) t[i]->assign(shape_count(shapes[i]), 0.0);
        return p;
    }

    std::array<std::vector<double>*, kTensorCount> tensors() {
        return {&conv_w, &conv_b, &dense1_w, &dense1_b, &dense2_w, &dense2_b};
    }
    std::array<const std::vector<double>*, kTensorCount> tensors() const {
        return {&conv_w, &conv_b, &dense1_w, &dense1_b, &dense2_w, &dense2_b};
    }

    void fill(double v) {
        for (auto* t : tensors()) std::fill(t->begin(), t->end(), v);
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto* t : tensors()) n += t->size();
        return n;
    }

    bool all_finite() const {
        for (const auto* t : tensors())
            for (double v : *t)
                if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const ParamSet&) const = default;
};

struct Model {
    ModelConfig config;
    ParamSet params;

    /// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
    static Model init(const ModelConfig& config, std::uint64_t seed) {
        config.validate();
        Model m;
        m.config = config;
        m.params = ParamSet::zeros(config);
        Rng rng(derive_seed(seed, {0x1A17}));
        auto he = [&rng](std::vector<double>& w, std::size_t fan_in) {
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : w) v = rng.uniform(-limit, limit);
        };
        he(m.params.conv_w, config.conv_kernel * ModelConfig::kInputChannels);
        he(m.params.dense1_w, config.flat_size());
        he(m.params.dense2_w, config.dense_units);
        return m;
    }

    /// Rounds every parameter to the nearest float32, the precision used on disk.
    void round_to_f32() {
        for (auto* t : params.tensors())
            for (auto& v : *t) v = static_cast<double>(static_cast<float>(v));
    }

    bool operator==(const Model&) const = default;
};

} // namespace nbwatch::nn
