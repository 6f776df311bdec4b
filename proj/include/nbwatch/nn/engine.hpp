#pragma once

// Batched forward/backward pass for the detector network.
//
// Every reduction runs in a fixed order (ascending input index, fixed tile
// boundaries), so results are bit-reproducible for a given build. For each
// output the dense forward sums bias + x[0] w[0] + x[1] w[1] + ..., which
// is the same order the single-sample layers use.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "nbwatch/dataset.hpp"
#include "nbwatch/nn/layers.hpp"
#include "nbwatch/nn/model.hpp"
#include "nbwatch/random.hpp"

namespace nbwatch::nn {

namespace kernels {

inline constexpr std::size_t kTile = 128;

inline double dot(const double* __restrict a, const double* __restrict b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    for (; j < n; ++j) s0 += a[j] * b[j];
    return (s0 + s1) + (s2 + s3);
}

inline void axpy(double a, const double* __restrict x, double* __restrict y, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

/// y[b][:] = bias + x[b][:] W, W input-major [in][out].
inline void dense_forward_batch(const double* x, std::size_t batch, std::size_t in, const double* w,
                                const double* bias, std::size_t out, double* y) {
    for (std::size_t b = 0; b < batch; ++b) std::copy(bias, bias + out, y + b * out);
    for (std::size_t h0 = 0; h0 < out; h0 += kTile) {
        const std::size_t len = std::min(kTile, out - h0);
        for (std::size_t d = 0; d < in; ++d) {
            const double* wrow = w + d * out + h0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double xv = x[b * in + d];
                if (xv != 0.0) axpy(xv, wrow, y + b * out + h0, len);
            }
        }
    }
}

/// gw[d][h] += sum_b x[b][d] dy[b][h];  gb[h] += sum_b dy[b][h].
inline void dense_weight_grad(const double* x, std::size_t batch, std::size_t in, const double* dy, std::size_t out,
                              double* gw, double* gb) {
    for (std::size_t b = 0; b < batch; ++b) axpy(1.0, dy + b * out, gb, out);
    for (std::size_t h0 = 0; h0 < out; h0 += kTile) {
        const std::size_t len = std::min(kTile, out - h0);
        for (std::size_t d = 0; d < in; ++d) {
            double* grow = gw + d * out + h0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double xv = x[b * in + d];
                if (xv != 0.0) axpy(xv, dy + b * out + h0, grow, len);
            }
        }
    }
}

/// dx[b][d] = sum_h W[d][h] dy[b][h], computed only where need[b][d] is set
/// (other entries are left at zero).
inline void dense_input_grad(const double* w, std::size_t in, const double* dy, std::size_t batch, std::size_t out,
                             const double* need, double* dx) {
    std::fill(dx, dx + batch * in, 0.0);
    for (std::size_t h0 = 0; h0 < out; h0 += kTile) {
        const std::size_t len = std::min(kTile, out - h0);
        for (std::size_t d = 0; d < in; ++d) {
            const double* wrow = w + d * out + h0;
            for (std::size_t b = 0; b < batch; ++b)
                if (need[b * in + d] != 0.0) dx[b * in + d] += dot(wrow, dy + b * out + h0, len);
        }
    }
}

} // namespace kernels

/// Reusable activation buffers for batches of up to `capacity` windows.
class Engine {
public:
    Engine(const ModelConfig& config, std::size_t capacity) : cfg_(config), cap_(capacity) {
        config.validate();
        detail::require(capacity >= 1, "engine capacity must be positive");
        const auto I = cfg_.input_size, L = cfg_.conv_len(), D = cfg_.flat_size();
        const auto F = cfg_.conv_filters, H = cfg_.dense_units, M = cfg_.num_classes;
        input_.assign(cap_ * I * 2, 0.0);
        conv_.assign(cap_ * L * F, 0.0);
        pooled_.assign(cap_ * D, 0.0);
        argmax_.assign(cap_ * D, 0);
        hidden_.assign(cap_ * H, 0.0);
        mask_.assign(cap_ * H, 1.0);
        dropped_.assign(cap_ * H, 0.0);
        logits_.assign(cap_ * M, 0.0);
        probs_.assign(cap_ * M, 0.0);
        dlogits_.assign(cap_ * M, 0.0);
        dhidden_.assign(cap_ * H, 0.0);
        dpooled_.assign(cap_ * D, 0.0);
    }

    const ModelConfig& config() const { return cfg_; }
    std::size_t capacity() const { return cap_; }

    std::span<double> input(std::size_t b) {
        const auto n = cfg_.input_size * 2;
        return {input_.data() + b * n, n};
    }

    void load(std::span<const IqWindow* const> windows) {
        if (windows.size() > cap_) throw ShapeError("batch larger than engine capacity");
        for (std::size_t b = 0; b < windows.size(); ++b) {
            const auto& iq = windows[b]->iq;
            if (iq.size() != cfg_.input_size * 2) throw ShapeError("window length does not match model input_size");
            std::copy(iq.begin(), iq.end(), input_.begin() + static_cast<std::ptrdiff_t>(b * iq.size()));
        }
    }

    /// Forward pass over the first n loaded inputs. Dropout is applied only
    /// when `dropout` is non-null (training mode).
    void forward(const ParamSet& p, std::size_t n, Rng* dropout) {
        if (n > cap_) throw ShapeError("batch larger than engine capacity");
        n_ = n;
        const auto I = cfg_.input_size, K = cfg_.conv_kernel, L = cfg_.conv_len(), P = cfg_.pool_len();
        const auto F = cfg_.conv_filters, D = cfg_.flat_size(), H = cfg_.dense_units, M = cfg_.num_classes;
        constexpr auto C = ModelConfig::kInputChannels;

        for (std::size_t b = 0; b < n; ++b) {
            const double* x = input_.data() + b * I * C;
            double* conv = conv_.data() + b * L * F;
            for (std::size_t t = 0; t < L; ++t)
                for (std::size_t f = 0; f < F; ++f) {
                    double acc = p.conv_b[f];
                    const double* w = p.conv_w.data() + f * K * C;
                    const double* xt = x + t * C;
                    for (std::size_t j = 0; j < K * C; ++j) acc += w[j] * xt[j];
                    conv[t * F + f] = acc > 0.0 ? acc : 0.0;
                }
            double* pooled = pooled_.data() + b * D;
            std::uint8_t* am = argmax_.data() + b * D;
            for (std::size_t q = 0; q < P; ++q)
                for (std::size_t f = 0; f < F; ++f) {
                    const double a0 = conv[2 * q * F + f];
                    const double a1 = conv[(2 * q + 1) * F + f];
                    const bool second = a1 > a0;
                    pooled[q * F + f] = second ? a1 : a0;
                    am[q * F + f] = second ? 1 : 0;
                }
        }

        kernels::dense_forward_batch(pooled_.data(), n, D, p.dense1_w.data(), p.dense1_b.data(), H, hidden_.data());
        for (std::size_t i = 0; i < n * H; ++i) hidden_[i] = hidden_[i] > 0.0 ? hidden_[i] : 0.0;

        const double rate = cfg_.dropout_rate;
        if (dropout && rate > 0.0) {
            const double keep_scale = 1.0 / (1.0 - rate);
            for (std::size_t i = 0; i < n * H; ++i) {
                mask_[i] = dropout->uniform() < rate ? 0.0 : keep_scale;
                dropped_[i] = hidden_[i] * mask_[i];
            }
        } else {
            std::fill(mask_.begin(), mask_.begin() + static_cast<std::ptrdiff_t>(n * H), 1.0);
            std::copy(hidden_.begin(), hidden_.begin() + static_cast<std::ptrdiff_t>(n * H), dropped_.begin());
        }

        kernels::dense_forward_batch(dropped_.data(), n, H, p.dense2_w.data(), p.dense2_b.data(), M, logits_.data());
        for (std::size_t b = 0; b < n; ++b) {
            const auto pr = softmax(std::span<const double>(logits_.data() + b * M, M));
            std::copy(pr.begin(), pr.end(), probs_.begin() + static_cast<std::ptrdiff_t>(b * M));
        }
    }

    std::span<const double> probs(std::size_t b) const {
        return {probs_.data() + b * cfg_.num_classes, cfg_.num_classes};
    }
    std::span<const double> logits(std::size_t b) const {
        return {logits_.data() + b * cfg_.num_classes, cfg_.num_classes};
    }

    /// Mean CCE over the current batch.
    double loss(std::span<const std::uint16_t> labels) const {
        double acc = 0.0;
        for (std::size_t b = 0; b < n_; ++b) acc += cce_loss(probs(b), labels[b]);
        return acc / static_cast<double>(n_);
    }

    std::size_t correct(std::span<const std::uint16_t> labels) const {
        std::size_t c = 0;
        for (std::size_t b = 0; b < n_; ++b) c += argmax(probs(b)) == labels[b] ? 1 : 0;
        return c;
    }

    /// Gradient of the mean batch loss, written into `g` (overwritten).
    /// Requires a preceding forward() on the same parameters and batch.
    void backward(const ParamSet& p, std::span<const std::uint16_t> labels, ParamSet& g) {
        const std::size_t n = n_;
        if (labels.size() < n) throw ShapeError("fewer labels than batch entries");
        const auto I = cfg_.input_size, K = cfg_.conv_kernel, P = cfg_.pool_len();
        const auto F = cfg_.conv_filters, D = cfg_.flat_size(), H = cfg_.dense_units, M = cfg_.num_classes;
        constexpr auto C = ModelConfig::kInputChannels;
        g.fill(0.0);

        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t m = 0; m < M; ++m)
                dlogits_[b * M + m] = (probs_[b * M + m] - (m == labels[b] ? 1.0 : 0.0)) * inv_n;

        kernels::dense_weight_grad(dropped_.data(), n, H, dlogits_.data(), M, g.dense2_w.data(), g.dense2_b.data());
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t h = 0; h < H; ++h) {
                const std::size_t i = b * H + h;
                dhidden_[i] = hidden_[i] > 0.0 && mask_[i] != 0.0
                                  ? kernels::dot(p.dense2_w.data() + h * M, dlogits_.data() + b * M, M) * mask_[i]
                                  : 0.0;
            }

        kernels::dense_weight_grad(pooled_.data(), n, D, dhidden_.data(), H, g.dense1_w.data(), g.dense1_b.data());
        // A pooled value of zero means both ReLU inputs were inactive, so no
        // gradient reaches the convolution from it.
        kernels::dense_input_grad(p.dense1_w.data(), D, dhidden_.data(), n, H, pooled_.data(), dpooled_.data());

        for (std::size_t b = 0; b < n; ++b) {
            const double* x = input_.data() + b * I * C;
            const double* dp = dpooled_.data() + b * D;
            const double* pooled = pooled_.data() + b * D;
            const std::uint8_t* am = argmax_.data() + b * D;
            for (std::size_t q = 0; q < P; ++q)
                for (std::size_t f = 0; f < F; ++f) {
                    const std::size_t i = q * F + f;
                    if (pooled[i] <= 0.0) continue;
                    const double gv = dp[i];
                    const std::size_t t = 2 * q + am[i];
                    g.conv_b[f] += gv;
                    double* gw = g.conv_w.data() + f * K * C;
                    const double* xt = x + t * C;
                    for (std::size_t j = 0; j < K * C; ++j) gw[j] += gv * xt[j];
                }
        }
    }

    /// On/off pattern of every non-smooth point (ReLUs, pool winners) for the
    /// current batch. Finite differences are only valid where it is unchanged.
    std::vector<std::uint8_t> activation_signature() const {
        const auto L = cfg_.conv_len(), F = cfg_.conv_filters, D = cfg_.flat_size(), H = cfg_.dense_units;
        std::vector<std::uint8_t> sig;
        sig.reserve(n_ * (L * F + D + H));
        for (std::size_t i = 0; i < n_ * L * F; ++i) sig.push_back(conv_[i] > 0.0);
        for (std::size_t i = 0; i < n_ * D; ++i) sig.push_back(argmax_[i]);
        for (std::size_t i = 0; i < n_ * H; ++i) sig.push_back(hidden_[i] > 0.0);
        return sig;
    }

private:
    ModelConfig cfg_;
    std::size_t cap_;
    std::size_t n_ = 0;
    std::vector<double> input_, conv_, pooled_;
    std::vector<std::uint8_t> argmax_;
    std::vector<double> hidden_, mask_, dropped_, logits_, probs_;
    std::vector<double> dlogits_, dhidden_, dpooled_;
};

} // namespace nbwatch::nn
