#pragma once

#include <cmath>
#include <cstdint>

#include "nbwatch/error.hpp"
#include "nbwatch/nn/model.hpp"

namespace nbwatch::nn {

struct AdamConfig {
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First and second moment estimates, one per parameter.
struct AdamState {
    ParamSet m;
    ParamSet v;

    static AdamState for_model(const ModelConfig& c) { return {ParamSet::zeros(c), ParamSet::zeros(c)}; }
};

/// One bias-corrected Adam update at step t (t >= 1).
inline void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, std::uint64_t t,
                      const AdamConfig& cfg) {
    detail::require(t >= 1, "adam step index starts at 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    const double step = cfg.learning_rate / bc1;
    const double inv_bc2 = 1.0 / bc2;

    auto p = params.tensors();
    auto g = grads.tensors();
    auto m = state.m.tensors();
    auto v = state.v.tensors();
    for (std::size_t k = 0; k < kTensorCount; ++k) {
        auto& pk = *p[k];
        const auto& gk = *g[k];
        auto& mk = *m[k];
        auto& vk = *v[k];
        if (gk.size() != pk.size() || mk.size() != pk.size() || vk.size() != pk.size())
            throw ShapeError("adam tensors do not match parameter shapes");
        for (std::size_t i = 0; i < pk.size(); ++i) {
            mk[i] = cfg.beta1 * mk[i] + (1.0 - cfg.beta1) * gk[i];
            vk[i] = cfg.beta2 * vk[i] + (1.0 - cfg.beta2) * gk[i] * gk[i];
            pk[i] -= step * mk[i] / (std::sqrt(vk[i] * inv_bc2) + cfg.eps);
        }
    }
}

} // namespace nbwatch::nn
