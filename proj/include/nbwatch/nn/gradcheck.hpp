#pragma once

// Finite-difference check of Engine::backward.
//
// Each parameter is perturbed by +-h and the mean batch loss re-evaluated.
// ReLU and max-pool kinks make the loss non-differentiable on a measure-zero
// set; if either perturbed evaluation flips an activation relative to the
// unperturbed pass, h is shrunk by 10x (up to max_shrinks times) until both
// sides lie on the same smooth piece.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "nbwatch/dataset.hpp"
#include "nbwatch/nn/engine.hpp"
#include "nbwatch/nn/model.hpp"

namespace nbwatch::nn {

struct GradCheckOptions {
    double h = 1e-4;
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding don't produce huge ratios.
    double denom_floor = 1e-6;
    std::size_t max_shrinks = 4;
    /// When set, the same dropout mask (drawn from this seed) is used for
    /// every evaluation; otherwise dropout is off.
    std::optional<std::uint64_t> dropout_seed;
};

struct GradCheckResult {
    std::array<double, kTensorCount> max_rel_error{};
    std::size_t checked = 0;
    /// Parameters whose step had to be shrunk because of a kink.
    std::size_t shrunk = 0;
    /// Parameters where no step small enough to avoid a kink was found; these
    /// are excluded from max_rel_error.
    std::size_t unresolved = 0;

    double worst() const { return *std::max_element(max_rel_error.begin(), max_rel_error.end()); }
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckResult gradient_check(const Model& model, std::span<const IqWindow* const> batch,
                                      const GradCheckOptions& opt = {}) {
    detail::require(!batch.empty(), "gradient check needs a nonempty batch");
    detail::require(opt.h > 0.0, "finite-difference step must be positive");
    Engine eng(model.config, batch.size());
    eng.load(batch);
    std::vector<std::uint16_t> labels;
    for (const auto* w : batch) labels.push_back(w->label);

    auto run = [&](const ParamSet& p) {
        if (opt.dropout_seed) {
            Rng rng(*opt.dropout_seed);
            eng.forward(p, batch.size(), &rng);
        } else {
            eng.forward(p, batch.size(), nullptr);
        }
        return eng.loss(labels);
    };

    run(model.params);
    const auto base_sig = eng.activation_signature();
    ParamSet analytic = ParamSet::zeros(model.config);
    eng.backward(model.params, labels, analytic);

    GradCheckResult res;
    ParamSet probe = model.params;
    auto probe_t = probe.tensors();
    const auto grad_t = std::as_const(analytic).tensors();
    for (std::size_t k = 0; k < kTensorCount; ++k) {
        auto& t = *probe_t[k];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            double h = opt.h;
            std::optional<double> numeric;
            for (std::size_t s = 0; s <= opt.max_shrinks; ++s, h /= 10.0) {
                t[i] = orig + h;
                const double lp = run(probe);
                const bool same_p = eng.activation_signature() == base_sig;
                t[i] = orig - h;
                const double lm = run(probe);
                const bool same_m = eng.activation_signature() == base_sig;
                if (same_p && same_m) {
                    numeric = (lp - lm) / (2.0 * h);
                    if (s > 0) ++res.shrunk;
                    break;
                }
            }
            t[i] = orig;
            ++res.checked;
            if (!numeric) {
                ++res.unresolved;
                continue;
            }
            res.max_rel_error[k] =
                std::max(res.max_rel_error[k], relative_error((*grad_t[k])[i], *numeric, opt.denom_floor));
        }
    }
    return res;
}

} // namespace nbwatch::nn
