#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "nbwatch/dataset.hpp"
#include "nbwatch/error.hpp"
#include "nbwatch/nn/adam.hpp"
#include "nbwatch/nn/engine.hpp"
#include "nbwatch/nn/model.hpp"
#include "nbwatch/random.hpp"

namespace nbwatch::nn {

struct TrainConfig {
    double learning_rate = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 64;
    std::size_t max_epochs = 100;
    std::size_t early_stop_patience = 5;
    std::uint64_t seed = 0;

    void validate() const {
        detail::require(learning_rate > 0.0, "learning_rate must be positive");
        detail::require(batch_size >= 1, "batch_size must be positive");
        detail::require(max_epochs >= 1, "max_epochs must be positive");
        detail::require(early_stop_patience >= 1, "early_stop_patience must be >= 1");
    }

    AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_eps}; }
};

struct EpochStats {
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
    std::size_t epochs_run = 0;
    std::vector<EpochStats> history;
    bool stopped_early = false;
    /// 1-based epoch whose weights were returned.
    std::size_t best_epoch = 0;
    bool operator==(const TrainReport&) const = default;
};

struct LossAccuracy {
    double loss = 0.0;
    double accuracy = 0.0;
};

/// Dropout-free mean loss and accuracy over a window list.
inline LossAccuracy evaluate_windows(const Model& model, std::span<const IqWindow* const> windows,
                                     std::size_t batch = 256) {
    if (windows.empty()) throw ConfigError("cannot evaluate an empty window list");
    Engine eng(model.config, std::min(batch, windows.size()));
    double loss = 0.0;
    std::size_t correct = 0;
    std::vector<std::uint16_t> labels;
    for (std::size_t s = 0; s < windows.size(); s += eng.capacity()) {
        const std::size_t n = std::min(eng.capacity(), windows.size() - s);
        const auto chunk = windows.subspan(s, n);
        labels.resize(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = chunk[i]->label;
        eng.load(chunk);
        eng.forward(model.params, n, nullptr);
        loss += eng.loss(labels) * static_cast<double>(n);
        correct += eng.correct(labels);
    }
    const auto total = static_cast<double>(windows.size());
    return {loss / total, static_cast<double>(correct) / total};
}

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

/// Mini-batch Adam on the train split with early stopping on validation
/// loss. Returns the weights of the best-validation epoch, rounded to float32.
inline std::pair<Model, TrainReport> train(const ModelConfig& model_config, const TrainConfig& train_config,
                                           const LabeledDataset& ds, const EpochCallback& on_epoch = {}) {
    model_config.validate();
    train_config.validate();
    if (model_config.input_size != ds.input_size)
        throw ShapeError("model input_size does not match dataset input_size");
    if (model_config.num_classes != ds.num_classes)
        throw ShapeError("model num_classes does not match dataset num_classes");
    if (ds.split.train.empty()) throw ConfigError("train split is empty");
    if (ds.split.val.empty()) throw ConfigError("validation split is empty");

    const auto train_windows = select(ds, ds.split.train);
    const auto val_windows = select(ds, ds.split.val);
    const std::uint64_t seed = train_config.seed;

    Model model = Model::init(model_config, derive_seed(seed, {1}));
    Model best = model;
    AdamState adam = AdamState::for_model(model_config);
    ParamSet grads = ParamSet::zeros(model_config);
    Engine eng(model_config, train_config.batch_size);
    const auto adam_cfg = train_config.adam();

    TrainReport report;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::uint64_t step = 0;
    std::vector<std::size_t> order(train_windows.size());
    std::vector<const IqWindow*> batch;
    std::vector<std::uint16_t> labels;

    for (std::size_t epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle_rng(derive_seed(seed, {2, epoch}));
        shuffle_rng.shuffle(order.begin(), order.end());
        Rng dropout_rng(derive_seed(seed, {3, epoch}));

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t s = 0; s < order.size(); s += train_config.batch_size) {
            const std::size_t n = std::min(train_config.batch_size, order.size() - s);
            batch.resize(n);
            labels.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                batch[i] = train_windows[order[s + i]];
                labels[i] = batch[i]->label;
            }
            eng.load(batch);
            eng.forward(model.params, n, &dropout_rng);
            loss_sum += eng.loss(labels) * static_cast<double>(n);
            correct += eng.correct(labels);
            eng.backward(model.params, labels, grads);
            adam_step(model.params, grads, adam, ++step, adam_cfg);
        }
        if (!model.params.all_finite()) throw std::runtime_error("training diverged: non-finite parameters");

        EpochStats st;
        st.train_loss = loss_sum / static_cast<double>(order.size());
        st.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        const auto val = evaluate_windows(model, val_windows);
        st.val_loss = val.loss;
        st.val_accuracy = val.accuracy;
        report.history.push_back(st);
        report.epochs_run = epoch;
        if (on_epoch) on_epoch(epoch, st);

        if (st.val_loss < best_val) {
            best_val = st.val_loss;
            best = model;
            report.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= train_config.early_stop_patience) {
            report.stopped_early = true;
            break;
        }
    }
    best.round_to_f32();
    return {std::move(best), std::move(report)};
}

} // namespace nbwatch::nn
