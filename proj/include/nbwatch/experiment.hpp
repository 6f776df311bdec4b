#pragma once

// Experiment runner: trains one model per (n_portions, input_size, seed) cell
// on a fresh synthetic dataset and runs the accuracy/latency, gain-sweep,
// multi-signal, unseen-waveform and latency studies on it.
//
// Seeds. Everything in a cell derives from (seed, N, I):
//   dataset     derive_seed(seed, {N, I, 1})
//   split       derive_seed(seed, {N, I, 2})
//   training    derive_seed(seed, {N, I, 3})
//   test sets   derive_seed(seed, {N, I, 10 + study, ...})
//
// Output files (emit_report):
//   <name>.json       full report, see schemas/experiment_report.schema.json
//   <name>.csv        one row per completed grid cell; columns per experiment:
//       acc_vs_input     n_portions,input_size,accuracy,latency_p50_ns,seed
//       gain_sweep       n_portions,input_size,gain,accuracy,seed
//       multi_signal     n_portions,input_size,k,exact_match,topk_match,precision,recall,true_mass,seed
//       unseen_waveform  n_portions,input_size,gaussian_accuracy,ofdm_pulse_accuracy,seed
//       latency_bench    n_portions,input_size,latency_p50_ns,latency_p95_ns,latency_mean_ns,trials,seed
//   <name>_plot.csv   x,y,series triples

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nbwatch/dataset.hpp"
#include "nbwatch/detector.hpp"
#include "nbwatch/error.hpp"
#include "nbwatch/neuralnet.hpp"
#include "nbwatch/signalgen.hpp"

namespace nbwatch {

using Json = nlohmann::ordered_json;

enum class ExperimentName { AccVsInput, GainSweep, MultiSignal, UnseenWaveform, LatencyBench };

inline const char* to_string(ExperimentName n) {
    switch (n) {
    case ExperimentName::AccVsInput: return "acc_vs_input";
    case ExperimentName::GainSweep: return "gain_sweep";
    case ExperimentName::MultiSignal: return "multi_signal";
    case ExperimentName::UnseenWaveform: return "unseen_waveform";
    case ExperimentName::LatencyBench: return "latency_bench";
    }
    return "?";
}

inline ExperimentName parse_experiment_name(const std::string& s) {
    for (auto n : {ExperimentName::AccVsInput, ExperimentName::GainSweep, ExperimentName::MultiSignal,
                   ExperimentName::UnseenWaveform, ExperimentName::LatencyBench})
        if (s == to_string(n)) return n;
    throw ConfigError("unknown experiment '" + s + "'");
}

struct ExperimentSpec {
    ExperimentName name = ExperimentName::AccVsInput;
    std::vector<std::size_t> n_portions{4, 16};
    std::vector<std::size_t> input_sizes{16, 32, 64, 128};
    std::size_t per_class = 5000;
    std::vector<std::uint64_t> seeds{1};
    /// Where emit_report writes after every cell; empty disables writing.
    std::filesystem::path output_dir;
    /// Trained models are saved here and reused when their provenance
    /// matches; empty disables the disk cache.
    std::filesystem::path model_dir;

    /// Windows per class in each evaluation set built by gain_sweep and
    /// unseen_waveform; 0 means max(100, per_class / 10).
    std::size_t eval_per_class = 0;
    std::vector<double> gains{0.01, 0.33, 0.5, 0.66, 0.99};
    bool gain_zero_control = true;
    std::size_t multi_windows = 500;
    std::size_t max_interferers = 4;
    double threshold = kDefaultMultiThreshold;
    std::size_t latency_trials = 1000;
    std::size_t max_epochs = 100;
    std::size_t patience = 5;

    /// The grid each study uses when the caller does not override it.
    static ExperimentSpec defaults(ExperimentName name) {
        ExperimentSpec s;
        s.name = name;
        switch (name) {
        case ExperimentName::AccVsInput:
        case ExperimentName::LatencyBench: break;
        case ExperimentName::GainSweep: s.input_sizes = {16, 128}; break;
        case ExperimentName::MultiSignal:
        case ExperimentName::UnseenWaveform: s.input_sizes = {16}; break;
        }
        return s;
    }

    std::size_t eval_windows_per_class() const {
        return eval_per_class != 0 ? eval_per_class : std::max<std::size_t>(100, per_class / 10);
    }

    void validate() const {
        detail::require(!n_portions.empty(), "n_portions must not be empty");
        for (auto n : n_portions) detail::require(n >= 1, "n_portions entries must be positive");
        detail::require(!input_sizes.empty(), "input_sizes must not be empty");
        for (auto i : input_sizes) detail::require(i >= 1, "input_sizes entries must be positive");
        detail::require(per_class >= 100, "per_class must be >= 100");
        detail::require(!seeds.empty(), "seeds must not be empty");
        detail::require(!gains.empty(), "gains must not be empty");
        for (double g : gains) detail::require(g >= 0.0 && g <= 1.0, "gains must lie in [0, 1]");
        detail::require(multi_windows >= 1, "multi_windows must be positive");
        detail::require(max_interferers >= 1, "max_interferers must be positive");
        detail::require(threshold > 0.0 && threshold < 1.0, "threshold must lie in (0, 1)");
        detail::require(latency_trials >= 100, "latency_trials must be >= 100");
        detail::require(max_epochs >= 1, "max_epochs must be positive");
        detail::require(patience >= 1, "patience must be positive");
    }

    Json to_json() const {
        Json j;
        j["name"] = to_string(name);
        j["n_portions"] = n_portions;
        j["input_sizes"] = input_sizes;
        j["per_class"] = per_class;
        j["seeds"] = seeds;
        j["eval_per_class"] = eval_windows_per_class();
        j["gains"] = gains;
        j["gain_zero_control"] = gain_zero_control;
        j["multi_windows"] = multi_windows;
        j["max_interferers"] = max_interferers;
        j["threshold"] = threshold;
        j["latency_trials"] = latency_trials;
        j["max_epochs"] = max_epochs;
        j["patience"] = patience;
        return j;
    }
};

/// A published over-the-air figure for side-by-side reading. Never asserted.
struct ReferenceValue {
    std::string label;
    double value = 0.0;
    std::string unit;
};

struct CellResult {
    std::string id;
    bool ok = true;
    std::string error;
    /// Grid coordinates (n_portions, input_size, seed, and gain / k where used).
    Json params = Json::object();
    Json metrics = Json::object();
    /// seed, dataset_hash, model_hash, training manifest and its hash.
    Json provenance = Json::object();
    /// Confusion matrices, training history, per-scene softmax vectors.
    Json details = Json::object();

    double metric(const std::string& key) const { return metrics.at(key).get<double>(); }
};

struct ExperimentReport {
    ExperimentSpec spec;
    std::vector<CellResult> cells;
    std::vector<ReferenceValue> reference;
    bool partial = false;

    bool complete() const {
        return !partial && std::all_of(cells.begin(), cells.end(), [](const CellResult& c) { return c.ok; });
    }

    const CellResult& cell(const std::string& id) const {
        for (const auto& c : cells)
            if (c.id == id) return c;
        throw std::out_of_range("no cell '" + id + "'");
    }
};

// ---------------------------------------------------------------------------
// Formatting

namespace exp_detail {

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

inline std::string fmt_double(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

inline std::string fmt_json(const Json& v) {
    if (v.is_number_float()) return fmt_double(v.get<double>());
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

inline const Json& lookup(const CellResult& c, const std::string& key) {
    if (c.params.contains(key)) return c.params.at(key);
    if (c.metrics.contains(key)) return c.metrics.at(key);
    throw std::out_of_range("cell " + c.id + " has no field '" + key + "'");
}

inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
        out << text;
        if (!out.flush()) throw std::runtime_error("write to " + tmp + " failed");
    }
    std::filesystem::rename(tmp, path);
}

inline bool is_control(const CellResult& c) { return c.params.value("control", false); }

} // namespace exp_detail

inline std::vector<std::string> csv_columns(ExperimentName name) {
    switch (name) {
    case ExperimentName::AccVsInput: return {"n_portions", "input_size", "accuracy", "latency_p50_ns", "seed"};
    case ExperimentName::GainSweep: return {"n_portions", "input_size", "gain", "accuracy", "seed"};
    case ExperimentName::MultiSignal:
        return {"n_portions", "input_size", "k", "exact_match", "topk_match", "precision", "recall", "true_mass", "seed"};
    case ExperimentName::UnseenWaveform:
        return {"n_portions", "input_size", "gaussian_accuracy", "ofdm_pulse_accuracy", "seed"};
    case ExperimentName::LatencyBench:
        return {"n_portions", "input_size", "latency_p50_ns", "latency_p95_ns", "latency_mean_ns", "trials", "seed"};
    }
    return {};
}

/// Completed, non-control cells in run order.
inline std::string report_csv(const ExperimentReport& r) {
    const auto cols = csv_columns(r.spec.name);
    std::ostringstream os;
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << '\n';
    for (const auto& c : r.cells) {
        if (!c.ok || exp_detail::is_control(c)) continue;
        for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << exp_detail::fmt_json(exp_detail::lookup(c, cols[i]));
        os << '\n';
    }
    return os.str();
}

inline std::string report_plot_csv(const ExperimentReport& r) {
    using exp_detail::fmt_json;
    std::ostringstream os;
    os << "x,y,series\n";
    auto model = [](const CellResult& c) {
        return "CNN" + fmt_json(c.params.at("n_portions")) + " I=" + fmt_json(c.params.at("input_size")) + " seed=" +
               fmt_json(c.params.at("seed"));
    };
    auto row = [&os](const Json& x, const Json& y, const std::string& series) {
        os << fmt_json(x) << ',' << fmt_json(y) << ',' << series << '\n';
    };
    for (const auto& c : r.cells) {
        if (!c.ok || exp_detail::is_control(c)) continue;
        const std::string cnn = "CNN" + fmt_json(c.params.at("n_portions"));
        const std::string seed = " seed=" + fmt_json(c.params.at("seed"));
        switch (r.spec.name) {
        case ExperimentName::AccVsInput:
            row(c.params.at("input_size"), c.metrics.at("accuracy"), cnn + " accuracy" + seed);
            row(c.params.at("input_size"), c.metrics.at("latency_p50_ns"), cnn + " latency_p50_ns" + seed);
            break;
        case ExperimentName::GainSweep: row(c.params.at("gain"), c.metrics.at("accuracy"), model(c)); break;
        case ExperimentName::MultiSignal:
            row(c.params.at("k"), c.metrics.at("exact_match"), model(c) + " exact_match");
            row(c.params.at("k"), c.metrics.at("recall"), model(c) + " recall");
            row(c.params.at("k"), c.metrics.at("true_mass"), model(c) + " true_mass");
            break;
        case ExperimentName::UnseenWaveform:
            row("gaussian", c.metrics.at("gaussian_accuracy"), model(c));
            row("ofdm-pulse", c.metrics.at("ofdm_pulse_accuracy"), model(c));
            break;
        case ExperimentName::LatencyBench:
            row(c.params.at("input_size"), c.metrics.at("latency_p50_ns"), cnn + seed);
            break;
        }
    }
    return os.str();
}

inline Json report_json(const ExperimentReport& r) {
    Json j;
    j["format"] = "nbwatch-experiment-report";
    j["version"] = 1;
    j["experiment"] = to_string(r.spec.name);
    j["partial"] = r.partial;
    j["complete"] = r.complete();
    j["spec"] = r.spec.to_json();
    j["csv_columns"] = csv_columns(r.spec.name);
    Json cells = Json::array();
    for (const auto& c : r.cells) {
        Json cj;
        cj["id"] = c.id;
        cj["status"] = c.ok ? "ok" : "failed";
        if (!c.ok) cj["error"] = c.error;
        cj["params"] = c.params;
        cj["metrics"] = c.metrics;
        cj["provenance"] = c.provenance;
        cj["details"] = c.details;
        cells.push_back(std::move(cj));
    }
    j["cells"] = std::move(cells);
    Json ref = Json::array();
    for (const auto& v : r.reference) ref.push_back({{"label", v.label}, {"value", v.value}, {"unit", v.unit}});
    j["reference"] = std::move(ref);
    return j;
}

enum class ReportFormat { Csv, Json, PlotData };

/// Writes the requested formats into `dir` (created if needed). Each file is
/// written to a temporary name and renamed, so a crash mid-write never leaves
/// a truncated report behind.
inline std::vector<std::filesystem::path> emit_report(const ExperimentReport& r, const std::filesystem::path& dir,
                                                      const std::vector<ReportFormat>& formats = {
                                                          ReportFormat::Csv, ReportFormat::Json, ReportFormat::PlotData}) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
    const std::string stem = to_string(r.spec.name);
    std::vector<std::filesystem::path> written;
    for (auto f : formats) {
        std::filesystem::path p;
        std::string text;
        switch (f) {
        case ReportFormat::Csv:
            p = dir / (stem + ".csv");
            text = report_csv(r);
            break;
        case ReportFormat::Json:
            p = dir / (stem + ".json");
            text = report_json(r).dump(2) + "\n";
            break;
        case ReportFormat::PlotData:
            p = dir / (stem + "_plot.csv");
            text = report_plot_csv(r);
            break;
        }
        exp_detail::write_atomic(p, text);
        written.push_back(p);
    }
    return written;
}

// ---------------------------------------------------------------------------
// Published reference values

inline std::vector<ReferenceValue> reference_values(ExperimentName name) {
    switch (name) {
    case ExperimentName::AccVsInput:
        return {{"CNN4 accuracy, I=16", 0.955, "fraction"},   {"CNN4 accuracy, I=128", 0.995, "fraction"},
                {"CNN16 accuracy, I=128", 0.988, "fraction"}, {"CNN4 latency, I=16", 0.093, "ms"},
                {"CNN16 latency, I=16", 0.150, "ms"},         {"CNN4 latency, I=128", 1.205, "ms"},
                {"CNN16 latency, I=128", 1.199, "ms"}};
    case ExperimentName::GainSweep:
        return {{"accuracy loss at gain 0.33", 0.01, "fraction"},
                {"accuracy at gains 0.66 and 0.99", 0.99, "fraction"},
                {"accuracy loss at gain 0.01", 0.10, "fraction"}};
    case ExperimentName::MultiSignal:
        return {{"softmax on the true portion, one interferer", 0.94, "probability"},
                {"softmax on the stronger portion, two interferers", 0.51, "probability"},
                {"softmax on the weaker portion, two interferers", 0.42, "probability"}};
    case ExperimentName::UnseenWaveform:
        return {{"CNN4 accuracy, Gaussian narrowband", 0.96, "fraction"},
                {"CNN4 accuracy, OFDM packet narrowband", 0.83, "fraction"},
                {"CNN16 accuracy, Gaussian narrowband", 0.91, "fraction"},
                {"CNN16 accuracy, OFDM packet narrowband", 0.71, "fraction"}};
    case ExperimentName::LatencyBench:
        return {{"CNN4 latency, I=16", 0.093, "ms"},
                {"CNN16 latency, I=16", 0.150, "ms"},
                {"CNN4 latency, I=128", 1.205, "ms"},
                {"CNN16 latency, I=128", 1.199, "ms"}};
    }
    return {};
}

// ---------------------------------------------------------------------------
// Trained-model cache

/// A trained cell: model plus everything needed to trace its numbers back.
struct TrainedCell {
    std::size_t n_portions = 0;
    std::size_t input_size = 0;
    std::uint64_t seed = 0;
    nn::Model model;
    nn::TrainReport train_report;
    std::uint64_t dataset_hash = 0;
    std::uint64_t model_hash = 0;
    /// Canonical text of every input that shaped the training set and run.
    std::string manifest;
    std::uint64_t manifest_hash = 0;
    /// Held-out test split of the training dataset.
    LabeledDataset test_set;
    bool from_disk = false;
};

inline SpectrumConfig spectrum_for(std::size_t n_portions) {
    SpectrumConfig s;
    s.n_portions = n_portions;
    return s;
}

inline WindowOptions training_window_options() { return WindowOptions{}; }

inline nn::ModelConfig model_config_for(std::size_t n_portions, std::size_t input_size) {
    nn::ModelConfig c;
    c.input_size = input_size;
    c.num_classes = num_classes_for(n_portions);
    return c;
}

inline std::string training_manifest(std::size_t n_portions, std::size_t input_size, std::size_t per_class,
                                     std::uint64_t seed, const nn::TrainConfig& tc) {
    const auto opt = training_window_options();
    const auto spec = spectrum_for(n_portions);
    const auto mc = model_config_for(n_portions, input_size);
    using exp_detail::fmt_double;
    std::ostringstream os;
    os << "n_portions=" << n_portions << "\ninput_size=" << input_size << "\nper_class=" << per_class
       << "\nseed=" << seed << "\nwaveform=" << to_string(opt.waveform) << "\ngain_min=" << fmt_double(opt.gain_min)
       << "\ngain_max=" << fmt_double(opt.gain_max) << "\nlegit_power_db=" << fmt_double(opt.legit_power_db)
       << "\nchannel_bandwidth_hz=" << fmt_double(spec.channel_bandwidth_hz)
       << "\nsample_rate_hz=" << fmt_double(spec.sample_rate_hz)
       << "\nnoise_floor_db=" << fmt_double(spec.noise_floor_db) << "\nconv_filters=" << mc.conv_filters
       << "\nconv_kernel=" << mc.conv_kernel << "\ndense_units=" << mc.dense_units
       << "\ndropout_rate=" << fmt_double(mc.dropout_rate) << "\nlearning_rate=" << fmt_double(tc.learning_rate)
       << "\nbatch_size=" << tc.batch_size << "\nmax_epochs=" << tc.max_epochs
       << "\npatience=" << tc.early_stop_patience << "\ntrain_seed=" << tc.seed << '\n';
    return os.str();
}

inline std::uint64_t manifest_hash(const std::string& manifest) {
    return detail::fnv1a(std::span<const char>(manifest.data(), manifest.size()));
}

class ExperimentRunner {
public:
    explicit ExperimentRunner(std::ostream* log = nullptr) : log_(log) {}

    /// Trains (or fetches) the model for one grid cell.
    const TrainedCell& trained(std::size_t n_portions, std::size_t input_size, std::size_t per_class,
                               std::uint64_t seed, std::size_t max_epochs = 100, std::size_t patience = 5,
                               const std::filesystem::path& model_dir = {}) {
        const auto key = std::make_tuple(n_portions, input_size, per_class, seed, max_epochs, patience);
        if (auto it = cache_.find(key); it != cache_.end()) return *it->second;

        auto cell = std::make_unique<TrainedCell>();
        cell->n_portions = n_portions;
        cell->input_size = input_size;
        cell->seed = seed;

        const auto mc = model_config_for(n_portions, input_size);
        mc.validate();
        nn::TrainConfig tc;
        tc.max_epochs = max_epochs;
        tc.early_stop_patience = patience;
        tc.seed = derive_seed(seed, {n_portions, input_size, 3});

        log("CNN" + std::to_string(n_portions) + " I=" + std::to_string(input_size) + " seed=" +
            std::to_string(seed) + ": generating " + std::to_string(per_class) + " windows per class");
        auto ds = split_dataset(generate_dataset(spectrum_for(n_portions), input_size, per_class,
                                                 training_window_options(), derive_seed(seed, {n_portions, input_size, 1})),
                                derive_seed(seed, {n_portions, input_size, 2}));
        cell->dataset_hash = dataset_hash(ds);
        cell->manifest = training_manifest(n_portions, input_size, per_class, seed, tc);
        cell->manifest_hash = manifest_hash(cell->manifest);

        const std::string stem = "cnn" + std::to_string(n_portions) + "_i" + std::to_string(input_size) + "_pc" +
                                 std::to_string(per_class) + "_s" + std::to_string(seed) + "_" +
                                 exp_detail::hex64(cell->manifest_hash);
        if (!model_dir.empty() && load_cached(*cell, model_dir, stem)) {
            log("  reusing " + (model_dir / (stem + ".nbm")).string());
        } else {
            auto [model, report] = nn::train(mc, tc, ds, [&](std::size_t epoch, const nn::EpochStats& s) {
                std::ostringstream os;
                os << "  epoch " << epoch << " loss " << s.train_loss << " val_loss " << s.val_loss << " val_acc "
                   << s.val_accuracy;
                log(os.str());
            });
            cell->model = std::move(model);
            cell->train_report = std::move(report);
            if (!model_dir.empty()) store_cached(*cell, model_dir, stem);
        }
        cell->model_hash = nn::model_hash(cell->model);

        cell->test_set.spectrum = ds.spectrum;
        cell->test_set.input_size = ds.input_size;
        cell->test_set.num_classes = ds.num_classes;
        for (auto i : ds.split.test) cell->test_set.windows.push_back(std::move(ds.windows[i]));

        return *cache_.emplace(key, std::move(cell)).first->second;
    }

    void log(const std::string& line) const {
        if (log_) *log_ << line << std::endl;
    }

private:
    static std::filesystem::path meta_path(const std::filesystem::path& dir, const std::string& stem) {
        return dir / (stem + ".json");
    }

    bool load_cached(TrainedCell& cell, const std::filesystem::path& dir, const std::string& stem) const {
        const auto model_path = dir / (stem + ".nbm");
        if (!std::filesystem::exists(model_path) || !std::filesystem::exists(meta_path(dir, stem))) return false;
        try {
            std::ifstream in(meta_path(dir, stem));
            const auto meta = Json::parse(in);
            if (meta.at("dataset_hash").get<std::string>() != exp_detail::hex64(cell.dataset_hash) ||
                meta.at("manifest").get<std::string>() != cell.manifest)
                return false;
            cell.model = nn::load_model(model_path, {.input_size = cell.input_size,
                                                     .num_classes = num_classes_for(cell.n_portions)});
            const auto& tr = meta.at("train_report");
            cell.train_report.epochs_run = tr.at("epochs_run");
            cell.train_report.best_epoch = tr.at("best_epoch");
            cell.train_report.stopped_early = tr.at("stopped_early");
            for (const auto& e : tr.at("history"))
                cell.train_report.history.push_back(
                    {e.at("train_loss"), e.at("train_accuracy"), e.at("val_loss"), e.at("val_accuracy")});
            if (meta.at("model_hash").get<std::string>() != exp_detail::hex64(nn::model_hash(cell.model))) return false;
            cell.from_disk = true;
            return true;
        } catch (const std::exception& e) {
            log("  ignoring unreadable model cache " + model_path.string() + ": " + e.what());
            cell.train_report = {};
            return false;
        }
    }

    void store_cached(const TrainedCell& cell, const std::filesystem::path& dir, const std::string& stem) const {
        std::filesystem::create_directories(dir);
        nn::save_model(cell.model, dir / (stem + ".nbm"));
        Json meta;
        meta["dataset_hash"] = exp_detail::hex64(cell.dataset_hash);
        meta["model_hash"] = exp_detail::hex64(nn::model_hash(cell.model));
        meta["manifest"] = cell.manifest;
        meta["train_report"] = train_report_json(cell.train_report);
        exp_detail::write_atomic(meta_path(dir, stem), meta.dump(2) + "\n");
    }

public:
    static Json train_report_json(const nn::TrainReport& r) {
        Json j;
        j["epochs_run"] = r.epochs_run;
        j["best_epoch"] = r.best_epoch;
        j["stopped_early"] = r.stopped_early;
        Json h = Json::array();
        for (const auto& e : r.history)
            h.push_back({{"train_loss", e.train_loss},
                         {"train_accuracy", e.train_accuracy},
                         {"val_loss", e.val_loss},
                         {"val_accuracy", e.val_accuracy}});
        j["history"] = std::move(h);
        return j;
    }

    ExperimentReport run(const ExperimentSpec& spec);

private:
    std::ostream* log_;
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::uint64_t, std::size_t, std::size_t>,
             std::unique_ptr<TrainedCell>>
        cache_;
};

// ---------------------------------------------------------------------------
// Studies

namespace exp_detail {

inline Json confusion_json(const Evaluation& ev) { return Json(ev.confusion); }

inline Json base_params(std::size_t N, std::size_t I, std::uint64_t seed) {
    return Json{{"n_portions", N}, {"input_size", I}, {"seed", seed}};
}

inline Json provenance(const TrainedCell& t) {
    return Json{{"seed", t.seed},
                {"dataset_hash", hex64(t.dataset_hash)},
                {"model_hash", hex64(t.model_hash)},
                {"training_manifest_hash", hex64(t.manifest_hash)},
                {"training_manifest", t.manifest}};
}

inline std::string cell_id(std::size_t N, std::size_t I, std::uint64_t seed) {
    return "n" + std::to_string(N) + "_i" + std::to_string(I) + "_s" + std::to_string(seed);
}

/// Evaluation set rendered with the given options: eval_per_class windows for
/// every class.
inline LabeledDataset eval_set(std::size_t N, std::size_t I, std::size_t per_class, const WindowOptions& opt,
                               std::uint64_t seed) {
    return generate_dataset(spectrum_for(N), I, per_class, opt, seed);
}

/// Fraction of interference-class windows that the model got right.
inline double interference_accuracy(const Evaluation& ev) {
    std::uint64_t hit = 0, total = 0;
    for (std::size_t t = kFirstPortionClass; t < ev.confusion.size(); ++t)
        for (std::size_t p = 0; p < ev.confusion[t].size(); ++p) {
            total += ev.confusion[t][p];
            if (p == t) hit += ev.confusion[t][p];
        }
    return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

/// Fraction of interference-class windows predicted as silent or legit-only.
inline double interference_missed(const Evaluation& ev) {
    std::uint64_t miss = 0, total = 0;
    for (std::size_t t = kFirstPortionClass; t < ev.confusion.size(); ++t)
        for (std::size_t p = 0; p < ev.confusion[t].size(); ++p) {
            total += ev.confusion[t][p];
            if (!is_portion_class(p)) miss += ev.confusion[t][p];
        }
    return total ? static_cast<double>(miss) / static_cast<double>(total) : 0.0;
}

inline Json latency_json(const LatencyStats& s) {
    return Json{{"latency_p50_ns", s.p50_ns},   {"latency_p95_ns", s.p95_ns}, {"latency_mean_ns", s.mean_ns},
                {"latency_min_ns", s.min_ns},   {"latency_max_ns", s.max_ns}, {"trials", s.trials}};
}

struct MultiSignalMetrics {
    double exact_match = 0, topk_match = 0, precision = 0, recall = 0, true_mass = 0;
    Json scenes = Json::array();
};

/// Scenes with k simultaneous interferers on distinct portions, legit
/// traffic present, independent gains in the training range.
inline MultiSignalMetrics multi_signal_cell(const nn::Model& model, std::size_t N, std::size_t k, std::size_t windows,
                                            double threshold, std::uint64_t seed) {
    const auto spectrum = spectrum_for(N);
    const std::size_t I = model.config.input_size;
    const auto opt = training_window_options();
    Classifier clf(model, threshold);
    MultiSignalMetrics m;
    std::size_t exact = 0, topk = 0, tp = 0, predicted = 0;
    double mass = 0.0;
    for (std::size_t w = 0; w < windows; ++w) {
        Rng rng(derive_seed(seed, {w, 0}));
        std::vector<std::size_t> all(N);
        for (std::size_t i = 0; i < N; ++i) all[i] = i;
        rng.shuffle(all.begin(), all.end());
        std::vector<std::size_t> truth(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(truth.begin(), truth.end());

        const auto ws = make_window_scene(spectrum, I, true, true, truth, opt, derive_seed(seed, {w, 1}));
        const auto r = clf.classify(cut_window(ws, I, static_cast<std::uint16_t>(portion_class(truth[0]))));

        std::vector<std::size_t> by_prob(N);
        for (std::size_t i = 0; i < N; ++i) by_prob[i] = i;
        std::stable_sort(by_prob.begin(), by_prob.end(), [&](std::size_t a, std::size_t b) {
            return r.probs[portion_class(a)] > r.probs[portion_class(b)];
        });
        std::vector<std::size_t> top(by_prob.begin(), by_prob.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(top.begin(), top.end());

        std::size_t hits = 0;
        for (auto p : r.interfered_portions) hits += std::binary_search(truth.begin(), truth.end(), p);
        double tm = 0.0;
        for (auto p : truth) tm += r.probs[portion_class(p)];

        exact += r.interfered_portions == truth;
        topk += top == truth;
        tp += hits;
        predicted += r.interfered_portions.size();
        mass += tm;
        m.scenes.push_back({{"portions", truth}, {"probs", r.probs}, {"detected", r.interfered_portions}});
    }
    const auto n = static_cast<double>(windows);
    m.exact_match = static_cast<double>(exact) / n;
    m.topk_match = static_cast<double>(topk) / n;
    m.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
    m.recall = static_cast<double>(tp) / (n * static_cast<double>(k));
    m.true_mass = mass / n;
    return m;
}

} // namespace exp_detail

inline ExperimentReport ExperimentRunner::run(const ExperimentSpec& spec) {
    using namespace exp_detail;
    spec.validate();
    ExperimentReport report;
    report.spec = spec;
    report.reference = reference_values(spec.name);

    auto flush = [&] {
        if (!spec.output_dir.empty()) emit_report(report, spec.output_dir);
    };
    flush();

    for (auto seed : spec.seeds)
        for (auto N : spec.n_portions)
            for (auto I : spec.input_sizes) {
                const std::string id = cell_id(N, I, seed);
                auto fail = [&](const std::string& cell, const std::exception& e) {
                    CellResult c;
                    c.id = cell;
                    c.ok = false;
                    c.error = e.what();
                    c.params = base_params(N, I, seed);
                    report.cells.push_back(std::move(c));
                    report.partial = true;
                    log("cell " + cell + " failed: " + e.what());
                    flush();
                };

                if (spec.name == ExperimentName::LatencyBench) {
                    try {
                        const auto model = nn::Model::init(model_config_for(N, I), derive_seed(seed, {N, I, 4}));
                        CellResult c;
                        c.id = id;
                        c.params = base_params(N, I, seed);
                        c.metrics = latency_json(bench_latency(model, spec.latency_trials, 50, derive_seed(seed, {N, I, 5})));
                        c.provenance = {{"seed", seed}, {"model_hash", hex64(nn::model_hash(model))}, {"weights", "initialized"}};
                        report.cells.push_back(std::move(c));
                        flush();
                        continue;
                    } catch (const std::exception& e) {
                        fail(id, e);
                        return report;
                    }
                }

                const TrainedCell* t = nullptr;
                try {
                    t = &trained(N, I, spec.per_class, seed, spec.max_epochs, spec.patience, spec.model_dir);
                } catch (const std::exception& e) {
                    fail(id, e);
                    return report;
                }

                try {
                    switch (spec.name) {
                    case ExperimentName::AccVsInput: {
                        const auto ev = evaluate(t->model, all_windows(t->test_set));
                        CellResult c;
                        c.id = id;
                        c.params = base_params(N, I, seed);
                        c.metrics["accuracy"] = ev.accuracy;
                        c.metrics["test_windows"] = ev.count;
                        const auto lat = latency_json(
                            bench_latency(t->model, spec.latency_trials, 50, derive_seed(seed, {N, I, 5})));
                        for (const auto& [k, v] : lat.items()) c.metrics[k] = v;
                        c.provenance = provenance(*t);
                        c.details["confusion"] = confusion_json(ev);
                        c.details["training"] = train_report_json(t->train_report);
                        report.cells.push_back(std::move(c));
                        flush();
                        break;
                    }
                    case ExperimentName::GainSweep: {
                        std::vector<double> gains = spec.gains;
                        if (spec.gain_zero_control) gains.push_back(0.0);
                        for (std::size_t gi = 0; gi < gains.size(); ++gi) {
                            const bool control = spec.gain_zero_control && gi + 1 == gains.size();
                            WindowOptions opt = training_window_options();
                            opt.fixed_gain = gains[gi];
                            // Same scenes at every gain; only the interferer level changes.
                            const auto set = eval_set(N, I, spec.eval_windows_per_class(), opt,
                                                      derive_seed(seed, {N, I, 11}));
                            const auto ev = evaluate(t->model, all_windows(set));
                            CellResult c;
                            c.id = id + (control ? "_control" : "_g" + fmt_double(gains[gi]));
                            c.params = base_params(N, I, seed);
                            c.params["gain"] = gains[gi];
                            if (control) c.params["control"] = true;
                            c.metrics["accuracy"] = ev.accuracy;
                            c.metrics["interference_accuracy"] = interference_accuracy(ev);
                            c.metrics["interference_missed"] = interference_missed(ev);
                            c.metrics["test_windows"] = ev.count;
                            c.provenance = provenance(*t);
                            c.provenance["eval_dataset_hash"] = hex64(dataset_hash(set));
                            c.details["confusion"] = confusion_json(ev);
                            report.cells.push_back(std::move(c));
                            flush();
                        }
                        break;
                    }
                    case ExperimentName::MultiSignal: {
                        for (std::size_t k = 1; k <= std::min(spec.max_interferers, N); ++k) {
                            const auto m = multi_signal_cell(t->model, N, k, spec.multi_windows, spec.threshold,
                                                             derive_seed(seed, {N, I, 12, k}));
                            CellResult c;
                            c.id = id + "_k" + std::to_string(k);
                            c.params = base_params(N, I, seed);
                            c.params["k"] = k;
                            c.metrics["exact_match"] = m.exact_match;
                            c.metrics["topk_match"] = m.topk_match;
                            c.metrics["precision"] = m.precision;
                            c.metrics["recall"] = m.recall;
                            c.metrics["true_mass"] = m.true_mass;
                            c.metrics["windows"] = spec.multi_windows;
                            c.metrics["threshold"] = spec.threshold;
                            c.provenance = provenance(*t);
                            c.details["scenes"] = m.scenes;
                            report.cells.push_back(std::move(c));
                            flush();
                        }
                        break;
                    }
                    case ExperimentName::UnseenWaveform: {
                        // Paired sets: identical scene seeds, only the interferer waveform differs.
                        const auto seed_eval = derive_seed(seed, {N, I, 13});
                        WindowOptions gauss = training_window_options();
                        WindowOptions pulse = gauss;
                        pulse.waveform = Waveform::OfdmPulse;
                        const auto gset = eval_set(N, I, spec.eval_windows_per_class(), gauss, seed_eval);
                        const auto pset = eval_set(N, I, spec.eval_windows_per_class(), pulse, seed_eval);
                        const auto gev = evaluate(t->model, all_windows(gset));
                        const auto pev = evaluate(t->model, all_windows(pset));
                        CellResult c;
                        c.id = id;
                        c.params = base_params(N, I, seed);
                        c.metrics["gaussian_accuracy"] = gev.accuracy;
                        c.metrics["ofdm_pulse_accuracy"] = pev.accuracy;
                        c.metrics["accuracy_drop"] = gev.accuracy - pev.accuracy;
                        c.metrics["test_windows"] = gev.count;
                        c.provenance = provenance(*t);
                        c.provenance["training_waveform"] = to_string(training_window_options().waveform);
                        c.provenance["gaussian_eval_hash"] = hex64(dataset_hash(gset));
                        c.provenance["ofdm_pulse_eval_hash"] = hex64(dataset_hash(pset));
                        c.details["gaussian_confusion"] = confusion_json(gev);
                        c.details["ofdm_pulse_confusion"] = confusion_json(pev);
                        report.cells.push_back(std::move(c));
                        flush();
                        break;
                    }
                    case ExperimentName::LatencyBench: break;
                    }
                } catch (const std::exception& e) {
                    fail(id, e);
                    return report;
                }
            }
    flush();
    return report;
}

inline ExperimentReport run_experiment(const ExperimentSpec& spec, std::ostream* log = nullptr) {
    ExperimentRunner runner(log);
    return runner.run(spec);
}

namespace exp_detail {
inline ExperimentReport run_as(ExperimentSpec spec, ExperimentName expected) {
    if (spec.name != expected)
        throw ConfigError(std::string("spec names ") + to_string(spec.name) + ", expected " + to_string(expected));
    return run_experiment(spec);
}
} // namespace exp_detail

inline ExperimentReport run_acc_vs_input(const ExperimentSpec& s) {
    return exp_detail::run_as(s, ExperimentName::AccVsInput);
}
inline ExperimentReport run_gain_sweep(const ExperimentSpec& s) {
    return exp_detail::run_as(s, ExperimentName::GainSweep);
}
inline ExperimentReport run_multi_signal(const ExperimentSpec& s) {
    return exp_detail::run_as(s, ExperimentName::MultiSignal);
}
inline ExperimentReport run_unseen_waveform(const ExperimentSpec& s) {
    return exp_detail::run_as(s, ExperimentName::UnseenWaveform);
}
inline ExperimentReport run_latency_bench(const ExperimentSpec& s) {
    return exp_detail::run_as(s, ExperimentName::LatencyBench);
}

// ---------------------------------------------------------------------------
// Energy-detector comparison

struct EnergyGapResult {
    std::size_t windows_per_type = 0;
    /// Best accuracy any rule on the target portion's energy flag achieves
    /// when telling WiFi-only from WiFi-plus-narrowband windows.
    double energy_wifi_vs_both = 0.0;
    /// Same, WiFi-only against narrowband-only windows.
    double energy_wifi_vs_narrowband = 0.0;
    /// Flag rates on the target portion per scene type.
    double flag_rate_wifi = 0.0, flag_rate_both = 0.0, flag_rate_narrowband = 0.0;
    /// CNN: WiFi-only predicted legit-only, WiFi-plus-narrowband predicted as
    /// interference on the target portion.
    double cnn_wifi_vs_both = 0.0;
};

namespace exp_detail {
/// Best accuracy of a rule mapping one binary feature to one of two balanced
/// classes: max over {always a, always b, flag -> b, flag -> a}.
inline double best_flag_rule(double flag_rate_a, double flag_rate_b) {
    const double follow = 0.5 * ((1.0 - flag_rate_a) + flag_rate_b);
    return std::max({0.5, follow, 1.0 - follow});
}
} // namespace exp_detail

/// Scenes on a target portion drawn uniformly per window: WiFi only, WiFi
/// plus a narrowband interferer, narrowband only. Interferer gains follow
/// the training range.
inline EnergyGapResult energy_gap_study(const nn::Model& model, std::size_t n_portions, std::size_t windows_per_type,
                                        std::uint64_t seed, const EnergyDetectorConfig& ecfg = {}) {
    detail::require(windows_per_type >= 1, "windows_per_type must be positive");
    const auto spectrum = spectrum_for(n_portions);
    const std::size_t I = model.config.input_size;
    const auto opt = training_window_options();
    Classifier clf(model);
    std::size_t f_wifi = 0, f_both = 0, f_nb = 0, cnn_ok = 0;
    for (std::size_t w = 0; w < windows_per_type; ++w) {
        Rng rng(derive_seed(seed, {w, 0}));
        const std::size_t k = static_cast<std::size_t>(rng.below(n_portions));
        const std::vector<std::size_t> none, target{k};
        const auto wifi = cut_window(make_window_scene(spectrum, I, true, true, none, opt, derive_seed(seed, {w, 1})),
                                     I, kLegitOnlyClass);
        const auto both = cut_window(make_window_scene(spectrum, I, true, true, target, opt, derive_seed(seed, {w, 2})),
                                     I, static_cast<std::uint16_t>(portion_class(k)));
        const auto nb = cut_window(make_window_scene(spectrum, I, true, false, target, opt, derive_seed(seed, {w, 3})),
                                   I, static_cast<std::uint16_t>(portion_class(k)));
        f_wifi += energy_detect(wifi, spectrum, ecfg).flags[k];
        f_both += energy_detect(both, spectrum, ecfg).flags[k];
        f_nb += energy_detect(nb, spectrum, ecfg).flags[k];
        cnn_ok += clf.classify(wifi).top_class == kLegitOnlyClass;
        cnn_ok += clf.classify(both).top_class == portion_class(k);
    }
    const auto n = static_cast<double>(windows_per_type);
    EnergyGapResult r;
    r.windows_per_type = windows_per_type;
    r.flag_rate_wifi = static_cast<double>(f_wifi) / n;
    r.flag_rate_both = static_cast<double>(f_both) / n;
    r.flag_rate_narrowband = static_cast<double>(f_nb) / n;
    r.energy_wifi_vs_both = exp_detail::best_flag_rule(r.flag_rate_wifi, r.flag_rate_both);
    r.energy_wifi_vs_narrowband = exp_detail::best_flag_rule(r.flag_rate_wifi, r.flag_rate_narrowband);
    r.cnn_wifi_vs_both = static_cast<double>(cnn_ok) / (2.0 * n);
    return r;
}

} // namespace nbwatch
