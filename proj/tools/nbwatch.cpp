// nbwatch command-line tool. Run `nbwatch <command> --help` for flags.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nbwatch/dataset.hpp"
#include "nbwatch/detector.hpp"
#include "nbwatch/experiment.hpp"
#include "nbwatch/iqmirror.hpp"
#include "nbwatch/neuralnet.hpp"
#include "nbwatch/scene_io.hpp"

using namespace nbwatch;

namespace {

constexpr int kExitIncomplete = 3;

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out.flush()) throw std::runtime_error("write to " + path.string() + " failed");
}

std::span<const std::uint64_t> pick_split(const LabeledDataset& ds, const std::string& name,
                                          std::vector<std::uint64_t>& all) {
    if (name == "train") return ds.split.train;
    if (name == "val") return ds.split.val;
    if (name == "test") return ds.split.test;
    all.resize(ds.windows.size());
    for (std::uint64_t i = 0; i < all.size(); ++i) all[i] = i;
    return all;
}

struct GenArgs {
    std::size_t n_portions = 4, input_size = 128, per_class = 5000;
    std::string waveform = "gaussian";
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_gen(const GenArgs& a) {
    SpectrumConfig s;
    s.n_portions = a.n_portions;
    auto ds = generate_dataset(s, a.input_size, a.per_class, parse_waveform(a.waveform), derive_seed(a.seed, {1}));
    ds = split_dataset(std::move(ds), derive_seed(a.seed, {2}));
    save_dataset(ds, a.out);
    std::cerr << "wrote " << ds.windows.size() << " windows (" << ds.split.train.size() << "/" << ds.split.val.size()
              << "/" << ds.split.test.size() << ") to " << a.out << ", hash " << exp_detail::hex64(dataset_hash(ds))
              << "\n";
    return 0;
}

struct TrainArgs {
    std::string dataset, out_model, report_json;
    std::optional<std::size_t> input_size, n_portions;
    std::uint64_t seed = 1;
    std::size_t max_epochs = 100, patience = 5, batch = 64;
    double lr = 0.01;
    std::size_t filters = 16, dense = 1000;
};

int cmd_train(const TrainArgs& a) {
    const auto ds = load_dataset(a.dataset);
    if (a.input_size && *a.input_size != ds.input_size)
        throw ShapeError("--input-size " + std::to_string(*a.input_size) + " but dataset windows hold " +
                         std::to_string(ds.input_size) + " samples");
    if (a.n_portions && num_classes_for(*a.n_portions) != ds.num_classes)
        throw ShapeError("--n-portions " + std::to_string(*a.n_portions) + " does not match the dataset's " +
                         std::to_string(ds.num_classes) + " classes");
    nn::ModelConfig mc;
    mc.input_size = ds.input_size;
    mc.num_classes = ds.num_classes;
    mc.conv_filters = a.filters;
    mc.dense_units = a.dense;
    nn::TrainConfig tc;
    tc.learning_rate = a.lr;
    tc.batch_size = a.batch;
    tc.max_epochs = a.max_epochs;
    tc.early_stop_patience = a.patience;
    tc.seed = a.seed;
    auto [model, report] = nn::train(mc, tc, ds, [](std::size_t epoch, const nn::EpochStats& s) {
        std::cerr << "epoch " << epoch << " loss " << s.train_loss << " acc " << s.train_accuracy << " val_loss "
                  << s.val_loss << " val_acc " << s.val_accuracy << "\n";
    });
    nn::save_model(model, a.out_model);
    const auto test = evaluate(model, ds, ds.split.test);
    std::cerr << "best epoch " << report.best_epoch << ", test accuracy " << test.accuracy << "\n";
    if (!a.report_json.empty()) {
        Json j;
        j["dataset"] = a.dataset;
        j["dataset_hash"] = exp_detail::hex64(dataset_hash(ds));
        j["model"] = a.out_model;
        j["model_hash"] = exp_detail::hex64(nn::model_hash(model));
        j["seed"] = a.seed;
        j["test_accuracy"] = test.accuracy;
        j["test_confusion"] = test.confusion;
        j["training"] = ExperimentRunner::train_report_json(report);
        write_text(a.report_json, j.dump(2) + "\n");
    }
    return 0;
}

struct EvalArgs {
    std::string model, dataset, split = "test", confusion_csv;
};

int cmd_eval(const EvalArgs& a) {
    const auto ds = load_dataset(a.dataset);
    const auto model = nn::load_model(a.model, {.input_size = ds.input_size, .num_classes = ds.num_classes});
    std::vector<std::uint64_t> all;
    const auto idx = pick_split(ds, a.split, all);
    const auto ev = evaluate(model, ds, idx);
    if (!a.confusion_csv.empty()) write_text(a.confusion_csv, confusion_csv(ev));
    Json j;
    j["split"] = a.split;
    j["windows"] = ev.count;
    j["accuracy"] = ev.accuracy;
    j["confusion"] = ev.confusion;
    std::cout << j.dump() << "\n";
    return 0;
}

struct DetectArgs {
    std::string model, in = "-";
    std::size_t stride = 0, capacity = 1 << 16;
    double threshold = kDefaultMultiThreshold;
};

int cmd_detect(const DetectArgs& a) {
    const auto model = nn::load_model(a.model);
    MirrorConfig mcfg;
    mcfg.window_size = model.config.input_size;
    mcfg.extraction_stride = a.stride;
    mcfg.capacity = std::max(a.capacity, 2 * mcfg.window_size);
    IqMirror mirror(mcfg);
    Classifier clf(model, a.threshold);

    std::ifstream file;
    std::istream* in = &std::cin;
    if (a.in != "-") {
        file.open(a.in, std::ios::binary);
        if (!file) throw std::runtime_error("cannot open " + a.in);
        in = &file;
    }

    // Reads stay below half the ring so draining after every push loses nothing.
    const std::size_t chunk_samples = std::max<std::size_t>(1, mcfg.capacity / 2 - mcfg.window_size);
    std::vector<char> bytes;
    std::vector<char> carry;
    std::uint64_t index = 0;
    for (;;) {
        bytes.assign(carry.begin(), carry.end());
        const std::size_t have = bytes.size();
        bytes.resize(chunk_samples * 8);
        in->read(bytes.data() + have, static_cast<std::streamsize>(bytes.size() - have));
        const std::size_t got = have + static_cast<std::size_t>(in->gcount());
        const std::size_t whole = got / 8 * 8;
        carry.assign(bytes.begin() + static_cast<std::ptrdiff_t>(whole), bytes.begin() + static_cast<std::ptrdiff_t>(got));
        if (whole > 0) mirror.push(decode_iq(std::span<const char>(bytes.data(), whole)));
        while (auto w = mirror.next_window()) {
            const auto r = clf.classify(w->window);
            Json j;
            j["window"] = index++;
            j["start"] = w->start;
            j["class_index"] = r.top_class;
            j["class_name"] = class_name(r.top_class);
            j["probs"] = r.probs;
            j["portions"] = r.interfered_portions;
            j["latency_ns"] = r.latency_ns;
            std::cout << j.dump() << "\n";
        }
        if (!*in) break;
    }
    std::cout.flush();
    const auto s = mirror.stats();
    std::cerr << "samples " << s.samples_accepted << ", windows " << s.windows_emitted << ", dropped "
              << s.samples_dropped << (carry.empty() ? "" : ", trailing partial sample ignored") << "\n";
    return 0;
}

struct BenchArgs {
    std::string model;
    std::size_t n_portions = 4, input_size = 16, trials = 1000;
    std::uint64_t seed = 1;
};

int cmd_bench(const BenchArgs& a) {
    const auto model = a.model.empty() ? nn::Model::init(model_config_for(a.n_portions, a.input_size), a.seed)
                                       : nn::load_model(a.model);
    const auto s = bench_latency(model, a.trials, 50, a.seed);
    Json j;
    j["input_size"] = model.config.input_size;
    j["num_classes"] = model.config.num_classes;
    j["weights"] = a.model.empty() ? "initialized" : a.model;
    j["trials"] = s.trials;
    j["latency_p50_ns"] = s.p50_ns;
    j["latency_p95_ns"] = s.p95_ns;
    j["latency_mean_ns"] = s.mean_ns;
    j["latency_min_ns"] = s.min_ns;
    j["latency_max_ns"] = s.max_ns;
    std::cout << j.dump() << "\n";
    return 0;
}

struct ExperimentArgs {
    std::string name;
    std::vector<std::size_t> n_portions, input_sizes;
    std::optional<std::size_t> per_class, max_epochs, eval_per_class, multi_windows, trials;
    std::vector<std::uint64_t> seeds;
    std::string out = "results", model_dir;
    bool quiet = false;
};

int cmd_experiment(const ExperimentArgs& a) {
    auto spec = ExperimentSpec::defaults(parse_experiment_name(a.name));
    if (!a.n_portions.empty()) spec.n_portions = a.n_portions;
    if (!a.input_sizes.empty()) spec.input_sizes = a.input_sizes;
    if (!a.seeds.empty()) spec.seeds = a.seeds;
    if (a.per_class) spec.per_class = *a.per_class;
    if (a.max_epochs) spec.max_epochs = *a.max_epochs;
    if (a.eval_per_class) spec.eval_per_class = *a.eval_per_class;
    if (a.multi_windows) spec.multi_windows = *a.multi_windows;
    if (a.trials) spec.latency_trials = *a.trials;
    spec.output_dir = a.out;
    spec.model_dir = a.model_dir.empty() ? std::filesystem::path(a.out) / "models" : std::filesystem::path(a.model_dir);
    const auto report = run_experiment(spec, a.quiet ? nullptr : &std::cerr);
    std::cout << report_csv(report);
    if (!report.complete()) {
        std::cerr << "experiment incomplete; partial report in " << a.out << "\n";
        return kExitIncomplete;
    }
    return 0;
}

struct RenderArgs {
    std::string scene, out;
};

int cmd_render(const RenderArgs& a) {
    const auto f = load_scene(a.scene);
    const auto buf = compose_scene(f.scene, f.total_samples);
    save_iq(buf.view(), a.out);
    std::cerr << "wrote " << buf.size() << " samples to " << a.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Narrowband interference detection on wideband OFDM IQ streams"};
    app.require_subcommand(1);
    std::function<int()> action;

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a labeled synthetic dataset (.nbw)");
    g->add_option("--n-portions", gen.n_portions, "Spectrum portions N")->capture_default_str();
    g->add_option("--input-size", gen.input_size, "IQ samples per window")->capture_default_str();
    g->add_option("--per-class", gen.per_class, "Windows per class")->capture_default_str();
    g->add_option("--waveform", gen.waveform, "Interferer waveform: gaussian | ofdm-pulse")->capture_default_str();
    g->add_option("--seed", gen.seed, "Seed")->capture_default_str();
    g->add_option("--out", gen.out, "Output dataset file")->required();
    g->callback([&] { action = [&] { return cmd_gen(gen); }; });

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train the classifier on a dataset");
    t->add_option("--dataset", tr.dataset, "Dataset file")->required();
    t->add_option("--input-size", tr.input_size, "Expected window size (checked against the dataset)");
    t->add_option("--n-portions", tr.n_portions, "Expected portion count (checked against the dataset)");
    t->add_option("--seed", tr.seed, "Training seed")->capture_default_str();
    t->add_option("--out-model", tr.out_model, "Output model file")->required();
    t->add_option("--report-json", tr.report_json, "Write training history and test metrics here");
    t->add_option("--max-epochs", tr.max_epochs, "Epoch cap")->capture_default_str();
    t->add_option("--patience", tr.patience, "Early-stopping patience")->capture_default_str();
    t->add_option("--batch", tr.batch, "Mini-batch size")->capture_default_str();
    t->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
    t->add_option("--filters", tr.filters, "Convolution filters")->capture_default_str();
    t->add_option("--dense", tr.dense, "Hidden dense units")->capture_default_str();
    t->callback([&] { action = [&] { return cmd_train(tr); }; });

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Evaluate a model on a dataset split");
    e->add_option("--model", ev.model, "Model file")->required();
    e->add_option("--dataset", ev.dataset, "Dataset file")->required();
    e->add_option("--split", ev.split, "train | val | test | all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}))
        ->capture_default_str();
    e->add_option("--confusion-csv", ev.confusion_csv, "Write the confusion matrix here");
    e->callback([&] { action = [&] { return cmd_eval(ev); }; });

    DetectArgs de;
    auto* d = app.add_subcommand("detect", "Classify a raw f32 IQ stream window by window (JSON lines)");
    d->add_option("--model", de.model, "Model file")->required();
    d->add_option("--in", de.in, "Raw interleaved f32 IQ file, or - for stdin")->capture_default_str();
    d->add_option("--stride", de.stride, "Samples between window starts; 0 = window size")->capture_default_str();
    d->add_option("--threshold", de.threshold, "Multi-signal softmax threshold")->capture_default_str();
    d->add_option("--capacity", de.capacity, "Ring capacity in samples")->capture_default_str();
    d->callback([&] { action = [&] { return cmd_detect(de); }; });

    BenchArgs be;
    auto* b = app.add_subcommand("bench", "Single-window inference latency");
    b->add_option("--model", be.model, "Model file; omitted = freshly initialized weights");
    b->add_option("--n-portions", be.n_portions, "Portions when no model is given")->capture_default_str();
    b->add_option("--input-size", be.input_size, "Window size when no model is given")->capture_default_str();
    b->add_option("--trials", be.trials, "Timed forward passes (>= 100)")->capture_default_str();
    b->add_option("--seed", be.seed, "Seed for weights and input")->capture_default_str();
    b->callback([&] { action = [&] { return cmd_bench(be); }; });

    ExperimentArgs ex;
    auto* x = app.add_subcommand("experiment", "Run a study and write CSV, JSON and plot data");
    x->add_option("name", ex.name, "acc_vs_input | gain_sweep | multi_signal | unseen_waveform | latency_bench")
        ->required();
    x->add_option("--n-portions", ex.n_portions, "Portion counts (default 4 16)");
    x->add_option("--input-sizes", ex.input_sizes, "Window sizes (default depends on the study)");
    x->add_option("--per-class", ex.per_class, "Training windows per class (default 5000)");
    x->add_option("--seeds", ex.seeds, "Seeds (default 1)");
    x->add_option("--out", ex.out, "Output directory")->capture_default_str();
    x->add_option("--model-dir", ex.model_dir, "Trained-model cache (default <out>/models)");
    x->add_option("--max-epochs", ex.max_epochs, "Epoch cap (default 100)");
    x->add_option("--eval-per-class", ex.eval_per_class, "Evaluation windows per class (default per_class / 10)");
    x->add_option("--multi-windows", ex.multi_windows, "Windows per interferer count (default 500)");
    x->add_option("--trials", ex.trials, "Latency trials (default 1000)");
    x->add_flag("--quiet", ex.quiet, "No progress on stderr");
    x->callback([&] { action = [&] { return cmd_experiment(ex); }; });

    RenderArgs re;
    auto* r = app.add_subcommand("render", "Render a scene file to raw f32 IQ");
    r->add_option("--scene", re.scene, "Scene file")->required();
    r->add_option("--out", re.out, "Output .iq file")->required();
    r->callback([&] { action = [&] { return cmd_render(re); }; });

    CLI11_PARSE(app, argc, argv);
    try {
        return action();
    } catch (const std::exception& err) {
        std::cerr << "nbwatch: " << err.what() << "\n";
        return 1;
    }
}
