// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. `--only 1,2,11` runs a subset.

#include <chrono>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "nbwatch/dataset.hpp"
#include "nbwatch/detector.hpp"
#include "nbwatch/experiment.hpp"
#include "nbwatch/iqmirror.hpp"
#include "nbwatch/neuralnet.hpp"
#include "nbwatch/signalgen.hpp"

using namespace nbwatch;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

constexpr std::uint64_t kSeed = 1;

ExperimentRunner& runner() {
    static ExperimentRunner r(&std::cerr);
    return r;
}

// Training wall time per (N, I), recorded the first time each model is built.
std::map<std::pair<std::size_t, std::size_t>, double> train_seconds;

const TrainedCell& model_for(std::size_t N, std::size_t I, std::size_t per_class) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& t = runner().trained(N, I, per_class, kSeed);
    train_seconds.try_emplace({N, I}, seconds_since(t0));
    return t;
}

double test_accuracy(const TrainedCell& t) { return evaluate(t.model, all_windows(t.test_set)).accuracy; }

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(2024);
    double worst = 0.0;
    std::size_t unresolved = 0;
    for (int trial = 0; trial < 20; ++trial) {
        nn::ModelConfig c;
        c.input_size = rng.coin() ? 8 : 16;
        c.conv_filters = std::size_t{1} << rng.below(3);
        c.dense_units = 4 + rng.below(13);
        c.num_classes = 3 + rng.below(4);
        const auto model = nn::Model::init(c, 500 + static_cast<std::uint64_t>(trial));
        std::vector<IqWindow> ws(3);
        for (auto& w : ws) {
            w.iq.resize(2 * c.input_size);
            for (auto& v : w.iq) v = static_cast<float>(rng.normal());
            w.label = static_cast<std::uint16_t>(rng.below(c.num_classes));
        }
        std::vector<const IqWindow*> p;
        for (const auto& w : ws) p.push_back(&w);
        nn::GradCheckOptions opt;
        opt.h = 1e-4;
        if (trial % 2) opt.dropout_seed = 900 + static_cast<std::uint64_t>(trial);
        const auto r = nn::gradient_check(model, p, opt);
        worst = std::max(worst, r.worst());
        unresolved += r.unresolved;
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && unresolved == 0 && secs < 60.0,
            "20 configs, max rel err " + fmt(worst, 3) + ", unresolved kinks " + std::to_string(unresolved) + ", " +
                fmt(secs, 3) + " s"};
}

Outcome numerical_hygiene() {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(7);
    double worst = 0.0;
    bool finite = true;
    for (int i = 0; i < 100000; ++i) {
        const std::size_t M = 2 + rng.below(17);
        std::vector<double> z(M);
        const int mode = i % 4;
        for (auto& v : z) {
            if (mode == 0) v = rng.normal() * 3.0;
            else if (mode == 1) v = rng.uniform(-1e4, 1e4);
            else if (mode == 2) v = rng.coin() ? 1e300 * rng.uniform() : -1e300 * rng.uniform();
            else v = rng.coin() ? 745.0 : -745.0;
        }
        const auto p = nn::softmax(z);
        double sum = 0.0;
        for (double v : p) sum += v;
        worst = std::max(worst, std::abs(sum - 1.0));
        for (std::size_t t = 0; t < M; ++t)
            if (!std::isfinite(nn::cce_loss(p, t))) finite = false;
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-6 && finite && secs < 10.0, "1e5 vectors, max |sum-1| " + fmt(worst, 3) +
                                                        ", CCE finite: " + (finite ? "yes" : "no") + ", " +
                                                        fmt(secs, 3) + " s"};
}

Outcome spectral_containment() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 1.0;
    std::size_t checked = 0;
    for (std::size_t n : {4u, 16u}) {
        SpectrumConfig s;
        s.n_portions = n;
        for (std::size_t k = 0; k < n; ++k)
            for (auto w : {Waveform::GaussianNoise, Waveform::OfdmPulse}) {
                InterfererSpec itf;
                itf.portion_index = k;
                itf.waveform = w;
                itf.gain = 1.0;
                itf.duration_samples = 65536;
                auto X = synth_interferer(itf, s, 300 + k).samples;
                dsp::fft_inplace(X);
                const double center = portion_center_freq(k, s);
                double in = 0.0, total = 0.0;
                for (std::size_t b = 0; b < X.size(); ++b) {
                    const double pw = std::norm(X[b]);
                    total += pw;
                    if (std::abs(dsp::bin_frequency(b, X.size(), s.sample_rate_hz) - center) <= itf.bandwidth_hz / 2)
                        in += pw;
                }
                worst = std::min(worst, in / total);
                ++checked;
            }
    }
    const double secs = seconds_since(t0);
    return {worst >= 0.90 && secs < 60.0, std::to_string(checked) + " interferers, min in-band fraction " +
                                              fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

Outcome cnn4_accuracy() {
    const auto& big = model_for(4, 128, 5000);
    const double secs = train_seconds.at({4, 128});
    const double a128 = test_accuracy(big);
    const auto& small = model_for(4, 16, 5000);
    const double a16 = test_accuracy(small);
    return {a128 >= 0.95 && a16 >= 0.88 && secs <= 15 * 60,
            "I=128 acc " + fmt(a128) + " (>= 0.95) in " + fmt(secs / 60, 3) + " min (<= 15), best epoch " +
                std::to_string(big.train_report.best_epoch) + "/" + std::to_string(big.train_report.epochs_run) +
                "; I=16 acc " + fmt(a16) + " (>= 0.88); reference 0.995 / 0.955"};
}

Outcome cnn16_accuracy() {
    const auto& t = model_for(16, 128, 2000);
    const double secs = train_seconds.at({16, 128});
    const double acc = test_accuracy(t);
    return {acc >= 0.90 && secs <= 30 * 60, "I=128 acc " + fmt(acc) + " (>= 0.90) in " + fmt(secs / 60, 3) +
                                                " min (<= 30), best epoch " + std::to_string(t.train_report.best_epoch) +
                                                "/" + std::to_string(t.train_report.epochs_run) + "; reference 0.988"};
}

Outcome gain_trend() {
    struct M {
        std::size_t N, I, per_class;
    };
    bool pass = true;
    std::string detail;
    for (const M m : {M{4, 128, 5000}, M{4, 16, 5000}, M{16, 128, 2000}}) {
        model_for(m.N, m.I, m.per_class);
        auto spec = ExperimentSpec::defaults(ExperimentName::GainSweep);
        spec.n_portions = {m.N};
        spec.input_sizes = {m.I};
        spec.per_class = m.per_class;
        spec.seeds = {kSeed};
        const auto r = runner().run(spec);
        if (!r.complete()) return {false, "gain sweep failed: " + r.cells.back().error};
        const std::string base = exp_detail::cell_id(m.N, m.I, kSeed) + "_g";
        auto acc = [&](const char* g) { return r.cell(base + g).metric("accuracy"); };
        const double a001 = acc("0.01"), a05 = acc("0.5"), a066 = acc("0.66"), a099 = acc("0.99");
        const bool ok = a099 - a001 >= 0.05 && a05 >= a001 && a066 >= a001 && a099 >= a001;
        pass = pass && ok;
        detail += (detail.empty() ? "" : "; ") + std::string("CNN") + std::to_string(m.N) + " I=" +
                  std::to_string(m.I) + " acc@{.01,.33,.5,.66,.99}=" + fmt(a001, 3) + "," + fmt(acc("0.33"), 3) +
                  "," + fmt(a05, 3) + "," + fmt(a066, 3) + "," + fmt(a099, 3);
    }
    return {pass, detail};
}

Outcome multi_signal() {
    const auto& t = model_for(4, 16, 5000);
    const auto m = exp_detail::multi_signal_cell(t.model, 4, 2, 500, 0.15, derive_seed(kSeed, {4, 16, 12, 2}));
    return {m.exact_match >= 0.70 && m.true_mass >= 0.70,
            "k=2, 500 windows: exact " + fmt(m.exact_match) + " (>= 0.70), true mass " + fmt(m.true_mass) +
                " (>= 0.70), top-2 " + fmt(m.topk_match) + ", recall " + fmt(m.recall) + "; reference mass 0.93"};
}

Outcome unseen_waveform() {
    model_for(4, 16, 5000);
    auto spec = ExperimentSpec::defaults(ExperimentName::UnseenWaveform);
    spec.n_portions = {4};
    spec.input_sizes = {16};
    spec.seeds = {kSeed};
    const auto r = runner().run(spec);
    if (!r.complete()) return {false, "run failed"};
    const auto& c = r.cells.at(0);
    const double g = c.metric("gaussian_accuracy"), p = c.metric("ofdm_pulse_accuracy");
    const bool untouched = c.provenance.at("training_manifest").get<std::string>().find("waveform=gaussian\n") !=
                           std::string::npos;
    return {untouched && p >= 0.60 && g - p <= 0.25,
            "CNN4 I=16 gaussian " + fmt(g) + ", ofdm-pulse " + fmt(p) + " (>= 0.60, gap <= 0.25); reference 0.96/0.83"};
}

Outcome latency() {
    const auto a = bench_latency(model_for(4, 16, 5000).model, 1000, 50, 3);
    const auto b = bench_latency(model_for(4, 128, 5000).model, 1000, 50, 3);
    return {a.p50_ns < b.p50_ns && a.p50_ns < 1e6,
            "p50 I=16 " + fmt(a.p50_ns / 1e6) + " ms, I=128 " + fmt(b.p50_ns / 1e6) +
                " ms (1000 trials); reference 0.093 / 1.205 ms"};
}

std::string mask_column(const std::string& csv, const std::string& column) {
    std::istringstream in(csv);
    std::string line, out;
    std::size_t col = std::string::npos;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
        if (col == std::string::npos)
            col = static_cast<std::size_t>(std::find(f.begin(), f.end(), column) - f.begin());
        else if (col < f.size())
            f[col] = "*";
        for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
        out += '\n';
    }
    return out;
}

Outcome bit_exactness() {
    const auto dir = std::filesystem::temp_directory_path() / "nbwatch_acceptance";
    std::filesystem::create_directories(dir);
    std::vector<std::string> notes;
    bool pass = true;

    const auto ds = split_dataset(generate_dataset(SpectrumConfig{}, 32, 50, Waveform::OfdmPulse, 5), 6);
    save_dataset(ds, dir / "ds.nbw");
    const auto ds_bytes = detail::read_file_bytes(dir / "ds.nbw");
    const bool ds_ok = encode_dataset(load_dataset(dir / "ds.nbw")) == ds_bytes && ds_bytes == encode_dataset(ds);
    pass = pass && ds_ok;
    notes.push_back(std::string("dataset ") + (ds_ok ? "ok" : "MISMATCH"));

    ExperimentRunner quiet;
    const auto& t = quiet.trained(4, 16, 100, 9, 5, 5);
    nn::save_model(t.model, dir / "m.nbm");
    const auto m_bytes = detail::read_file_bytes(dir / "m.nbm");
    const bool m_ok = nn::encode_model(nn::load_model(dir / "m.nbm")) == m_bytes && nn::load_model(dir / "m.nbm") == t.model;
    pass = pass && m_ok;
    notes.push_back(std::string("model ") + (m_ok ? "ok" : "MISMATCH"));

    for (auto name : {ExperimentName::GainSweep, ExperimentName::UnseenWaveform, ExperimentName::MultiSignal,
                      ExperimentName::AccVsInput}) {
        auto spec = ExperimentSpec::defaults(name);
        spec.n_portions = {4};
        spec.input_sizes = {16};
        spec.per_class = 100;
        spec.max_epochs = 5;
        spec.multi_windows = 50;
        spec.latency_trials = 100;
        std::string csv[2];
        for (int run = 0; run < 2; ++run) {
            spec.output_dir = dir / ("run" + std::to_string(run));
            ExperimentRunner fresh;
            fresh.run(spec);
            std::ifstream in(spec.output_dir / (std::string(to_string(name)) + ".csv"), std::ios::binary);
            csv[run].assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
        }
        // Wall-clock latency is the one column that cannot repeat.
        const bool timed = name == ExperimentName::AccVsInput;
        const bool same = timed ? mask_column(csv[0], "latency_p50_ns") == mask_column(csv[1], "latency_p50_ns")
                                : csv[0] == csv[1];
        pass = pass && same && !csv[0].empty();
        notes.push_back(std::string(to_string(name)) + (timed ? " csv (latency masked) " : " csv ") +
                        (same ? "identical" : "DIFFERS"));
    }
    std::string detail;
    for (const auto& n : notes) detail += (detail.empty() ? "" : ", ") + n;
    return {pass, detail};
}

Outcome mirror_conservation() {
    Rng rng(11);
    std::size_t violations = 0;
    for (int trial = 0; trial < 500; ++trial) {
        MirrorConfig c;
        c.window_size = 1 + rng.below(64);
        c.extraction_stride = 1 + rng.below(96);
        c.capacity = c.window_size + 128 + rng.below(256);
        IqMirror m(c);
        std::uint64_t accepted = 0;
        std::vector<Complex> chunk;
        for (int step = 0; step < 100; ++step) {
            while (m.residual() + 64 > static_cast<std::int64_t>(c.capacity)) m.next_window();
            chunk.assign(1 + rng.below(64), Complex{1.0, 0.0});
            accepted += m.push(chunk);
            if (rng.coin())
                while (m.next_window()) {}
        }
        const auto s = m.stats();
        if (s.samples_dropped != 0 || s.samples_accepted != accepted ||
            static_cast<std::int64_t>(s.windows_emitted * c.stride()) + m.residual() != static_cast<std::int64_t>(accepted))
            ++violations;
    }

    // Concurrent stress: each sample carries its stream index.
    MirrorConfig c;
    c.window_size = 32;
    c.extraction_stride = 16;
    c.capacity = 1024;
    IqMirror m(c);
    const std::uint64_t total = 4'000'000;
    std::atomic<bool> done{false};
    std::uint64_t broken = 0, windows = 0;
    std::thread consumer([&] {
        for (;;) {
            const bool finished = done.load(std::memory_order_acquire);
            const auto w = m.next_window();
            if (!w) {
                if (finished) return;
                std::this_thread::yield();
                continue;
            }
            ++windows;
            for (std::size_t i = 0; i < c.window_size; ++i) {
                const auto idx = static_cast<std::uint64_t>(w->window.iq[2 * i]) |
                                 (static_cast<std::uint64_t>(w->window.iq[2 * i + 1]) << 16);
                if (idx != w->start + i) {
                    ++broken;
                    break;
                }
            }
        }
    });
    std::vector<Complex> chunk;
    for (std::uint64_t pos = 0; pos < total;) {
        const auto n = std::min<std::uint64_t>(1 + rng.below(48), total - pos);
        chunk.resize(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const auto k = pos + i;
            chunk[i] = {static_cast<double>(k & 0xFFFF), static_cast<double>(k >> 16)};
        }
        m.push(chunk);
        pos += n;
        // Give the consumer a turn now and then; a single core would otherwise
        // run the producer for a whole time slice.
        if (rng.below(16) == 0) std::this_thread::yield();
    }
    done.store(true, std::memory_order_release);
    consumer.join();
    return {violations == 0 && broken == 0 && windows > 0,
            "500 schedules, conservation violations " + std::to_string(violations) + "; stress " +
                std::to_string(total) + " samples, " + std::to_string(windows) + " windows, non-contiguous " +
                std::to_string(broken) + ", dropped " + std::to_string(m.stats().samples_dropped)};
}

Outcome energy_gap() {
    const auto& t = model_for(4, 128, 5000);
    const auto r = energy_gap_study(t.model, 4, 500, derive_seed(kSeed, {99}));
    const bool chance = r.energy_wifi_vs_both <= 0.55 && r.energy_wifi_vs_narrowband <= 0.55;
    return {chance && r.cnn_wifi_vs_both > 0.9,
            "energy flag on target portion: wifi-vs-(wifi+nb) " + fmt(r.energy_wifi_vs_both) + ", wifi-vs-nb " +
                fmt(r.energy_wifi_vs_narrowband) + " (chance 0.5, limit 0.55; flag rates " + fmt(r.flag_rate_wifi, 3) +
                "/" + fmt(r.flag_rate_both, 3) + "/" + fmt(r.flag_rate_narrowband, 3) + "); CNN wifi-vs-(wifi+nb) " +
                fmt(r.cnn_wifi_vs_both) + " (> 0.9)"};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    std::string results = "acceptance_results.txt";
    app.add_option("--only", only, "Criteria to run (default all)")->delimiter(',');
    app.add_option("--results", results, "Also write the PASS/FAIL lines here")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"numerical hygiene", numerical_hygiene},
        {"spectral containment", spectral_containment},
        {"CNN4 desk-scale accuracy", cnn4_accuracy},
        {"CNN16 desk-scale accuracy", cnn16_accuracy},
        {"gain trend", gain_trend},
        {"multi-signal recovery", multi_signal},
        {"unseen-waveform generalization", unseen_waveform},
        {"latency ordering and bound", latency},
        {"bit-exactness", bit_exactness},
        {"IQ mirror conservation", mirror_conservation},
        {"energy-baseline gap", energy_gap},
    };
    const std::set<int> selected(only.begin(), only.end());

    std::ofstream out(results);
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::ostringstream line;
        line << (o.pass ? "PASS" : "FAIL") << " [" << std::setw(2) << id << "] " << criteria[i].first << ": "
             << o.detail << " (" << fmt(seconds_since(t0), 3) << " s)";
        std::cout << line.str() << std::endl;
        out << line.str() << std::endl;
        failures += !o.pass;
    }
    std::cout << (failures ? "acceptance: " + std::to_string(failures) + " criteria failed" : "acceptance: all passed")
              << std::endl;
    return failures ? 1 : 0;
}
