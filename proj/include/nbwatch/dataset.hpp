#pragma once

// Balanced labeled IQ-window datasets, stratified 80/10/10 splits and the
// NBW1 binary container.
//
// Class layout for N spectrum portions (M = N + 2 classes):
//   0      no RF emissions (noise floor only)
//   1      legitimate OFDM traffic only
//   2 + k  legitimate traffic plus one narrowband interferer on portion k

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nbwatch/error.hpp"
#include "nbwatch/random.hpp"
#include "nbwatch/signalgen.hpp"

namespace nbwatch {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline constexpr std::size_t kNoEmissionClass = 0;
inline constexpr std::size_t kLegitOnlyClass = 1;
inline constexpr std::size_t kFirstPortionClass = 2;

inline std::size_t num_classes_for(std::size_t n_portions) { return n_portions + 2; }
inline std::size_t portion_class(std::size_t k) { return kFirstPortionClass + k; }
inline bool is_portion_class(std::size_t c) { return c >= kFirstPortionClass; }

inline std::string class_name(std::size_t c) {
    if (c == kNoEmissionClass) return "no-emissions";
    if (c == kLegitOnlyClass) return "legit-only";
    return "interference-p" + std::to_string(c - kFirstPortionClass);
}

/// One labeled window. Samples are interleaved (I, Q) float32 pairs; keeping
/// them in float32 makes the in-memory dataset identical to its file image.
struct IqWindow {
    std::vector<float> iq;
    std::uint16_t label = 0;

    std::size_t size() const { return iq.size() / 2; }
    bool operator==(const IqWindow&) const = default;
};

struct DatasetSplit {
    std::vector<std::uint64_t> train;
    std::vector<std::uint64_t> val;
    std::vector<std::uint64_t> test;

    bool empty() const { return train.empty() && val.empty() && test.empty(); }
    bool operator==(const DatasetSplit&) const = default;
};

struct LabeledDataset {
    SpectrumConfig spectrum;
    std::size_t input_size = 0;
    std::size_t num_classes = 0;
    std::vector<IqWindow> windows;
    DatasetSplit split;

    std::vector<std::size_t> class_counts() const {
        std::vector<std::size_t> counts(num_classes, 0);
        for (const auto& w : windows) ++counts.at(w.label);
        return counts;
    }

    bool operator==(const LabeledDataset&) const = default;
};

/// Knobs for rendering labeled windows.
struct WindowOptions {
    double gain_min = 0.3;
    double gain_max = 1.0;
    /// Overrides the random gain draw when set (gain-sweep test sets).
    std::optional<double> fixed_gain;
    /// Received OFDM level against the unit reference (interferer at gain 1).
    double legit_power_db = -10.0;
    Waveform waveform = Waveform::GaussianNoise;
    OfdmParams ofdm;

    void validate() const {
        detail::require(gain_min >= 0.0 && gain_max <= 1.0 && gain_min <= gain_max,
                        "gain range must satisfy 0 <= gain_min <= gain_max <= 1");
        if (fixed_gain) detail::require(*fixed_gain >= 0.0 && *fixed_gain <= 1.0, "fixed_gain must lie in [0, 1]");
        ofdm.validate();
    }
};

/// Scene behind one window plus the offset at which the window is cut from it.
struct WindowScene {
    SceneSpec scene;
    std::size_t total_samples = 0;
    std::size_t offset = 0;
};

/// Builds the scene for a window with legit traffic (optional) and
/// interferers on the given portions. The scene is rendered one OFDM symbol
/// longer than the window and the window start is drawn uniformly inside that
/// slack, so windows see every symbol phase.
inline WindowScene make_window_scene(const SpectrumConfig& spectrum, std::size_t input_size, bool emissions,
                                     bool legit, std::span<const std::size_t> portions, const WindowOptions& opt,
                                     std::uint64_t seed) {
    opt.validate();
    Rng rng(derive_seed(seed, {0xA11}));
    WindowScene ws;
    ws.total_samples = input_size + opt.ofdm.symbol_len();
    ws.offset = static_cast<std::size_t>(rng.below(opt.ofdm.symbol_len()));
    ws.scene.spectrum = spectrum;
    ws.scene.seed = derive_seed(seed, {0xB22});
    if (emissions && legit) {
        LegitSpec l;
        l.ofdm = opt.ofdm;
        l.bursts = {Burst{0, ws.total_samples}};
        l.power_db = opt.legit_power_db;
        ws.scene.legit = l;
    }
    if (emissions) {
        for (auto k : portions) {
            InterfererSpec itf;
            itf.portion_index = k;
            itf.waveform = opt.waveform;
            itf.gain = opt.fixed_gain ? *opt.fixed_gain : rng.uniform(opt.gain_min, opt.gain_max);
            itf.start_sample = 0;
            itf.duration_samples = ws.total_samples;
            ws.scene.interferers.push_back(itf);
        }
    }
    return ws;
}

inline WindowScene make_labeled_scene(const SpectrumConfig& spectrum, std::size_t input_size, std::size_t label,
                                      const WindowOptions& opt, std::uint64_t seed) {
    detail::require(label < num_classes_for(spectrum.n_portions), "label out of range");
    std::vector<std::size_t> portions;
    if (is_portion_class(label)) portions.push_back(label - kFirstPortionClass);
    return make_window_scene(spectrum, input_size, label != kNoEmissionClass, true, portions, opt, seed);
}

inline IqWindow cut_window(const WindowScene& ws, std::size_t input_size, std::uint16_t label) {
    const auto buf = compose_scene(ws.scene, ws.total_samples);
    IqWindow w;
    w.label = label;
    w.iq.resize(2 * input_size);
    for (std::size_t n = 0; n < input_size; ++n) {
        w.iq[2 * n] = static_cast<float>(buf.samples[ws.offset + n].real());
        w.iq[2 * n + 1] = static_cast<float>(buf.samples[ws.offset + n].imag());
    }
    return w;
}

/// Renders a single labeled window; pure in (arguments, seed).
inline IqWindow render_labeled_window(const SpectrumConfig& spectrum, std::size_t input_size, std::size_t label,
                                      const WindowOptions& opt, std::uint64_t seed) {
    return cut_window(make_labeled_scene(spectrum, input_size, label, opt, seed), input_size,
                      static_cast<std::uint16_t>(label));
}

/// per_class windows for each of the M classes, ordered by class.
inline LabeledDataset generate_dataset(const SpectrumConfig& spectrum, std::size_t input_size, std::size_t per_class,
                                       const WindowOptions& opt, std::uint64_t seed) {
    spectrum.validate();
    opt.validate();
    detail::require(input_size >= 1, "input_size must be positive");
    detail::require(per_class >= 1, "per_class must be >= 1");
    LabeledDataset ds;
    ds.spectrum = spectrum;
    ds.input_size = input_size;
    ds.num_classes = num_classes_for(spectrum.n_portions);
    ds.windows.reserve(ds.num_classes * per_class);
    for (std::size_t c = 0; c < ds.num_classes; ++c)
        for (std::size_t i = 0; i < per_class; ++i)
            ds.windows.push_back(render_labeled_window(spectrum, input_size, c, opt, derive_seed(seed, {c, i})));
    return ds;
}

inline LabeledDataset generate_dataset(const SpectrumConfig& spectrum, std::size_t input_size, std::size_t per_class,
                                       Waveform waveform, std::uint64_t seed) {
    WindowOptions opt;
    opt.waveform = waveform;
    return generate_dataset(spectrum, input_size, per_class, opt, seed);
}

/// Stratified 80/10/10 split. Within each class the windows are shuffled and
/// cut at round(0.8 n) and round(0.9 n), so every per-class share is within
/// one window of the exact proportion.
inline LabeledDataset split_dataset(LabeledDataset ds, std::uint64_t seed) {
    detail::require(!ds.windows.empty(), "cannot split an empty dataset");
    std::vector<std::vector<std::uint64_t>> by_class(ds.num_classes);
    for (std::uint64_t i = 0; i < ds.windows.size(); ++i) by_class.at(ds.windows[i].label).push_back(i);

    DatasetSplit split;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
        auto& idx = by_class[c];
        if (idx.empty()) continue;
        if (idx.size() < 10)
            throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                              " windows; at least 10 are needed to stratify");
        Rng rng(derive_seed(seed, {0x5B17, c}));
        rng.shuffle(idx.begin(), idx.end());
        const auto n = static_cast<double>(idx.size());
        const auto b1 = static_cast<std::size_t>(std::llround(0.8 * n));
        const auto b2 = static_cast<std::size_t>(std::llround(0.9 * n));
        split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(b1));
        split.val.insert(split.val.end(), idx.begin() + static_cast<std::ptrdiff_t>(b1),
                         idx.begin() + static_cast<std::ptrdiff_t>(b2));
        split.test.insert(split.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(b2), idx.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    ds.split = std::move(split);
    return ds;
}

/// Selects the windows named by an index list.
inline std::vector<const IqWindow*> select(const LabeledDataset& ds, std::span<const std::uint64_t> idx) {
    std::vector<const IqWindow*> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(&ds.windows.at(i));
    return out;
}

inline std::vector<const IqWindow*> all_windows(const LabeledDataset& ds) {
    std::vector<const IqWindow*> out;
    out.reserve(ds.windows.size());
    for (const auto& w : ds.windows) out.push_back(&w);
    return out;
}

// ---------------------------------------------------------------------------
// NBW1 container
//
//   offset  field
//   0       magic "NBW1"
//   4       version u16 (= 1)
//   6       input_size I u32
//   10      num_classes M u32
//   14      count u64
//   22      count x { I*2 f32 interleaved IQ, label u16 }
//   ...     train, val, test index arrays, each { n u64, n x u64 }
//   ...     spectrum trailer: magic "SPEC", channel_bandwidth_hz f64,
//           sample_rate_hz f64, noise_floor_db f64
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 4> kDatasetMagic{'N', 'B', 'W', '1'};
inline constexpr std::array<char, 4> kSpectrumMagic{'S', 'P', 'E', 'C'};
inline constexpr std::uint16_t kDatasetVersion = 1;

namespace detail {

class ByteWriter {
public:
    template <typename T>
    void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto* p = reinterpret_cast<const char*>(&v);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_raw(const void* data, std::size_t n) {
        const auto* p = static_cast<const char*>(data);
        bytes_.insert(bytes_.end(), p, p + n);
    }
    const std::vector<char>& bytes() const { return bytes_; }
    std::vector<char> take() { return std::move(bytes_); }

private:
    std::vector<char> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const char> data) : data_(data) {}

    template <typename T>
    T get(const char* what) {
        static_assert(std::is_trivially_copyable_v<T>);
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    void get_raw(void* out, std::size_t n, const char* what) {
        need(n, what);
        std::memcpy(out, data_.data() + pos_, n);
        pos_ += n;
    }
    void need(std::size_t n, const char* what) const {
        if (data_.size() - pos_ < n)
            throw FormatError(std::string("truncated file while reading ") + what, pos_);
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::span<const char> data_;
    std::size_t pos_ = 0;
};

inline std::vector<char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const char> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

/// FNV-1a, used for provenance hashes.
inline std::uint64_t fnv1a(std::span<const char> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace detail

inline std::vector<char> encode_dataset(const LabeledDataset& ds) {
    detail::ByteWriter w;
    w.put_raw(kDatasetMagic.data(), kDatasetMagic.size());
    w.put<std::uint16_t>(kDatasetVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.input_size));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ds.num_classes));
    w.put<std::uint64_t>(ds.windows.size());
    for (const auto& win : ds.windows) {
        if (win.iq.size() != 2 * ds.input_size) throw ShapeError("window length does not match dataset input_size");
        w.put_raw(win.iq.data(), win.iq.size() * sizeof(float));
        w.put<std::uint16_t>(win.label);
    }
    for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
        w.put<std::uint64_t>(part->size());
        w.put_raw(part->data(), part->size() * sizeof(std::uint64_t));
    }
    w.put_raw(kSpectrumMagic.data(), kSpectrumMagic.size());
    w.put<double>(ds.spectrum.channel_bandwidth_hz);
    w.put<double>(ds.spectrum.sample_rate_hz);
    w.put<double>(ds.spectrum.noise_floor_db);
    return w.take();
}

inline LabeledDataset decode_dataset(std::span<const char> bytes) {
    detail::ByteReader r(bytes);
    std::array<char, 4> magic{};
    r.get_raw(magic.data(), 4, "magic");
    if (magic != kDatasetMagic) throw FormatError("bad dataset magic (expected NBW1)", 0);
    const auto version_at = r.pos();
    const auto version = r.get<std::uint16_t>("version");
    if (version != kDatasetVersion)
        throw FormatError("unsupported dataset version " + std::to_string(version), version_at);

    LabeledDataset ds;
    ds.input_size = r.get<std::uint32_t>("input_size");
    ds.num_classes = r.get<std::uint32_t>("num_classes");
    if (ds.num_classes < 3) throw FormatError("num_classes must be at least 3", 10);
    const auto count_at = r.pos();
    const auto count = r.get<std::uint64_t>("window count");
    const std::size_t record = ds.input_size * 2 * sizeof(float) + sizeof(std::uint16_t);
    if (record != 0 && count > r.remaining() / record)
        throw FormatError("truncated file: header declares " + std::to_string(count) + " windows", count_at);

    ds.windows.resize(count);
    for (auto& win : ds.windows) {
        win.iq.resize(ds.input_size * 2);
        r.get_raw(win.iq.data(), win.iq.size() * sizeof(float), "window samples");
        const auto label_at = r.pos();
        win.label = r.get<std::uint16_t>("window label");
        if (win.label >= ds.num_classes)
            throw FormatError("label " + std::to_string(win.label) + " out of range", label_at);
    }
    for (auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
        const auto n_at = r.pos();
        const auto n = r.get<std::uint64_t>("split size");
        if (n > r.remaining() / sizeof(std::uint64_t)) throw FormatError("truncated split index array", n_at);
        part->resize(n);
        r.get_raw(part->data(), n * sizeof(std::uint64_t), "split indices");
        for (auto i : *part)
            if (i >= count) throw FormatError("split index out of range", n_at);
    }
    const auto spec_at = r.pos();
    std::array<char, 4> smagic{};
    r.get_raw(smagic.data(), 4, "spectrum trailer");
    if (smagic != kSpectrumMagic) throw FormatError("bad spectrum trailer magic", spec_at);
    ds.spectrum.channel_bandwidth_hz = r.get<double>("channel_bandwidth_hz");
    ds.spectrum.sample_rate_hz = r.get<double>("sample_rate_hz");
    ds.spectrum.noise_floor_db = r.get<double>("noise_floor_db");
    ds.spectrum.n_portions = ds.num_classes - 2;
    if (r.remaining() != 0) throw FormatError("trailing bytes after dataset", r.pos());
    return ds;
}

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
    const auto bytes = encode_dataset(ds);
    detail::write_file_bytes(path, bytes);
}

inline LabeledDataset load_dataset(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    return decode_dataset(bytes);
}

inline std::uint64_t dataset_hash(const LabeledDataset& ds) { return detail::fnv1a(encode_dataset(ds)); }

} // namespace nbwatch
