#pragma once

// Scene files and raw IQ files.
//
// Scene file: one `key = value` per line, `#` starts a comment. Keys:
//
//   seed                  u64
//   total_samples         samples to render
//   channel_bandwidth_hz  real
//   sample_rate_hz        real
//   n_portions            integer
//   noise_floor_db        real, or -inf for no noise
//   legit                 on | off
//   legit.n_subcarriers   integer
//   legit.cp_len          integer
//   legit.modulation      qpsk | bpsk
//   legit.power_db        real
//   legit.burst           <start> <duration>          (repeatable)
//   interferer            portion=<k> [waveform=gaussian|ofdm-pulse] [gain=<g>]
//                         [start=<n>] [duration=<n>] [bandwidth_hz=<hz>]
//                         (repeatable; duration defaults to the rest of the scene)
//
// Unset keys take the library defaults. Raw IQ files (.iq) are interleaved
// float32 little-endian I/Q pairs with no header.

#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "nbwatch/dataset.hpp"
#include "nbwatch/error.hpp"
#include "nbwatch/signalgen.hpp"

namespace nbwatch {

struct SceneFile {
    SceneSpec scene;
    std::size_t total_samples = 65536;
    bool operator==(const SceneFile&) const = default;
};

namespace scene_detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] inline void fail(std::size_t line, const std::string& msg) {
    throw ConfigError("scene file line " + std::to_string(line) + ": " + msg);
}

inline double to_real(const std::string& v, std::size_t line) {
    if (v == "-inf") return -std::numeric_limits<double>::infinity();
    double out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) fail(line, "expected a number, got '" + v + "'");
    return out;
}

inline std::uint64_t to_uint(const std::string& v, std::size_t line) {
    std::uint64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size())
        fail(line, "expected a nonnegative integer, got '" + v + "'");
    return out;
}

inline std::string fmt(double v) {
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

} // namespace scene_detail

inline SceneFile parse_scene(std::istream& in) {
    using namespace scene_detail;
    SceneFile f;
    bool legit_on = false;
    LegitSpec legit;
    struct PendingInterferer {
        InterfererSpec spec;
        bool has_duration = false;
        std::size_t line = 0;
    };
    std::vector<PendingInterferer> pending;

    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto hash = raw.find('#');
        const auto text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (text.empty()) continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos) fail(line, "expected key = value");
        const auto key = trim(text.substr(0, eq));
        const auto val = trim(text.substr(eq + 1));

        if (key == "seed") f.scene.seed = to_uint(val, line);
        else if (key == "total_samples") f.total_samples = to_uint(val, line);
        else if (key == "channel_bandwidth_hz") f.scene.spectrum.channel_bandwidth_hz = to_real(val, line);
        else if (key == "sample_rate_hz") f.scene.spectrum.sample_rate_hz = to_real(val, line);
        else if (key == "n_portions") f.scene.spectrum.n_portions = to_uint(val, line);
        else if (key == "noise_floor_db") f.scene.spectrum.noise_floor_db = to_real(val, line);
        else if (key == "legit") {
            if (val != "on" && val != "off") fail(line, "legit must be on or off");
            legit_on = val == "on";
        } else if (key == "legit.n_subcarriers") legit.ofdm.n_subcarriers = to_uint(val, line);
        else if (key == "legit.cp_len") legit.ofdm.cp_len = to_uint(val, line);
        else if (key == "legit.modulation") {
            if (val == "qpsk") legit.ofdm.modulation = Modulation::QPSK;
            else if (val == "bpsk") legit.ofdm.modulation = Modulation::BPSK;
            else fail(line, "modulation must be qpsk or bpsk");
        } else if (key == "legit.power_db") legit.power_db = to_real(val, line);
        else if (key == "legit.burst") {
            std::istringstream ss(val);
            std::string a, b, extra;
            if (!(ss >> a >> b) || (ss >> extra)) fail(line, "legit.burst needs <start> <duration>");
            legit.bursts.push_back({to_uint(a, line), to_uint(b, line)});
        } else if (key == "interferer") {
            PendingInterferer p;
            p.line = line;
            bool has_portion = false;
            std::istringstream ss(val);
            std::string field;
            while (ss >> field) {
                const auto e = field.find('=');
                if (e == std::string::npos) fail(line, "interferer fields are name=value");
                const auto name = field.substr(0, e), v = field.substr(e + 1);
                if (name == "portion") {
                    p.spec.portion_index = to_uint(v, line);
                    has_portion = true;
                } else if (name == "waveform") {
                    try {
                        p.spec.waveform = parse_waveform(v);
                    } catch (const ConfigError& err) {
                        fail(line, err.what());
                    }
                } else if (name == "gain") p.spec.gain = to_real(v, line);
                else if (name == "start") p.spec.start_sample = to_uint(v, line);
                else if (name == "duration") {
                    p.spec.duration_samples = to_uint(v, line);
                    p.has_duration = true;
                } else if (name == "bandwidth_hz") p.spec.bandwidth_hz = to_real(v, line);
                else fail(line, "unknown interferer field '" + name + "'");
            }
            if (!has_portion) fail(line, "interferer needs portion=<k>");
            pending.push_back(p);
        } else {
            fail(line, "unknown key '" + key + "'");
        }
    }

    if (legit_on) {
        if (legit.bursts.empty()) legit.bursts.push_back({0, f.total_samples});
        f.scene.legit = legit;
    }
    for (auto& p : pending) {
        if (!p.has_duration) {
            if (p.spec.start_sample >= f.total_samples) fail(p.line, "interferer starts after the scene ends");
            p.spec.duration_samples = f.total_samples - p.spec.start_sample;
        }
        f.scene.interferers.push_back(p.spec);
    }
    validate_scene(f.scene, f.total_samples);
    return f;
}

inline SceneFile parse_scene(const std::string& text) {
    std::istringstream in(text);
    return parse_scene(in);
}

inline SceneFile load_scene(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
    return parse_scene(in);
}

inline std::string format_scene(const SceneFile& f) {
    using scene_detail::fmt;
    std::ostringstream os;
    const auto& s = f.scene.spectrum;
    os << "seed = " << f.scene.seed << '\n'
       << "total_samples = " << f.total_samples << '\n'
       << "channel_bandwidth_hz = " << fmt(s.channel_bandwidth_hz) << '\n'
       << "sample_rate_hz = " << fmt(s.sample_rate_hz) << '\n'
       << "n_portions = " << s.n_portions << '\n'
       << "noise_floor_db = " << fmt(s.noise_floor_db) << '\n';
    if (f.scene.legit) {
        const auto& l = *f.scene.legit;
        if (!l.ofdm.active_subcarrier_mask.empty())
            throw ConfigError("scene files cannot express a custom subcarrier mask");
        os << "legit = on\n"
           << "legit.n_subcarriers = " << l.ofdm.n_subcarriers << '\n'
           << "legit.cp_len = " << l.ofdm.cp_len << '\n'
           << "legit.modulation = " << (l.ofdm.modulation == Modulation::QPSK ? "qpsk" : "bpsk") << '\n'
           << "legit.power_db = " << fmt(l.power_db) << '\n';
        for (const auto& b : l.bursts) os << "legit.burst = " << b.start << ' ' << b.duration << '\n';
    } else {
        os << "legit = off\n";
    }
    for (const auto& i : f.scene.interferers)
        os << "interferer = portion=" << i.portion_index << " waveform=" << to_string(i.waveform)
           << " gain=" << fmt(i.gain) << " start=" << i.start_sample << " duration=" << i.duration_samples
           << " bandwidth_hz=" << fmt(i.bandwidth_hz) << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------
// Raw IQ

inline std::vector<char> encode_iq(std::span<const Complex> x) {
    std::vector<char> out(x.size() * 2 * sizeof(float));
    for (std::size_t n = 0; n < x.size(); ++n) {
        const float v[2] = {static_cast<float>(x[n].real()), static_cast<float>(x[n].imag())};
        std::memcpy(out.data() + n * sizeof(v), v, sizeof(v));
    }
    return out;
}

inline std::vector<Complex> decode_iq(std::span<const char> bytes) {
    if (bytes.size() % (2 * sizeof(float)) != 0)
        throw FormatError("raw IQ length is not a whole number of float32 pairs", bytes.size());
    std::vector<Complex> x(bytes.size() / (2 * sizeof(float)));
    for (std::size_t n = 0; n < x.size(); ++n) {
        float v[2];
        std::memcpy(v, bytes.data() + n * sizeof(v), sizeof(v));
        x[n] = {v[0], v[1]};
    }
    return x;
}

inline void save_iq(std::span<const Complex> x, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_iq(x));
}

inline std::vector<Complex> load_iq(const std::filesystem::path& path) { return decode_iq(detail::read_file_bytes(path)); }

} // namespace nbwatch
