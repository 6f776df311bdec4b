#pragma once

// Model checkpoint format:
//
//   NBWMODEL 1
//   input_size=128
//   num_classes=6
//   conv_filters=16
//   conv_kernel=3
//   dense_units=1000
//   dropout_rate=0.5
//   tensor conv_w offset=0 count=96 shape=16x3x2
//   ... one line per tensor, offsets in bytes from the start of the blob ...
//   end_header
//   <float32 little-endian weight blob>
//
// The header is plain text so a checkpoint can be inspected with `head`.

#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "nbwatch/dataset.hpp"
#include "nbwatch/error.hpp"
#include "nbwatch/nn/model.hpp"

namespace nbwatch::nn {

inline constexpr const char* kModelMagic = "NBWMODEL 1";

namespace ckpt {

inline std::string format_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

inline std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
    return s;
}

inline std::size_t parse_size(const std::string& v, const std::string& key, std::uint64_t at) {
    std::size_t out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size())
        throw FormatError("bad integer for '" + key + "': " + v, at);
    return out;
}

inline double parse_real(const std::string& v, const std::string& key, std::uint64_t at) {
    double out = 0;
    auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size())
        throw FormatError("bad number for '" + key + "': " + v, at);
    return out;
}

struct ParsedHeader {
    ModelConfig config;
    std::map<std::string, std::pair<std::size_t, std::size_t>> tensors; // name -> (offset, count)
    std::map<std::string, std::string> shapes;
    std::size_t blob_start = 0;
};

/// Reads header lines from `in` until end_header. Does not touch the blob.
inline ParsedHeader parse_header(std::istream& in) {
    ParsedHeader h;
    std::string line;
    std::uint64_t at = 0;
    auto next = [&](const char* what) {
        if (!std::getline(in, line)) throw FormatError(std::string("truncated model header, expected ") + what, at);
        const auto here = at;
        at += line.size() + 1;
        return here;
    };
    next("magic");
    if (line != kModelMagic) throw FormatError("bad model magic (expected '" + std::string(kModelMagic) + "')", 0);

    std::map<std::string, std::string> kv;
    for (;;) {
        const auto line_at = next("end_header");
        if (line == "end_header") break;
        if (line.rfind("tensor ", 0) == 0) {
            std::istringstream ss(line.substr(7));
            std::string name, off, cnt, shp;
            ss >> name >> off >> cnt >> shp;
            if (off.rfind("offset=", 0) != 0 || cnt.rfind("count=", 0) != 0 || shp.rfind("shape=", 0) != 0)
                throw FormatError("malformed tensor line: " + line, line_at);
            h.tensors[name] = {parse_size(off.substr(7), "offset", line_at), parse_size(cnt.substr(6), "count", line_at)};
            h.shapes[name] = shp.substr(6);
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed header line: " + line, line_at);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    h.blob_start = at;

    auto need = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw FormatError("model header missing '" + key + "'", 0);
        return it->second;
    };
    h.config.input_size = parse_size(need("input_size"), "input_size", 0);
    h.config.num_classes = parse_size(need("num_classes"), "num_classes", 0);
    h.config.conv_filters = parse_size(need("conv_filters"), "conv_filters", 0);
    h.config.conv_kernel = parse_size(need("conv_kernel"), "conv_kernel", 0);
    h.config.dense_units = parse_size(need("dense_units"), "dense_units", 0);
    h.config.dropout_rate = parse_real(need("dropout_rate"), "dropout_rate", 0);
    try {
        h.config.validate();
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid model config: ") + e.what(), 0);
    }
    return h;
}

} // namespace ckpt

inline std::vector<char> encode_model(const Model& model) {
    model.config.validate();
    const auto& c = model.config;
    std::ostringstream hdr;
    hdr << kModelMagic << '\n'
        << "input_size=" << c.input_size << '\n'
        << "num_classes=" << c.num_classes << '\n'
        << "conv_filters=" << c.conv_filters << '\n'
        << "conv_kernel=" << c.conv_kernel << '\n'
        << "dense_units=" << c.dense_units << '\n'
        << "dropout_rate=" << ckpt::format_double(c.dropout_rate) << '\n';
    const auto shapes = tensor_shapes(c);
    const auto tensors = model.params.tensors();
    std::size_t offset = 0;
    for (std::size_t i = 0; i < kTensorCount; ++i) {
        const auto count = shape_count(shapes[i]);
        if (tensors[i]->size() != count) throw ShapeError(std::string("tensor ") + kTensorNames[i] + " has wrong size");
        hdr << "tensor " << kTensorNames[i] << " offset=" << offset << " count=" << count
            << " shape=" << ckpt::shape_string(shapes[i]) << '\n';
        offset += count * sizeof(float);
    }
    hdr << "end_header\n";

    const auto text = hdr.str();
    std::vector<char> out(text.begin(), text.end());
    out.reserve(out.size() + offset);
    for (const auto* t : tensors)
        for (double v : *t) {
            const float f = static_cast<float>(v);
            const auto* p = reinterpret_cast<const char*>(&f);
            out.insert(out.end(), p, p + sizeof(float));
        }
    return out;
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
    ::nbwatch::detail::write_file_bytes(path, encode_model(model));
}

/// Reads only the text header.
inline ModelConfig read_model_header(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string() + " for reading");
    return ckpt::parse_header(in).config;
}

struct ModelExpectation {
    std::optional<std::size_t> input_size{};
    std::optional<std::size_t> num_classes{};
};

inline Model decode_model(std::span<const char> bytes, const ModelExpectation& expect = {}) {
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    const auto h = ckpt::parse_header(in);
    if (expect.input_size && *expect.input_size != h.config.input_size)
        throw ShapeError("model expects input_size " + std::to_string(h.config.input_size) + " but " +
                         std::to_string(*expect.input_size) + " was requested");
    if (expect.num_classes && *expect.num_classes != h.config.num_classes)
        throw ShapeError("model has " + std::to_string(h.config.num_classes) + " classes but " +
                         std::to_string(*expect.num_classes) + " were requested");

    Model m;
    m.config = h.config;
    m.params = ParamSet::zeros(h.config);
    const auto shapes = tensor_shapes(h.config);
    auto tensors = m.params.tensors();
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < kTensorCount; ++i) {
        const auto it = h.tensors.find(kTensorNames[i]);
        if (it == h.tensors.end()) throw FormatError(std::string("missing tensor ") + kTensorNames[i], 0);
        const auto [offset, count] = it->second;
        if (count != shape_count(shapes[i]) || h.shapes.at(kTensorNames[i]) != ckpt::shape_string(shapes[i]))
            throw FormatError(std::string("tensor ") + kTensorNames[i] + " shape does not match config", 0);
        if (offset != expected_offset) throw FormatError(std::string("tensor ") + kTensorNames[i] + " misplaced", 0);
        const std::size_t at = h.blob_start + offset;
        if (at + count * sizeof(float) > bytes.size()) throw FormatError("truncated weight blob", bytes.size());
        for (std::size_t j = 0; j < count; ++j) {
            float f;
            std::memcpy(&f, bytes.data() + at + j * sizeof(float), sizeof(float));
            (*tensors[i])[j] = static_cast<double>(f);
        }
        expected_offset += count * sizeof(float);
    }
    if (h.blob_start + expected_offset != bytes.size())
        throw FormatError("trailing bytes after weight blob", h.blob_start + expected_offset);
    return m;
}

inline Model load_model(const std::filesystem::path& path, const ModelExpectation& expect = {}) {
    return decode_model(::nbwatch::detail::read_file_bytes(path), expect);
}

inline std::uint64_t model_hash(const Model& model) { return ::nbwatch::detail::fnv1a(encode_model(model)); }

} // namespace nbwatch::nn
