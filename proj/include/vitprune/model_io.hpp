#pragma once

// Weight container, seeded random weights and PPM image I/O.
//
// Weights file layout:
//   "VPW1" | u32 little-endian manifest length | manifest (JSON) | payload
// The manifest holds format_version, the model config, the input
// normalization constants and one entry per tensor with its shape, byte
// offset (relative to the payload start) and byte length. The payload is
// little-endian float32.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vitprune/config.hpp"
#include "vitprune/image.hpp"
#include "vitprune/model.hpp"

namespace vitprune {

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// File contents are malformed or inconsistent.
class FormatError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

inline constexpr char kWeightsMagic[4] = {'V', 'P', 'W', '1'};
inline constexpr int kWeightsFormatVersion = 1;

inline std::vector<char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading " + path.string());
    return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing " + path.string());
}

// ---------------------------------------------------------------- config json

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
    return {
        {"image_size", cfg.image_size},
        {"patch_size", cfg.patch_size},
        {"stride", cfg.stride},
        {"embed_dim", cfg.embed_dim},
        {"qkv_dim", cfg.qkv_dim},
        {"heads", cfg.heads},
        {"depth", cfg.depth},
        {"mlp_ratio", cfg.mlp_ratio},
        {"num_classes", cfg.num_classes},
        {"layernorm_eps", cfg.layernorm_eps},
        {"prune_blocks", cfg.prune_blocks},
        {"keep_rate", cfg.keep_rate},
        {"indicator", std::string(to_string(cfg.indicator))},
        {"fusion", cfg.fusion},
        {"temperature", cfg.temperature},
    };
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.image_size = j.at("image_size").get<std::size_t>();
        cfg.patch_size = j.at("patch_size").get<std::size_t>();
        cfg.stride = j.at("stride").get<std::size_t>();
        cfg.embed_dim = j.at("embed_dim").get<std::size_t>();
        cfg.qkv_dim = j.at("qkv_dim").get<std::size_t>();
        cfg.heads = j.at("heads").get<std::size_t>();
        cfg.depth = j.at("depth").get<std::size_t>();
        cfg.mlp_ratio = j.at("mlp_ratio").get<double>();
        cfg.num_classes = j.at("num_classes").get<std::size_t>();
        cfg.layernorm_eps = j.value("layernorm_eps", kDefaultLayerNormEps);
        cfg.prune_blocks = j.value("prune_blocks", cfg.prune_blocks);
        cfg.keep_rate = j.value("keep_rate", cfg.keep_rate);
        const auto ind = parse_indicator(j.value("indicator", std::string(to_string(cfg.indicator))));
        if (!ind) throw FormatError("config: unknown indicator");
        cfg.indicator = *ind;
        cfg.fusion = j.value("fusion", cfg.fusion);
        cfg.temperature = j.value("temperature", cfg.temperature);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------- weights

struct LoadedModel {
    ModelConfig config;
    ModelWeights weights;
};

namespace detail {

inline void append_le_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void append_le_floats(std::string& out, const std::vector<float>& values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * 4);
    char* dst = out.data() + start;
    for (float v : values) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) *dst++ = static_cast<char>((bits >> (8 * i)) & 0xffu);
    }
}

inline float read_le_float(const unsigned char* p) {
    std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                         (std::uint32_t(p[3]) << 24);
    return std::bit_cast<float>(bits);
}

} // namespace detail

/// Serializes weights in canonical order (tensor visitation order, contiguous payload).
inline std::string serialize_weights(const ModelConfig& cfg, const ModelWeights& w) {
    cfg.validate();
    check_weights(w, cfg);
    nlohmann::json entries = nlohmann::json::array();
    std::string payload;
    for_each_tensor(w, [&](const std::string& name, const std::vector<std::size_t>& shape, const std::vector<float>& data) {
        entries.push_back({{"name", name}, {"shape", shape}, {"offset", payload.size()}, {"length", data.size() * 4}});
        detail::append_le_floats(payload, data);
    });
    nlohmann::json manifest = {
        {"format_version", kWeightsFormatVersion},
        {"config", config_to_json(cfg)},
        {"normalization", {{"mean", w.normalization.mean}, {"std", w.normalization.std}}},
        {"entries", std::move(entries)},
    };
    const std::string text = manifest.dump();
    std::string out(kWeightsMagic, 4);
    detail::append_le_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out += payload;
    return out;
}

inline void save_weights(const std::filesystem::path& path, const ModelConfig& cfg, const ModelWeights& w) {
    write_file(path, serialize_weights(cfg, w));
}

inline LoadedModel parse_weights(const std::vector<char>& bytes) {
    if (bytes.size() < 8) throw FormatError("weights: file too short for header");
    if (std::memcmp(bytes.data(), kWeightsMagic, 4) != 0) throw FormatError("weights: bad magic (expected VPW1)");
    const auto* u = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t manifest_len =
        std::uint64_t(u[4]) | (std::uint64_t(u[5]) << 8) | (std::uint64_t(u[6]) << 16) | (std::uint64_t(u[7]) << 24);
    if (manifest_len > bytes.size() - 8) throw FormatError("weights: manifest length exceeds file size");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("weights: manifest is not valid JSON: ") + e.what());
    }
    if (!manifest.is_object()) throw FormatError("weights: manifest is not an object");
    if (manifest.value("format_version", 0) != kWeightsFormatVersion) {
        throw FormatError("weights: unsupported format_version");
    }
    if (!manifest.contains("config")) throw FormatError("weights: manifest lacks config");

    LoadedModel model;
    model.config = config_from_json(manifest["config"]);
    model.weights = ModelWeights::zeros(model.config);
    try {
        if (manifest.contains("normalization")) {
            model.weights.normalization.mean = manifest["normalization"].at("mean").get<std::array<float, 3>>();
            model.weights.normalization.std = manifest["normalization"].at("std").get<std::array<float, 3>>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("weights: bad normalization: ") + e.what());
    }

    struct Entry {
        std::vector<std::size_t> shape;
        std::uint64_t offset = 0;
        std::uint64_t length = 0;
        bool used = false;
    };
    std::map<std::string, Entry> entries;
    if (!manifest.contains("entries") || !manifest["entries"].is_array()) {
        throw FormatError("weights: manifest lacks entries");
    }
    for (const auto& e : manifest["entries"]) {
        std::string name;
        Entry entry;
        try {
            name = e.at("name").get<std::string>();
            entry.shape = e.at("shape").get<std::vector<std::size_t>>();
            entry.offset = e.at("offset").get<std::uint64_t>();
            entry.length = e.at("length").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(std::string("weights: malformed entry: ") + ex.what());
        }
        if (!entries.emplace(name, entry).second) throw FormatError("weights: duplicate entry " + name);
    }

    const std::uint64_t payload_start = 8 + manifest_len;
    const std::uint64_t payload_size = bytes.size() - payload_start;

    // Byte ranges must not overlap.
    std::vector<std::pair<std::uint64_t, std::string>> ranges;
    for (const auto& [name, e] : entries) {
        if (e.offset > payload_size || e.length > payload_size - e.offset) {
            throw FormatError("weights: entry " + name + " exceeds payload bounds");
        }
        if (e.length > 0) ranges.emplace_back(e.offset, name);
    }
    std::sort(ranges.begin(), ranges.end());
    for (std::size_t i = 1; i < ranges.size(); ++i) {
        const auto& prev = entries.at(ranges[i - 1].second);
        if (prev.offset + prev.length > ranges[i].first) {
            throw FormatError("weights: entry " + ranges[i].second + " overlaps " + ranges[i - 1].second);
        }
    }

    for_each_tensor(model.weights, [&](const std::string& name, const std::vector<std::size_t>& shape,
                                       std::vector<float>& data) {
        auto it = entries.find(name);
        if (it == entries.end()) throw FormatError("weights: missing tensor " + name);
        Entry& e = it->second;
        if (e.shape != shape) throw FormatError("weights: shape mismatch for " + name);
        if (e.length != std::uint64_t(data.size()) * 4) throw FormatError("weights: byte length mismatch for " + name);
        const auto* src = u + payload_start + e.offset;
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = detail::read_le_float(src + 4 * i);
        e.used = true;
    });
    for (const auto& [name, e] : entries) {
        if (!e.used) throw FormatError("weights: unexpected tensor " + name);
    }
    return model;
}

inline LoadedModel load_weights(const std::filesystem::path& path) {
    return parse_weights(read_file(path));
}

/// Deterministic weights for a (config, seed) pair. Matrices are uniform with
/// standard deviation 1/sqrt(fan_in); embeddings and biases use std 0.02;
/// layernorm scales are 1 and shifts 0.
inline ModelWeights random_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelWeights w = ModelWeights::zeros(cfg);
    std::mt19937_64 rng(seed);
    // Raw engine bits only: the standard distributions are not portable.
    auto uniform = [&](double half_width) {
        const double u = double(rng() >> 11) * 0x1.0p-53;
        return float((2.0 * u - 1.0) * half_width);
    };
    const double sqrt3 = std::sqrt(3.0);
    for_each_tensor(w, [&](const std::string& name, const std::vector<std::size_t>& shape, std::vector<float>& data) {
        const bool is_norm = name.find("ln") != std::string::npos || name.rfind("norm.", 0) == 0;
        if (is_norm) return;
        double half = sqrt3 * 0.02;
        if (shape.size() == 2 && name != "pos_embed") half = sqrt3 / std::sqrt(double(shape[0]));
        for (auto& v : data) v = uniform(half);
    });
    return w;
}

// ---------------------------------------------------------------- images

/// Parses binary PPM (P6) with maxval up to 255.
inline ImageRGB parse_ppm(const std::vector<char>& bytes) {
    std::size_t pos = 0;
    auto fail = [](const std::string& msg) -> void { throw FormatError("ppm: " + msg); };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') fail("not a binary PPM (P6)");
    pos = 2;
    auto skip_space = [&]() {
        while (pos < bytes.size()) {
            const char c = bytes[pos];
            if (c == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&](const char* what) {
        skip_space();
        if (pos >= bytes.size() || bytes[pos] < '0' || bytes[pos] > '9') fail(std::string("missing ") + what);
        std::uint64_t v = 0;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + std::uint64_t(bytes[pos] - '0');
            if (v > (1u << 24)) fail(std::string(what) + " too large");
            ++pos;
        }
        return static_cast<std::size_t>(v);
    };
    const std::size_t width = read_uint("width");
    const std::size_t height = read_uint("height");
    const std::size_t maxval = read_uint("maxval");
    if (width == 0 || height == 0) fail("zero dimension");
    if (maxval == 0 || maxval > 255) fail("maxval must be in [1, 255]");
    if (pos >= bytes.size()) fail("truncated header");
    ++pos; // single whitespace before raster
    const std::size_t need = width * height * 3;
    if (bytes.size() - pos < need) fail("truncated pixel data");
    ImageRGB img(width, height);
    for (std::size_t i = 0; i < need; ++i) {
        const auto v = static_cast<unsigned char>(bytes[pos + i]);
        img.pixels[i] = static_cast<std::uint8_t>(maxval == 255 ? v : (std::size_t(v) * 255 + maxval / 2) / maxval);
    }
    return img;
}

inline std::string encode_ppm(const ImageRGB& img) {
    std::ostringstream header;
    header << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::string out = header.str();
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

inline void write_ppm(const std::filesystem::path& path, const ImageRGB& img) {
    write_file(path, encode_ppm(img));
}

inline ImageRGB load_image(const std::filesystem::path& path, std::size_t target_size) {
    ImageRGB img;
    try {
        img = parse_ppm(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return resize_nearest(img, target_size);
}

} // namespace vitprune
