#pragma once

// Benchmark, evaluation, visualization and CSV helpers behind the CLI.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "vitprune/config.hpp"
#include "vitprune/cost_model.hpp"
#include "vitprune/image.hpp"
#include "vitprune/model.hpp"
#include "vitprune/model_io.hpp"

namespace vitprune {

// ---------------------------------------------------------------- csv

struct SweepRow {
    IndicatorKind indicator = IndicatorKind::none;
    double keep_rate = 1.0;
    bool fusion = false;
    bool overlap = false;
    double gflops = 0.0;
    std::optional<double> images_per_sec;
    std::optional<double> top1;

    friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

inline constexpr std::string_view kSweepCsvHeader = "indicator,keep_rate,fusion,overlap,gflops,images_per_sec,top1";

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc{}) throw std::runtime_error("format_double failed");
    return std::string(buf, end);
}

inline double parse_double(std::string_view text) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        throw FormatError("csv: bad number '" + std::string(text) + "'");
    }
    return v;
}

inline SweepRow make_sweep_row(const ModelConfig& cfg) {
    SweepRow row;
    row.indicator = cfg.indicator;
    row.keep_rate = cfg.keep_rate;
    row.fusion = cfg.fusion;
    row.overlap = cfg.overlap();
    row.gflops = model_gflops(cfg).total_gflops;
    return row;
}

inline std::string to_csv_line(const SweepRow& r) {
    std::string s;
    s += to_string(r.indicator);
    s += ',' + format_double(r.keep_rate);
    s += r.fusion ? ",on" : ",off";
    s += r.overlap ? ",on" : ",off";
    s += ',' + format_double(r.gflops);
    s += ',' + (r.images_per_sec ? format_double(*r.images_per_sec) : std::string());
    s += ',' + (r.top1 ? format_double(*r.top1) : std::string());
    return s;
}

inline std::string to_csv(const std::vector<SweepRow>& rows) {
    std::string out(kSweepCsvHeader);
    out += '\n';
    for (const auto& r : rows) out += to_csv_line(r) + '\n';
    return out;
}

inline std::vector<SweepRow> parse_csv(std::string_view text) {
    std::vector<SweepRow> rows;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line_no == 1) {
            if (line != kSweepCsvHeader) throw FormatError("csv: unexpected header");
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string_view> f;
        std::size_t start = 0;
        while (true) {
            const auto comma = line.find(',', start);
            f.push_back(line.substr(start, comma - start));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        if (f.size() != 7) throw FormatError("csv: line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields");
        auto flag = [&](std::string_view v) {
            if (v == "on") return true;
            if (v == "off") return false;
            throw FormatError("csv: bad flag '" + std::string(v) + "'");
        };
        SweepRow r;
        const auto ind = parse_indicator(f[0]);
        if (!ind) throw FormatError("csv: bad indicator '" + std::string(f[0]) + "'");
        r.indicator = *ind;
        r.keep_rate = parse_double(f[1]);
        r.fusion = flag(f[2]);
        r.overlap = flag(f[3]);
        r.gflops = parse_double(f[4]);
        if (!f[5].empty()) r.images_per_sec = parse_double(f[5]);
        if (!f[6].empty()) r.top1 = parse_double(f[6]);
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------- bench

struct BenchResult {
    ModelConfig config;
    std::size_t warmup_iters = 0;
    std::size_t measured_iters = 0;
    double images_per_second = 0.0;
    std::vector<double> latencies_ms;
    std::uint64_t macs_per_image = 0;
};

inline ImageRGB random_image(std::size_t size, std::uint64_t seed) {
    ImageRGB img(size, size);
    std::mt19937_64 rng(seed);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng() & 0xffu);
    return img;
}

/// Batch-1 throughput on a fixed seeded input.
inline BenchResult run_bench(const ModelWeights& w, const ModelConfig& cfg, std::size_t iters, std::size_t warmup,
                             std::uint64_t seed = 0) {
    if (iters == 0) throw std::invalid_argument("bench: need at least one measured iteration");
    cfg.validate();
    const ImageRGB input = random_image(cfg.image_size, seed);
    BenchResult r;
    r.config = cfg;
    r.warmup_iters = warmup;
    r.measured_iters = iters;
    for (std::size_t i = 0; i < warmup; ++i) (void)forward(input, w, cfg);
    using clock = std::chrono::steady_clock;
    double total_s = 0.0;
    for (std::size_t i = 0; i < iters; ++i) {
        OpCounter counter;
        const auto t0 = clock::now();
        (void)forward(input, w, cfg, &counter);
        const std::chrono::duration<double> dt = clock::now() - t0;
        total_s += dt.count();
        r.latencies_ms.push_back(dt.count() * 1e3);
        r.macs_per_image = counter.macs;
    }
    r.images_per_second = double(iters) / total_s;
    return r;
}

// ---------------------------------------------------------------- eval

struct LabeledImage {
    std::filesystem::path path;
    std::size_t label = 0;
};

/// Class-per-subdirectory dataset. If every subdirectory name is a
/// non-negative integer it is the label; otherwise labels follow the sorted
/// order of the subdirectory names. Only *.ppm files are listed.
inline std::vector<LabeledImage> list_labeled_dir(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(root, ec)) throw IoError("not a directory: " + root.string());
    std::vector<std::string> classes;
    for (const auto& e : fs::directory_iterator(root)) {
        if (e.is_directory()) classes.push_back(e.path().filename().string());
    }
    std::sort(classes.begin(), classes.end());
    const bool numeric = !classes.empty() && std::all_of(classes.begin(), classes.end(), [](const std::string& s) {
        return !s.empty() && s.size() < 10 && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
    });
    std::vector<LabeledImage> items;
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const std::size_t label = numeric ? std::stoul(classes[i]) : i;
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(root / classes[i])) {
            if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (auto& f : files) items.push_back({std::move(f), label});
    }
    return items;
}

struct EvalResult {
    ModelConfig config;
    std::size_t evaluated = 0;
    std::size_t correct = 0;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
    double top1 = 0.0;
};

/// Top-1 accuracy. Independent images run on `threads` workers; the result
/// does not depend on the worker count.
inline EvalResult run_eval(const ModelWeights& w, const ModelConfig& cfg, const std::filesystem::path& root,
                           std::size_t threads = 1) {
    cfg.validate();
    const auto items = list_labeled_dir(root);
    if (items.empty()) throw IoError("no labeled .ppm images under " + root.string());

    enum class Outcome : std::uint8_t { wrong, right, skipped };
    std::vector<Outcome> outcome(items.size(), Outcome::skipped);
    std::vector<std::string> errors(items.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next++; i < items.size(); i = next++) {
            try {
                const ImageRGB img = load_image(items[i].path, cfg.image_size);
                const auto res = forward(img, w, cfg);
                outcome[i] = argmax(res.logits) == items[i].label ? Outcome::right : Outcome::wrong;
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, items.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    EvalResult r;
    r.config = cfg;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (outcome[i] == Outcome::skipped) {
            ++r.skipped;
            r.warnings.push_back("skipped " + items[i].path.string() + ": " + errors[i]);
        } else {
            ++r.evaluated;
            if (outcome[i] == Outcome::right) ++r.correct;
        }
    }
    if (r.evaluated == 0) throw IoError("no readable images under " + root.string());
    r.top1 = double(r.correct) / double(r.evaluated);
    return r;
}

// ---------------------------------------------------------------- visualize

/// Grid cells (row, col) no longer represented by a patch token after `stage`.
inline std::vector<std::pair<std::size_t, std::size_t>> pruned_cells(const StageRecord& stage, const ModelConfig& cfg) {
    const std::size_t side = cfg.grid_side();
    std::vector<bool> alive(side * side, false);
    for (const auto& o : stage.retained)
        if (!o.is_fusion()) alive[o.row * side + o.col] = true;
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t r = 0; r < side; ++r)
        for (std::size_t c = 0; c < side; ++c)
            if (!alive[r * side + c]) out.emplace_back(r, c);
    return out;
}

/// One overlay per pruning stage: pruned cells at 25% brightness, retained
/// cells untouched. `image` must already be at the model resolution.
inline std::vector<ImageRGB> make_overlays(const ImageRGB& image, const ModelConfig& cfg,
                                           const std::vector<StageRecord>& stages) {
    if (cfg.overlap()) {
        throw ConfigError("visualize: overlapping patches have no disjoint pixel footprint; use --overlap off");
    }
    if (image.width != cfg.image_size || image.height != cfg.image_size) {
        throw ShapeError("visualize: image must be " + std::to_string(cfg.image_size) + " square");
    }
    std::vector<ImageRGB> out;
    for (const auto& stage : stages) {
        ImageRGB overlay = image;
        for (auto [row, col] : pruned_cells(stage, cfg)) {
            for (std::size_t y = row * cfg.stride; y < row * cfg.stride + cfg.patch_size; ++y)
                for (std::size_t x = col * cfg.stride; x < col * cfg.stride + cfg.patch_size; ++x)
                    for (std::size_t c = 0; c < 3; ++c) overlay.at(x, y, c) = static_cast<std::uint8_t>(overlay.at(x, y, c) / 4);
        }
        out.push_back(std::move(overlay));
    }
    return out;
}

// ---------------------------------------------------------------- misc

inline std::string config_echo(const ModelConfig& cfg) {
    return config_to_json(cfg).dump();
}

/// (class index, probability) for the `k` highest logits.
inline std::vector<std::pair<std::size_t, double>> top_k_classes(std::span<const float> logits, std::size_t k) {
    std::vector<double> probs(logits.begin(), logits.end());
    const double peak = *std::max_element(probs.begin(), probs.end());
    double sum = 0.0;
    for (auto& p : probs) sum += (p = std::exp(p - peak));
    std::vector<std::size_t> idx(probs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), [&](auto a, auto b) {
        return probs[a] != probs[b] ? probs[a] > probs[b] : a < b;
    });
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t i = 0; i < k; ++i) out.emplace_back(idx[i], probs[idx[i]] / sum);
    return out;
}

} // namespace vitprune
