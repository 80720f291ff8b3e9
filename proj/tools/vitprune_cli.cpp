// vitprune: classify, FLOPs sweeps, throughput benchmark, evaluation and
// pruned-patch visualization for a patch-pruning ViT.
//
// Exit status: 0 success, 1 computation error, 2 usage or I/O error.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vitprune/vitprune.hpp"

namespace fs = std::filesystem;
using namespace vitprune;

namespace {

class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct PruningFlags {
    std::optional<double> keep_rate;
    std::optional<std::string> indicator;
    std::optional<std::string> fusion;
    std::optional<double> temperature;
    std::optional<std::string> overlap;
    std::optional<std::string> prune_blocks;
    std::uint64_t seed = 0;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--keep-rate", keep_rate, "Fraction of candidate patches kept per stage, in (0, 1]");
        cmd->add_option("--indicator", indicator, "Pruning indicator")
            ->check(CLI::IsMember({"none", "mean", "variance", "medad"}));
        cmd->add_option("--fusion", fusion, "Fuse pruned patches into one token")->check(CLI::IsMember({"on", "off"}));
        cmd->add_option("--temperature", temperature, "Fusion softmax temperature, in (0, 1]");
        cmd->add_option("--overlap", overlap, "Overlapping patch embedding (stride = 3/4 patch)")
            ->check(CLI::IsMember({"on", "off"}));
        cmd->add_option("--prune-blocks", prune_blocks, "Comma-separated 1-indexed pruning blocks");
        cmd->add_option("--seed", seed, "Seed for random weights and inputs");
    }

    /// Applies the pruning overrides. Overlap changes the architecture, so it
    /// is only applied when `allow_overlap_change` is set.
    void apply(ModelConfig& cfg, bool allow_overlap_change) const {
        if (keep_rate) cfg.keep_rate = *keep_rate;
        if (indicator) cfg.indicator = *parse_indicator(*indicator);
        if (fusion) cfg.fusion = *fusion == "on";
        if (temperature) cfg.temperature = *temperature;
        if (prune_blocks) {
            cfg.prune_blocks.clear();
            std::stringstream ss(*prune_blocks);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (item.empty()) continue;
                try {
                    cfg.prune_blocks.push_back(std::stoul(item));
                } catch (const std::exception&) {
                    throw UsageError("--prune-blocks: bad block index '" + item + "'");
                }
            }
        }
        if (overlap) {
            const bool want = *overlap == "on";
            if (allow_overlap_change) {
                cfg.set_overlap(want);
            } else if (want != cfg.overlap()) {
                throw UsageError("--overlap " + *overlap + " does not match the model (stride " +
                                 std::to_string(cfg.stride) + ", patch " + std::to_string(cfg.patch_size) + ")");
            }
        }
        cfg.validate();
    }
};

struct ArchFlags {
    std::optional<std::size_t> image_size, patch_size, embed_dim, heads, depth, num_classes;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--image-size", image_size, "Input resolution");
        cmd->add_option("--patch-size", patch_size, "Patch size");
        cmd->add_option("--embed-dim", embed_dim, "Embedding width (also used for the attention width)");
        cmd->add_option("--heads", heads, "Attention heads");
        cmd->add_option("--depth", depth, "Transformer blocks");
        cmd->add_option("--num-classes", num_classes, "Classifier outputs");
    }

    void apply(ModelConfig& cfg) const {
        if (image_size) cfg.image_size = *image_size;
        if (patch_size) cfg.patch_size = cfg.stride = *patch_size;
        if (embed_dim) cfg.embed_dim = cfg.qkv_dim = *embed_dim;
        if (heads) cfg.heads = *heads;
        if (depth) cfg.depth = *depth;
        if (num_classes) cfg.num_classes = *num_classes;
    }
};

LoadedModel load_model(const std::string& path, const PruningFlags& flags) {
    LoadedModel m = load_weights(path);
    flags.apply(m.config, false);
    return m;
}

void print_config(const ModelConfig& cfg) { std::cout << "config: " << config_echo(cfg) << "\n"; }

void print_stages(const ForwardResult& res, std::size_t initial) {
    std::cout << "stages: " << initial << " patches";
    for (const auto& s : res.stages) {
        std::cout << " -> block " << s.block << ": kept " << s.kept_count() << ", pruned " << s.decision.pruned.size()
                  << (s.decision.fusion_token_built ? " (+fusion)" : "");
    }
    std::cout << "\n";
}

int cmd_classify(const std::string& model_path, const std::string& image_path, std::size_t top,
                 const PruningFlags& flags) {
    auto [cfg, weights] = load_model(model_path, flags);
    const ImageRGB img = load_image(image_path, cfg.image_size);
    print_config(cfg);
    const ForwardResult res = forward(img, weights, cfg);
    print_stages(res, cfg.num_patches());
    std::cout << "top-" << top << ":\n";
    for (auto [cls, p] : top_k_classes(res.logits, top)) {
        std::cout << "  class " << cls << "  p=" << std::setprecision(6) << p << "  logit=" << res.logits[cls] << "\n";
    }
    return 0;
}

int cmd_flops(const std::string& sweep, const std::string& csv_path, bool per_block, const PruningFlags& flags,
              const ArchFlags& arch) {
    ModelConfig base;
    arch.apply(base);
    flags.apply(base, true);
    std::vector<double> rates;
    if (sweep.empty()) {
        rates.push_back(base.keep_rate);
    } else {
        std::stringstream ss(sweep);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            try {
                rates.push_back(parse_double(item));
            } catch (const std::exception&) {
                throw UsageError("--sweep: bad keep rate '" + item + "'");
            }
        }
    }
    print_config(base);
    std::cout << "MAC convention: 1 multiply-accumulate = 1 FLOP; matmuls only\n";
    std::vector<SweepRow> rows;
    std::cout << std::left << std::setw(10) << "indicator" << std::setw(10) << "r" << std::setw(8) << "fusion"
              << std::setw(8) << "overlap" << "GFLOPs\n";
    for (double r : rates) {
        ModelConfig cfg = base;
        cfg.keep_rate = r;
        cfg.validate();
        rows.push_back(make_sweep_row(cfg));
        const auto& row = rows.back();
        std::ostringstream g;
        g << std::fixed << std::setprecision(2) << row.gflops;
        std::cout << std::left << std::setw(10) << to_string(row.indicator) << std::setw(10) << format_double(r)
                  << std::setw(8) << (row.fusion ? "on" : "off") << std::setw(8) << (row.overlap ? "on" : "off")
                  << g.str() << "\n";
        if (per_block) {
            const FlopsReport rep = model_gflops(cfg);
            std::cout << "  embed MACs " << rep.embed_macs << ", head MACs " << rep.head_macs << "\n";
            for (const auto& b : rep.per_block) {
                std::cout << "  block " << b.block << ": tokens " << b.tokens_in << " -> " << b.tokens_out << ", MACs "
                          << b.macs << "\n";
            }
        }
    }
    if (!csv_path.empty()) write_file(csv_path, to_csv(rows));
    return 0;
}

int cmd_bench(const std::string& model_path, std::size_t iters, std::size_t warmup, const PruningFlags& flags,
              const ArchFlags& arch) {
    if (iters == 0) throw UsageError("--iters must be at least 1");
    ModelConfig cfg;
    ModelWeights weights;
    if (model_path.empty()) {
        arch.apply(cfg);
        flags.apply(cfg, true);
        weights = random_weights(cfg, flags.seed);
    } else {
        auto m = load_model(model_path, flags);
        cfg = m.config;
        weights = std::move(m.weights);
    }
    print_config(cfg);
    const BenchResult r = run_bench(weights, cfg, iters, warmup, flags.seed);
    std::vector<double> sorted = r.latencies_ms;
    std::sort(sorted.begin(), sorted.end());
    std::cout << "warmup " << r.warmup_iters << ", measured " << r.measured_iters << "\n"
              << "images/s " << std::fixed << std::setprecision(2) << r.images_per_second << "\n"
              << "latency ms: p50 " << sorted[sorted.size() / 2] << ", min " << sorted.front() << ", max "
              << sorted.back() << "\n"
              << "MACs/image " << r.macs_per_image << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_dir, std::size_t threads,
             const std::string& csv_path, const PruningFlags& flags) {
    auto [cfg, weights] = load_model(model_path, flags);
    print_config(cfg);
    const EvalResult r = run_eval(weights, cfg, data_dir, threads);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "evaluated " << r.evaluated << ", correct " << r.correct << ", skipped " << r.skipped << "\n"
              << "top1 " << format_double(r.top1) << "\n";
    SweepRow row = make_sweep_row(cfg);
    row.top1 = r.top1;
    std::cout << kSweepCsvHeader << "\n" << to_csv_line(row) << "\n";
    if (!csv_path.empty()) write_file(csv_path, to_csv({row}));
    return 0;
}

int cmd_visualize(const std::string& model_path, const std::string& image_path, const std::string& out_dir,
                  const PruningFlags& flags) {
    auto [cfg, weights] = load_model(model_path, flags);
    if (cfg.overlap()) {
        throw UsageError("visualize requires non-overlapping patches (stride == patch size): overlapping "
                         "patches have no disjoint pixel footprint");
    }
    const ImageRGB img = load_image(image_path, cfg.image_size);
    print_config(cfg);
    const ForwardResult res = forward(img, weights, cfg);
    print_stages(res, cfg.num_patches());
    const auto overlays = make_overlays(img, cfg, res.stages);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    for (std::size_t i = 0; i < overlays.size(); ++i) {
        const fs::path out = fs::path(out_dir) / ("stage" + std::to_string(i + 1) + "_block" +
                                                   std::to_string(res.stages[i].block) + ".ppm");
        write_ppm(out, overlays[i]);
        std::cout << "wrote " << out.string() << " (" << pruned_cells(res.stages[i], cfg).size()
                  << " cells darkened)\n";
    }
    return 0;
}

int cmd_init(const std::string& out_path, const PruningFlags& flags, const ArchFlags& arch) {
    ModelConfig cfg;
    arch.apply(cfg);
    flags.apply(cfg, true);
    save_weights(out_path, cfg, random_weights(cfg, flags.seed));
    print_config(cfg);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch-pruning Vision Transformer inference and cost tools"};
    app.require_subcommand(1);

    std::string model_path, image_path, out_dir, data_dir, csv_path, sweep, out_path;
    std::size_t top = 5, iters = 200, warmup = 50, threads = 1;
    bool per_block = false;

    PruningFlags classify_flags, flops_flags, bench_flags, eval_flags, vis_flags, init_flags;
    ArchFlags flops_arch, bench_arch, init_arch;

    auto* classify = app.add_subcommand("classify", "Classify one PPM image");
    classify->add_option("--model", model_path, "Weights file")->required();
    classify->add_option("--image", image_path, "PPM image")->required();
    classify->add_option("--top", top, "Number of classes to print");
    classify_flags.add_to(classify);

    auto* flops = app.add_subcommand("flops", "Analytic GFLOPs for a configuration or a keep-rate sweep");
    flops->add_option("--sweep", sweep, "Comma-separated keep rates");
    flops->add_option("--csv", csv_path, "Write sweep rows as CSV");
    flops->add_flag("--per-block", per_block, "Print per-block token counts and MACs");
    flops_flags.add_to(flops);
    flops_arch.add_to(flops);

    auto* bench = app.add_subcommand("bench", "Batch-1 throughput benchmark");
    bench->add_option("--model", model_path, "Weights file (random weights when omitted)");
    bench->add_option("--iters", iters, "Measured iterations");
    bench->add_option("--warmup", warmup, "Warmup iterations");
    bench_flags.add_to(bench);
    bench_arch.add_to(bench);

    auto* eval = app.add_subcommand("eval", "Top-1 accuracy over a class-per-directory PPM set");
    eval->add_option("--model", model_path, "Weights file")->required();
    eval->add_option("--data", data_dir, "Labeled directory")->required();
    eval->add_option("--threads", threads, "Worker threads");
    eval->add_option("--csv", csv_path, "Write the sweep row as CSV");
    eval_flags.add_to(eval);

    auto* vis = app.add_subcommand("visualize", "Write one pruned-patch overlay per pruning stage");
    vis->add_option("--model", model_path, "Weights file")->required();
    vis->add_option("--image", image_path, "PPM image")->required();
    vis->add_option("--out", out_dir, "Output directory")->required();
    vis_flags.add_to(vis);

    auto* init = app.add_subcommand("init", "Write a seeded random-weights file");
    init->add_option("--out", out_path, "Output weights file")->required();
    init_flags.add_to(init);
    init_arch.add_to(init);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*classify) return cmd_classify(model_path, image_path, top, classify_flags);
        if (*flops) return cmd_flops(sweep, csv_path, per_block, flops_flags, flops_arch);
        if (*bench) return cmd_bench(model_path, iters, warmup, bench_flags, bench_arch);
        if (*eval) return cmd_eval(model_path, data_dir, threads, csv_path, eval_flags);
        if (*vis) return cmd_visualize(model_path, image_path, out_dir, vis_flags);
        if (*init) return cmd_init(out_path, init_flags, init_arch);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
