#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "vitprune/harness.hpp"

using namespace vitprune;
namespace fs = std::filesystem;

namespace {

ModelConfig narrow_config() {
    ModelConfig cfg;
    cfg.embed_dim = cfg.qkv_dim = 12;
    cfg.heads = 3;
    cfg.num_classes = 10;
    return cfg;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.image_size = 32;
    cfg.patch_size = cfg.stride = 8;
    cfg.embed_dim = cfg.qkv_dim = 8;
    cfg.heads = 2;
    cfg.depth = 3;
    cfg.num_classes = 4;
    cfg.prune_blocks = {2};
    return cfg;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("vitprune_h_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST(Csv, RoundTripsBytes) {
    std::mt19937 rng(1);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<SweepRow> rows;
        for (int i = 0; i < 1 + trial % 7; ++i) {
            SweepRow r;
            r.indicator = static_cast<IndicatorKind>(rng() % 4);
            r.keep_rate = (1 + rng() % 10) / 10.0;
            r.fusion = rng() % 2;
            r.overlap = rng() % 2;
            r.gflops = u(rng);
            if (rng() % 2) r.images_per_sec = u(rng) * 100;
            if (rng() % 2) r.top1 = u(rng) / 10;
            rows.push_back(r);
        }
        const std::string text = to_csv(rows);
        const auto parsed = parse_csv(text);
        EXPECT_EQ(parsed, rows);
        EXPECT_EQ(to_csv(parsed), text);
    }
}

TEST(Csv, HeaderAndRowFormat) {
    ModelConfig cfg;
    cfg.keep_rate = 0.7;
    cfg.fusion = true;
    const auto row = make_sweep_row(cfg);
    EXPECT_EQ(row.gflops, model_gflops(cfg).total_gflops);
    const std::string text = to_csv({row});
    EXPECT_EQ(text.substr(0, text.find('\n')), "indicator,keep_rate,fusion,overlap,gflops,images_per_sec,top1");
    EXPECT_EQ(text.substr(text.find('\n') + 1, 20), "variance,0.7,on,off,");
    EXPECT_THROW(parse_csv("bad header\n"), FormatError);
    EXPECT_THROW(parse_csv(std::string(kSweepCsvHeader) + "\nmean,0.5,on,off\n"), FormatError);
}

TEST(Bench, RejectsZeroIterations) {
    const auto cfg = tiny_config();
    EXPECT_THROW(run_bench(random_weights(cfg, 0), cfg, 0, 0), std::invalid_argument);
}

TEST(Bench, MacCountsRepeatAndThroughputIsConsistent) {
    const auto cfg = tiny_config();
    const auto w = random_weights(cfg, 0);
    const auto a = run_bench(w, cfg, 3, 1, 5);
    const auto b = run_bench(w, cfg, 3, 1, 5);
    EXPECT_EQ(a.macs_per_image, b.macs_per_image);
    EXPECT_EQ(a.macs_per_image, model_gflops(cfg).total_macs);
    ASSERT_EQ(a.latencies_ms.size(), 3u);
    double total_ms = 0.0;
    for (double ms : a.latencies_ms) total_ms += ms;
    EXPECT_NEAR(a.images_per_second, 3.0 / (total_ms / 1e3), a.images_per_second * 1e-9);
}

TEST(Eval, MatchingLabelGivesFullAccuracy) {
    const auto cfg = tiny_config();
    const auto w = random_weights(cfg, 3);
    const auto img = random_image(32, 4);
    const std::size_t predicted = argmax(forward(img, w, cfg).logits);
    TempDir dir("eval1");
    fs::create_directories(dir.path / std::to_string(predicted));
    write_ppm(dir.path / std::to_string(predicted) / "a.ppm", img);
    const auto r = run_eval(w, cfg, dir.path);
    EXPECT_EQ(r.evaluated, 1u);
    EXPECT_EQ(r.top1, 1.0);
}

TEST(Eval, UnreadableImagesAreSkippedAndThreadsDoNotMatter) {
    const auto cfg = tiny_config();
    const auto w = random_weights(cfg, 3);
    TempDir dir("eval2");
    for (int cls = 0; cls < 4; ++cls) {
        fs::create_directories(dir.path / std::to_string(cls));
        for (int i = 0; i < 3; ++i) {
            write_ppm(dir.path / std::to_string(cls) / (std::to_string(i) + ".ppm"),
                      random_image(40, std::uint64_t(cls * 10 + i)));
        }
    }
    write_file(dir.path / "2" / "broken.ppm", "P6\n4 4\n255\nxx");
    const auto one = run_eval(w, cfg, dir.path, 1);
    const auto four = run_eval(w, cfg, dir.path, 4);
    EXPECT_EQ(one.skipped, 1u);
    EXPECT_EQ(one.evaluated, 12u);
    ASSERT_EQ(one.warnings.size(), 1u);
    EXPECT_NE(one.warnings[0].find("broken.ppm"), std::string::npos);
    EXPECT_EQ(one.correct, four.correct);
    EXPECT_EQ(one.top1, four.top1);

    ModelConfig medad = cfg;
    medad.indicator = IndicatorKind::medad;
    const auto m = run_eval(w, medad, dir.path, 2);
    EXPECT_EQ(m.evaluated, one.evaluated);
}

TEST(Eval, EmptyDirectoryRejected) {
    const auto cfg = tiny_config();
    TempDir dir("eval3");
    EXPECT_THROW(run_eval(random_weights(cfg, 0), cfg, dir.path), IoError);
    EXPECT_THROW(run_eval(random_weights(cfg, 0), cfg, dir.path / "missing"), IoError);
}

TEST(Eval, NamedClassesFollowSortedOrder) {
    TempDir dir("eval4");
    for (const char* name : {"zebra", "ant", "moth"}) {
        fs::create_directories(dir.path / name);
        write_ppm(dir.path / name / "x.ppm", ImageRGB(2, 2));
    }
    const auto items = list_labeled_dir(dir.path);
    ASSERT_EQ(items.size(), 3u);
    EXPECT_EQ(items[0].path.parent_path().filename(), "ant");
    EXPECT_EQ(items[0].label, 0u);
    EXPECT_EQ(items[2].path.parent_path().filename(), "zebra");
    EXPECT_EQ(items[2].label, 2u);
}

TEST(Visualize, KeepAllLeavesImageUnchanged) {
    ModelConfig cfg = narrow_config();
    cfg.keep_rate = 1.0;
    const auto w = random_weights(cfg, 1);
    const auto img = random_image(224, 2);
    const auto res = forward(img, w, cfg);
    const auto overlays = make_overlays(img, cfg, res.stages);
    ASSERT_EQ(overlays.size(), 3u);
    for (const auto& o : overlays) EXPECT_EQ(o, img);
}

TEST(Visualize, SeventyPercentDarkensFiftyNineCellsAtFirstStage) {
    ModelConfig cfg = narrow_config();
    cfg.keep_rate = 0.7;
    const auto w = random_weights(cfg, 1);
    const ImageRGB img(224, 224, 200);
    const auto res = forward(random_image(224, 3), w, cfg);
    const auto overlays = make_overlays(img, cfg, res.stages);
    ASSERT_EQ(overlays.size(), 3u);
    const std::size_t expected_dark[] = {59, 100, 129};
    for (std::size_t s = 0; s < 3; ++s) {
        std::size_t dark_cells = 0;
        for (std::size_t gy = 0; gy < 14; ++gy)
            for (std::size_t gx = 0; gx < 14; ++gx) {
                bool all_dark = true, all_bright = true;
                for (std::size_t y = gy * 16; y < gy * 16 + 16; ++y)
                    for (std::size_t x = gx * 16; x < gx * 16 + 16; ++x) {
                        all_dark &= overlays[s].at(x, y, 0) == 50;
                        all_bright &= overlays[s].at(x, y, 0) == 200;
                    }
                ASSERT_TRUE(all_dark || all_bright);
                dark_cells += all_dark;
            }
        EXPECT_EQ(dark_cells, expected_dark[s]);
    }
}

TEST(Visualize, OverlapRejected) {
    ModelConfig cfg = narrow_config();
    cfg.set_overlap(true);
    EXPECT_THROW(make_overlays(ImageRGB(224, 224), cfg, {}), ConfigError);
}

TEST(TopK, OrdersByProbability) {
    const std::vector<float> logits{0.0f, 2.0f, 1.0f, 2.0f};
    const auto top = top_k_classes(logits, 3);
    ASSERT_EQ(top.size(), 3u);
    EXPECT_EQ(top[0].first, 1u);
    EXPECT_EQ(top[1].first, 3u);
    EXPECT_EQ(top[2].first, 2u);
    EXPECT_NEAR(top[0].second, top[1].second, 1e-12);
}
