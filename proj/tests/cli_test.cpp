#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "vitprune/harness.hpp"

using namespace vitprune;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int status = -1;
    std::string out;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(VITPRUNE_CLI_PATH) + " " + args + " 2>&1";
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return r;
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), int(buf.size()), pipe) != nullptr) r.out += buf.data();
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

class CliTest : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "vitprune_cli_test";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        // full 14x14 grid, narrow embedding
        const auto r = run("init --out " + model() + " --embed-dim 12 --heads 3 --num-classes 10 --seed 4");
        ASSERT_EQ(r.status, 0) << r.out;
        write_ppm(dir_ / "img.ppm", random_image(224, 9));
    }
    static void TearDownTestSuite() { fs::remove_all(dir_); }

    static std::string model() { return (dir_ / "model.vpw").string(); }
    static std::string image() { return (dir_ / "img.ppm").string(); }

    static fs::path dir_;
};

fs::path CliTest::dir_;

std::string lines_starting(const std::string& text, const std::string& prefix) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto nl = text.find('\n', pos);
        const std::string line = text.substr(pos, nl - pos);
        if (line.rfind(prefix, 0) == 0) out += line + "\n";
        if (nl == std::string::npos) break;
        pos = nl + 1;
    }
    return out;
}

} // namespace

TEST_F(CliTest, MissingFileExitsTwoAndNamesPath) {
    const auto r = run("classify --model " + (dir_ / "nope.vpw").string() + " --image " + image());
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.out.find("nope.vpw"), std::string::npos) << r.out;
    const auto r2 = run("classify --model " + model() + " --image " + (dir_ / "nope.ppm").string());
    EXPECT_EQ(r2.status, 2);
    EXPECT_NE(r2.out.find("nope.ppm"), std::string::npos) << r2.out;
}

TEST_F(CliTest, UsageErrorsExitTwo) {
    EXPECT_EQ(run("").status, 2);
    EXPECT_EQ(run("flops --indicator bogus").status, 2);
    EXPECT_EQ(run("flops --keep-rate 1.5").status, 2);
    EXPECT_EQ(run("bench --iters 0 --image-size 32 --patch-size 8 --depth 3 --prune-blocks 2").status, 2);
    EXPECT_EQ(run("classify --model " + model() + " --image " + image() + " --overlap on").status, 2);
}

TEST_F(CliTest, ClassifyPrintsScheduleAndConfig) {
    const auto r = run("classify --model " + model() + " --image " + image() + " --keep-rate 0.7 --fusion off");
    ASSERT_EQ(r.status, 0) << r.out;
    EXPECT_NE(r.out.find("block 4: kept 137"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("block 7: kept 96"), std::string::npos);
    EXPECT_NE(r.out.find("block 10: kept 67"), std::string::npos);
    EXPECT_NE(r.out.find("\"keep_rate\":0.7"), std::string::npos);
    EXPECT_NE(r.out.find("\"temperature\":0.25"), std::string::npos);
    EXPECT_NE(r.out.find("top-5"), std::string::npos);
}

TEST_F(CliTest, KeepAllMatchesBaseline) {
    const auto a = run("classify --model " + model() + " --image " + image() + " --keep-rate 1.0 --indicator none");
    const auto b = run("classify --model " + model() + " --image " + image() + " --keep-rate 1.0 --indicator variance");
    ASSERT_EQ(a.status, 0);
    ASSERT_EQ(b.status, 0);
    EXPECT_EQ(lines_starting(a.out, "  class"), lines_starting(b.out, "  class"));
}

TEST_F(CliTest, FlopsSweepWritesCsvMatchingCostModel) {
    const auto csv = dir_ / "sweep.csv";
    const auto r = run("flops --fusion on --sweep 0.9,0.7,0.3 --csv " + csv.string());
    ASSERT_EQ(r.status, 0) << r.out;
    EXPECT_NE(r.out.find("4.0"), std::string::npos);
    const auto bytes = read_file(csv);
    const auto rows = parse_csv(std::string(bytes.begin(), bytes.end()));
    ASSERT_EQ(rows.size(), 3u);
    for (const auto& row : rows) {
        ModelConfig cfg;
        cfg.fusion = true;
        cfg.keep_rate = row.keep_rate;
        EXPECT_EQ(row.gflops, model_gflops(cfg).total_gflops);
    }
}

TEST_F(CliTest, VisualizeWritesOneOverlayPerStage) {
    const auto out = dir_ / "vis";
    const auto r = run("visualize --model " + model() + " --image " + image() + " --keep-rate 0.7 --out " + out.string());
    ASSERT_EQ(r.status, 0) << r.out;
    std::size_t count = 0;
    for (const auto& e : fs::directory_iterator(out)) count += e.path().extension() == ".ppm";
    EXPECT_EQ(count, 3u);
    EXPECT_NE(r.out.find("(59 cells darkened)"), std::string::npos) << r.out;
}

TEST_F(CliTest, VisualizeRejectsOverlapModel) {
    const auto overlap_model = (dir_ / "overlap.vpw").string();
    ASSERT_EQ(run("init --out " + overlap_model + " --embed-dim 12 --heads 3 --num-classes 10 --overlap on").status, 0);
    const auto r = run("visualize --model " + overlap_model + " --image " + image() + " --out " + (dir_ / "v2").string());
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.out.find("overlapping"), std::string::npos) << r.out;
}

TEST_F(CliTest, EvalAndBench) {
    const auto data = dir_ / "data";
    fs::create_directories(data / "3");
    write_ppm(data / "3" / "a.ppm", random_image(224, 1));
    const auto r = run("eval --model " + model() + " --data " + data.string() + " --threads 2");
    ASSERT_EQ(r.status, 0) << r.out;
    EXPECT_NE(r.out.find("evaluated 1"), std::string::npos);
    EXPECT_NE(r.out.find(std::string(kSweepCsvHeader)), std::string::npos);

    const auto b = run("bench --model " + model() + " --iters 2 --warmup 1");
    ASSERT_EQ(b.status, 0) << b.out;
    EXPECT_NE(b.out.find("images/s"), std::string::npos);
}
