#include "cli.hpp"

#include "pga/detector.hpp"
#include "pga/image.hpp"
#include "pga/ply_io.hpp"

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result pga_run(std::vector<std::string> args) {
    args.insert(args.begin(), "pga");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = pga::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("pga_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

}  // namespace

TEST_F(Cli, UnknownFlagIsConfigError) {
    const auto r = pga_run({"render", "--bogus"});
    EXPECT_EQ(r.code, pga::cli::kExitConfig);
    EXPECT_EQ(pga_run({"no-such-command"}).code, pga::cli::kExitConfig);
}

TEST_F(Cli, RenderReproducesGoldenHashes) {
    const auto scene = (dir_ / "toy.ply").string();
    ASSERT_EQ(pga_run({"toy-scene", "-o", scene}).code, 0);
    const auto r = pga_run({"render", "--scene", scene, "-o", (dir_ / "png").string(), "--grid", "single-view"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto golden = nlohmann::json::parse(read_text(fs::path(PGA_TEST_DATA_DIR) / "golden_render.json"));
    ASSERT_FALSE(golden.empty());
    for (const auto& [name, hash] : golden.items()) {
        EXPECT_EQ(pga::sha256_file(dir_ / "png" / name), hash.get<std::string>()) << name;
    }
}

TEST_F(Cli, EvaluateEmptySceneGivesZeroAp) {
    const auto scene = (dir_ / "empty.ply").string();
    pga::save_scene(pga::GaussianScene{}, scene);
    const auto det = (dir_ / "det.bin").string();
    pga::DetectorModel model(pga::toy_architecture());
    model.initialize(1);
    pga::save_detector(model, det);
    const auto r = pga_run({"evaluate", "--scene", scene, "--detector", det, "--grid", "single-view", "-o",
                            (dir_ / "report").string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto report = nlohmann::json::parse(read_text(dir_ / "report" / "report.json"));
    EXPECT_EQ(report.at("overall_ap").get<double>(), 0.0);
}

TEST_F(Cli, AttackWithZeroIterationsKeepsSceneBytes) {
    const auto scene = (dir_ / "toy.ply").string();
    ASSERT_EQ(pga_run({"toy-scene", "-o", scene}).code, 0);
    const auto before = read_text(scene);
    const auto det = (dir_ / "det.bin").string();
    pga::DetectorModel model(pga::toy_architecture());
    model.initialize(1, 3.0);  // detects the target everywhere, so no view is skipped
    pga::save_detector(model, det);
    const auto log = (dir_ / "log.ndjson").string();
    const auto r = pga_run({"attack", "--scene", scene, "--detector", det, "--grid", "single-view", "--iters", "0",
                            "--log", log});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_text(scene), before);
    EXPECT_FALSE(read_text(log).empty());
}

TEST_F(Cli, BadConfigFileIsConfigError) {
    const auto cfg = dir_ / "cfg.json";
    std::ofstream(cfg) << R"({"eta": -1})";
    const auto scene = (dir_ / "toy.ply").string();
    ASSERT_EQ(pga_run({"toy-scene", "-o", scene}).code, 0);
    const auto r = pga_run({"attack", "--scene", scene, "--detector", (dir_ / "none.bin").string(), "--config",
                            cfg.string()});
    EXPECT_EQ(r.code, pga::cli::kExitConfig);
}

TEST_F(Cli, MissingInputIsRuntimeError) {
    const auto r = pga_run({"render", "--scene", (dir_ / "missing.ply").string(), "-o", dir_.string()});
    EXPECT_EQ(r.code, pga::cli::kExitRuntime);
}

TEST_F(Cli, PrintDefaultConfigParses) {
    const auto r = pga_run({"attack", "--print-default-config"});
    ASSERT_EQ(r.code, 0);
    EXPECT_EQ(nlohmann::json::parse(r.out).at("bg_steps").get<int>(), 8);
}
