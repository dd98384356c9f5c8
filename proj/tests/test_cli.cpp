#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "salfx/checkpoint.hpp"
#include "salfx/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "salfx_cli_test";

int run(const std::string& args)
{
    const std::string cmd = std::string(SALFX_CLI) + " " + args + " --quiet 2>" + (kRoot / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string stderr_text()
{
    std::ifstream in(kRoot / "stderr.txt");
    return {std::istreambuf_iterator<char>(in), {}};
}

json read_json(const fs::path& p)
{
    std::ifstream in(p);
    return json::parse(in);
}

std::string p(const std::string& rel) { return (kRoot / rel).string(); }

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        ASSERT_EQ(run("gen --n 24 --seed 5 --out " + p("data")), 0) << stderr_text();
        ASSERT_EQ(run("train --manifest " + p("data/manifest.json") +
                      " --epochs 1 --pretrain-epochs 1 --input-size 16 --batch 8 --seed 5 --out " + p("model")),
                  0)
            << stderr_text();
        ASSERT_EQ(run("predict --checkpoint " + p("model/model.salf") + " --manifest " + p("data/manifest.json") +
                      " --out " + p("pred")),
                  0)
            << stderr_text();
    }
};

} // namespace

TEST_F(Cli, GenWritesManifestAndReport)
{
    const json m = read_json(kRoot / "data/manifest.json");
    EXPECT_EQ(m["entries"].size(), 24u);
    EXPECT_EQ(m["pxva"], 2.0);
    const json r = read_json(kRoot / "data/gen_report.json");
    EXPECT_EQ(r["command"], "gen");
    EXPECT_EQ(r["seed"], 5);
    EXPECT_EQ(r["config"]["n"], 24);
    EXPECT_TRUE(fs::exists(kRoot / "data/images/img00023.ppm"));
}

TEST_F(Cli, TrainLogsBothPhases)
{
    const json l = read_json(kRoot / "model/loss.json");
    ASSERT_EQ(l["phases"].size(), 2u);
    EXPECT_EQ(l["phases"][0]["phase"], "pretrain");
    EXPECT_EQ(l["phases"][1]["epoch_losses"].size(), 1u);
    EXPECT_EQ(l["phases"][1]["batch_losses"].size(), 3u);
    EXPECT_TRUE(l["inputs"].contains("manifest"));
}

TEST_F(Cli, TrainFreezesRgbAndHead)
{
    const auto pre = salfx::checkpoint::load(kRoot / "model/pretrain.salf");
    const auto post = salfx::checkpoint::load(kRoot / "model/model.salf");
    for (const auto* q : post.parameters())
        if (!q->name.starts_with("sal.")) {
            EXPECT_EQ(q->value, pre.param(q->name).value) << q->name;
        }
}

TEST_F(Cli, PredictWritesOneMapPerImage)
{
    const auto m = salfx::io::load_pgm(kRoot / "pred/img00000.pgm");
    EXPECT_EQ(m.width(), 64u);
    EXPECT_EQ(read_json(kRoot / "pred/predict_report.json")["predictions"].size(), 24u);
}

TEST_F(Cli, EvalWithSupervisedPriorAndReportsAreDeterministic)
{
    ASSERT_EQ(run("centerbias --supervised " + p("data/manifest.json") + " --seed 2 --out " + p("scb")), 0);
    for (const char* out : {"eval1", "eval2"})
        ASSERT_EQ(run("eval --pred " + p("pred") + " --manifest " + p("data/manifest.json") + " --cb " + p("scb") +
                      " --splits 10 --jobs 3 --seed 2 --out " + p(out)),
                  0)
            << stderr_text();
    EXPECT_EQ(salfx::io::read_bytes(kRoot / "eval1/report.json"), salfx::io::read_bytes(kRoot / "eval2/report.json"));
    EXPECT_EQ(salfx::io::read_bytes(kRoot / "eval1/report.csv"), salfx::io::read_bytes(kRoot / "eval2/report.csv"));
    const json r = read_json(kRoot / "eval1/report.json");
    EXPECT_EQ(r["count"], 24);
    EXPECT_EQ(r["rows"][0]["image_id"], "img00000");
    EXPECT_TRUE(r["inputs"].contains("cb"));
}

TEST_F(Cli, UnsupervisedCenterBiasFile)
{
    ASSERT_EQ(run("centerbias --shape ellipsoid --dva 5 --pxva 2 --width 64 --height 48 --out " + p("ucb")), 0);
    const auto cb = salfx::io::load_pgm(kRoot / "ucb/cb.pgm");
    EXPECT_EQ(cb.width(), 64u);
    EXPECT_EQ(cb.height(), 48u);
    EXPECT_EQ(cb.max(), 1.0);
}

TEST_F(Cli, AblateProducesFourteenRows)
{
    ASSERT_EQ(run("ablate --pred " + p("pred") + " --manifest " + p("data/manifest.json") + " --out " + p("abl")), 0)
        << stderr_text();
    std::ifstream in(kRoot / "abl/ablation.csv");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) ++lines;
    EXPECT_EQ(lines, 15u);
    EXPECT_EQ(read_json(kRoot / "abl/ablation.json")["rows"].size(), 14u);
}

TEST_F(Cli, ConfigFileFillsUnsetFlags)
{
    std::ofstream(kRoot / "cfg.json") << R"({"seed": 4, "gen": {"n": 3, "classes": 2}})";
    ASSERT_EQ(run("gen --config " + p("cfg.json") + " --n 4 --out " + p("cfg")), 0) << stderr_text();
    const json r = read_json(kRoot / "cfg/gen_report.json");
    EXPECT_EQ(r["config"]["n"], 4);
    EXPECT_EQ(r["config"]["classes"], 2);
    EXPECT_EQ(r["seed"], 4);

    std::ofstream(kRoot / "bad.json") << R"({"gen": {"nn": 3}})";
    EXPECT_NE(run("gen --config " + p("bad.json") + " --out " + p("bad")), 0);
    EXPECT_NE(stderr_text().find("nn"), std::string::npos);
}

TEST_F(Cli, PartialFailureNamesEntryAndExitsNonzero)
{
    fs::create_directories(kRoot / "partial");
    for (const auto& e : fs::directory_iterator(kRoot / "pred"))
        if (e.path().filename() != "img00007.pgm") fs::copy_file(e.path(), kRoot / "partial" / e.path().filename());
    EXPECT_EQ(run("eval --pred " + p("partial") + " --manifest " + p("data/manifest.json") + " --splits 5 --out " +
                  p("evalp")),
              1);
    EXPECT_NE(stderr_text().find("img00007"), std::string::npos);
    EXPECT_EQ(read_json(kRoot / "evalp/report.json")["count"], 23);
}

TEST_F(Cli, UsageErrors)
{
    EXPECT_NE(run("gen --n nope --out " + p("x")), 0);
    EXPECT_NE(run("frobnicate"), 0);
    EXPECT_NE(run("train --out " + p("x")), 0);
    EXPECT_NE(stderr_text().find("--manifest"), std::string::npos);
}
