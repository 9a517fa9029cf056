// SPDX-License-Identifier: Apache-2.0
#include "m3/feature_tensor.hpp"
#include "m3/manifest.hpp"
#include "m3/memory_bank.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <regex>
#include <sys/wait.h>

using namespace m3;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run run(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + (env.empty() ? "" : " ") + std::string(M3_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    std::size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// One shared small synthetic dataset for the tests that need views.
class CliData : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new testkit::TempDir("cli");
        const auto r = run("synth --out " + q(dir_->path()) + " --size 20 --views 6 --heldout 2 --dim 16 --components 4 --iters 40");
        ASSERT_EQ(r.code, 0) << r.output;
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path root() { return dir_->path(); }

    static testkit::TempDir* dir_;
};

testkit::TempDir* CliData::dir_ = nullptr;

} // namespace

TEST(Cli, ExitCodesForUsage) {
    EXPECT_EQ(run("--help").code, 0);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("reduce").code, 2);
    EXPECT_EQ(run("reduce /nonexistent/config.json").code, 2);
    testkit::TempDir dir("cli");
    write_text(dir / "bad.json", R"({"unknown_key": 1})");
    const auto r = run("reduce " + q(dir / "bad.json"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("unknown_key"), std::string::npos);
}

TEST(Cli, CorruptInputIsDataError) {
    testkit::TempDir dir("cli");
    write_text(dir / "f.m3ft", "not a feature file");
    write_text(dir / "c.json", R"({"features.m": "f.m3ft", "out": "o"})");
    EXPECT_EQ(run("reduce " + q(dir / "c.json")).code, 3);
}

TEST(Cli, ReduceDuplicateAndOrthogonalRows) {
    testkit::TempDir dir("cli");
    auto dup = make_features("dup", 1, 4, 5, 3);
    for (std::size_t r = 0; r < dup.rows(); ++r) {
        dup.row(r)[0] = 1.0f;
        dup.row(r)[1] = 2.0f;
        dup.row(r)[2] = -1.0f;
    }
    save_features(dup, dir / "dup.m3ft");
    auto ortho = make_features("orth", 1, 1, 6, 6);
    for (std::size_t r = 0; r < 6; ++r) ortho.row(r)[r] = 3.0f;
    save_features(ortho, dir / "orth.m3ft");
    write_text(dir / "c.json", R"({"features.dup": "dup.m3ft", "features.orth": "orth.m3ft", "out": "out",
                                   "degrees": 4, "theta": 0.5})");
    const auto r = run("reduce " + q(dir / "c.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("dup: t=1 ratio=20"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("orth: t=6 ratio=1"), std::string::npos) << r.output;
    const auto bank = load_bank(dir / "out/bank.orth.m3pb");
    EXPECT_EQ(bank.size(), 6u);
    EXPECT_EQ(bank.degree, 4u);
}

TEST(Cli, NoPartialOutputOnConfigError) {
    testkit::TempDir dir("cli");
    write_text(dir / "c.json", R"({"scene": "missing.m3gs", "cameras": "missing.json", "out": "run",
                                   "features.m": "missing.m3ft", "iters": 5, "iters_rgb": 5})");
    EXPECT_EQ(run("train " + q(dir / "c.json")).code, 2);
    EXPECT_FALSE(fs::exists(dir / "run"));
    EXPECT_EQ(run("render " + q(dir / "c.json")).code, 2);
    EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST_F(CliData, SynthLayout) {
    for (const char* f : {"cameras.json", "scene_init.m3gs", "truth.m3gs", "features.synthetic.m3ft",
                          "components.synthetic.m3ft", "grounding.json", "retrieval.json", "train.json",
                          "images/view_000.png", "retrieval_texts.m3ft", "grounding_queries.m3ft"}) {
        EXPECT_TRUE(fs::exists(root() / f)) << f;
    }
}

TEST_F(CliData, EvalPredictionEqualsTruth) {
    write_text(root() / "eval_gt.json", R"({"features.synthetic": "features.synthetic.m3ft",
        "pred.synthetic": "features.synthetic.m3ft", "scene": "truth.m3gs", "cameras": "cameras.json",
        "grounding": "grounding.json", "retrieval": "retrieval.json", "out": "eval_gt"})");
    const auto r = run("eval " + q(root() / "eval_gt.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("synthetic\t0.000000\t0.000000"), std::string::npos) << r.output;
    // grounding masks come from the same labels the maps were built from
    EXPECT_NE(r.output.find("synthetic\t1.000000\t1.000000\t1.000000\t1.000000"), std::string::npos) << r.output;
    std::smatch m;
    ASSERT_TRUE(std::regex_search(r.output, m, std::regex("-\\t([0-9.]+)\\t")));
    EXPECT_GT(std::stod(m[1]), 30.0);
    EXPECT_TRUE(fs::exists(root() / "eval_gt/metrics.jsonl"));
}

TEST_F(CliData, QueryArgmaxLandsOnMatchingRegion) {
    write_text(root() / "query.json", R"({"pred.synthetic": "features.synthetic.m3ft", "cameras": "cameras.json"})");
    const auto comps = load_embedding_list(root() / "components.synthetic.m3ft");
    const auto ft = load_features(root() / "features.synthetic.m3ft");
    for (std::size_t k = 0; k < comps.m; ++k) {
        const auto out = root() / ("heat_" + std::to_string(k) + ".png");
        const auto r = run("query " + q(root() / "query.json") + " --embedding " +
                           q(root() / "components.synthetic.m3ft") + " --row " + std::to_string(k) + " --view 1 --out " +
                           q(out));
        ASSERT_EQ(r.code, 0) << r.output;
        EXPECT_TRUE(fs::exists(out));
        std::smatch m;
        ASSERT_TRUE(std::regex_search(r.output, m, std::regex("x=(\\d+) y=(\\d+) similarity=([0-9.]+)")));
        const std::size_t x = std::stoul(m[1]), y = std::stoul(m[2]);
        const auto row = ft.row(ft.view_rows() + y * ft.w + x);
        if (std::stod(m[3]) > 0.999) {
            for (std::size_t j = 0; j < ft.d; ++j) EXPECT_FLOAT_EQ(row[j], float(comps.row(k)[j]));
        }
    }
    EXPECT_EQ(run("query " + q(root() / "query.json") + " --embedding " + q(root() / "components.synthetic.m3ft") +
                  " --row 99")
                  .code,
              2);
}

TEST_F(CliData, TrainRenderTraceAndPca) {
    const auto r = run("train " + q(root() / "train.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto run_dir = root() / "run";
    for (const char* f : {"scene.m3gs", "bank.synthetic.m3pb", "render.json", "report.jsonl"}) {
        EXPECT_TRUE(fs::exists(run_dir / f)) << f;
    }
    const auto rr = run("render " + q(run_dir / "render.json") + " --pca");
    ASSERT_EQ(rr.code, 0) << rr.output;
    EXPECT_TRUE(fs::exists(run_dir / "render/pred.synthetic.m3ft"));
    EXPECT_TRUE(fs::exists(run_dir / "render/view_000.png"));
    EXPECT_TRUE(fs::exists(run_dir / "render/pca.synthetic.view_000.png"));
    const auto pred = load_features(run_dir / "render/pred.synthetic.m3ft");
    EXPECT_EQ(pred.n_views, 6u);
    EXPECT_EQ(pred.d, 16u);

    const auto ev = run("eval " + q(run_dir / "render.json"));
    ASSERT_EQ(ev.code, 0) << ev.output;
    EXPECT_NE(ev.output.find("I2T@1\tI2T@5"), std::string::npos) << ev.output;
    EXPECT_EQ(ev.output.find("I2T@10"), std::string::npos);

    const auto tr = run("trace " + q(run_dir / "render.json") + " --x 10 --y 10 -k 2");
    ASSERT_EQ(tr.code, 0) << tr.output;
    EXPECT_NE(tr.output.find("\n1\t"), std::string::npos);
    EXPECT_NE(tr.output.find("\n2\t"), std::string::npos);
    EXPECT_EQ(run("trace " + q(run_dir / "render.json") + " --x 100 --y 10").code, 2);

    const auto pc = run("pca " + q(root() / "features.synthetic.m3ft") + " --out " + q(root() / "pca") + " --view 3");
    ASSERT_EQ(pc.code, 0) << pc.output;
    EXPECT_TRUE(fs::exists(root() / "pca/pca_003.png"));
    EXPECT_FALSE(fs::exists(root() / "pca/pca_000.png"));
}
