#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "cae/eval.hpp"
#include "fixtures.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(CAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path tiny_config(const fs::path& dir) {
    const auto p = dir / "tiny.json";
    std::ofstream(p) << R"({
        "benchmark": {"entities": 2, "strangers": 4, "utility_train": 20, "utility_heldout": 6},
        "model": {"n_layers": 3, "d_model": 16, "d_mlp": 32, "n_heads": 2},
        "train": {"max_steps": 60, "consolidate_steps": 10},
        "trace": {"prompts": 2, "n_samples": 2, "span": 1},
        "edit": {"layers": "0..1", "optimizer": {"steps": 5}}
    })";
    return p;
}

}  // namespace

TEST(Cli, UsageErrors) {
    const auto dir = fixture::scratch_dir("cli_usage");
    EXPECT_NE(run(""), 0);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("gen-corpus --entities 0 --out " + (dir / "b").string()), 2);
    std::ofstream(dir / "bad.json") << R"({"edit": {"lamda": 0.1}})";
    EXPECT_EQ(run("gen-corpus --config " + (dir / "bad.json").string() + " --out " + (dir / "b").string()), 2);
}

TEST(Cli, MissingInputsAreIoErrors) {
    const auto dir = fixture::scratch_dir("cli_io");
    const auto cfg = tiny_config(dir);
    const std::string base = " --config " + cfg.string() + " ";
    ASSERT_EQ(run("gen-corpus" + base + "--out " + (dir / "bench").string()), 0);
    EXPECT_EQ(run("eval" + base + "--bench " + (dir / "bench").string() + " --checkpoint " + (dir / "none.ckpt").string()),
              3);
    EXPECT_EQ(run("train" + base + "--bench " + (dir / "nowhere").string() + " --out " + (dir / "m.ckpt").string()), 3);
}

TEST(Cli, GenCorpusIsReproducible) {
    const auto dir = fixture::scratch_dir("cli_gen");
    const auto cfg = tiny_config(dir);
    ASSERT_EQ(run("gen-corpus --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run("gen-corpus --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        ++files;
        EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path();
    }
    EXPECT_GT(files, 0u);
}

TEST(Cli, EndToEnd) {
    const auto dir = fixture::scratch_dir("cli_e2e");
    const auto cfg = tiny_config(dir);
    const std::string c = " --config " + cfg.string();
    const std::string bench = " --bench " + (dir / "bench").string();
    const std::string model = (dir / "m.ckpt").string(), edited = (dir / "e.ckpt").string();
    const std::string log = (dir / "log.jsonl").string();

    ASSERT_EQ(run("gen-corpus" + c + " --out " + (dir / "bench").string()), 0);
    ASSERT_EQ(run("train" + c + bench + " --out " + model), 0);
    ASSERT_EQ(run("trace" + c + bench + " --checkpoint " + model + " --sever mlp --out " + (dir / "trace").string()), 0);
    EXPECT_FALSE(fs::is_empty(dir / "trace"));
    EXPECT_EQ(run("unlearn" + c + bench + " --checkpoint " + model + " --out " + edited + " --entity 0 --layers 2..1"), 2);
    ASSERT_EQ(run("unlearn" + c + bench + " --checkpoint " + model + " --out " + edited + " --entity 0 --dump-z " +
                  (dir / "z.csv").string()),
              0);
    EXPECT_TRUE(fs::exists(edited + ".edit.txt"));
    ASSERT_EQ(run("eval" + c + bench + " --checkpoint " + edited + " --entity 0 --method cae --z " +
                  (dir / "z.csv").string() + " --log " + log),
              0);
    const auto reports = cae::eval::read_results_log(log);
    ASSERT_EQ(reports.size(), 1u);
    EXPECT_EQ(reports[0].method, "cae");
    EXPECT_TRUE(reports[0].z_cosine.has_value());
    ASSERT_EQ(run("compare" + c + bench + " --checkpoint " + model + " --presets cae,all_keys --log " + log + " --csv " +
                  (dir / "cmp.csv").string()),
              0);
    EXPECT_EQ(cae::eval::read_results_log(log).size(), 3u);

    // a second unlearn run writes the same bytes
    const std::string again = (dir / "e2.ckpt").string();
    ASSERT_EQ(run("unlearn" + c + bench + " --checkpoint " + model + " --out " + again + " --entity 0"), 0);
    EXPECT_EQ(slurp(edited), slurp(again));
}
