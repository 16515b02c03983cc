#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "dynseq_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(DYNSEQ_CLI_PATH) + " " + args + " >>" + (workdir() / "log.txt").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path tiny_config() {
  const fs::path p = workdir() / "tiny.json";
  std::ofstream(p) << R"({
  "seed": 3,
  "synthetic": {"series": 2, "days": 8, "volatility": [0.001, 0.002]},
  "model": {"hidden": 6, "input_length": 8, "horizon": 3},
  "walk_forward": {"train_span": 200, "test_span": 50, "window_count": 3, "warm_start": 1,
                   "max_epochs": 2, "patience": 1},
  "sweep": {"taus": [0.0, 0.05], "lambdas": [0.1], "static_lengths": [1, 3]}
})";
  return p;
}

}  // namespace

TEST(Cli, MissingDatasetIsConfigError) {
  EXPECT_EQ(run("train --dataset " + (workdir() / "nope.csv").string() + " --output-dir " +
                (workdir() / "a").string()),
            2);
}

TEST(Cli, InvalidValueIsConfigError) {
  EXPECT_EQ(run("generate --set synthetic.series=0 --output-dir " + (workdir() / "b").string()), 2);
  EXPECT_EQ(run("train --set loss.bogus=1 --output-dir " + (workdir() / "b").string()), 2);
  EXPECT_EQ(run("train --tau -1 --output-dir " + (workdir() / "b").string()), 2);
}

TEST(Cli, BadArguments) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("gradcheck --filter no-such-case"), 2);
}

TEST(Cli, GradcheckTamperFails) {
  EXPECT_EQ(run("gradcheck --filter ffn/indicator/max"), 0);
  EXPECT_EQ(run("gradcheck --filter ffn/indicator/max --tamper"), 1);
}

TEST(Cli, GenerateIsDeterministic) {
  const fs::path a = workdir() / "g1.csv", b = workdir() / "g2.csv";
  ASSERT_EQ(run("generate -c " + tiny_config().string() + " --output-dir " + (workdir() / "g").string() + " -o " +
                a.string()),
            0);
  ASSERT_EQ(run("generate -c " + tiny_config().string() + " --output-dir " + (workdir() / "g").string() + " -o " +
                b.string()),
            0);
  const std::string text = slurp(a);
  EXPECT_EQ(text.substr(0, text.find('\n')), "tick,series_0,series_1");
  EXPECT_EQ(text, slurp(b));
  EXPECT_TRUE(fs::exists(workdir() / "g" / "config.effective.json"));
}

TEST(Cli, TrainWritesOutputs) {
  const fs::path out = workdir() / "t";
  ASSERT_EQ(run("train -c " + tiny_config().string() + " --output-dir " + out.string()), 0);
  for (const char* f : {"windows.csv", "checkpoints.csv", "checkpoint.bin", "config.effective.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const std::string windows = slurp(out / "windows.csv");
  EXPECT_EQ(windows.substr(0, windows.find('\n')), "window,f1_dynamic,avg_len,coverage,f1_static_1,f1_static_T");
}

TEST(Cli, SweepIsReproducible) {
  const fs::path a = workdir() / "s1", b = workdir() / "s2";
  ASSERT_EQ(run("sweep -c " + tiny_config().string() + " --output-dir " + a.string()), 0);
  ASSERT_EQ(run("sweep -c " + tiny_config().string() + " --output-dir " + b.string() + " --workers 2"), 0);
  for (const char* f : {"sweep.csv", "curve.csv", "sensitivity.csv", "summary.json"}) {
    ASSERT_TRUE(fs::exists(a / f)) << f;
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }
  const std::string before = slurp(a / "summary.json");
  fs::remove(a / "summary.json");
  ASSERT_EQ(run("report --output-dir " + a.string()), 0);
  EXPECT_EQ(slurp(a / "summary.json"), before);
}
