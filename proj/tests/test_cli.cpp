#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "giram_cli_test";

int giram(const std::string& args) {
  const std::string cmd = std::string(GIRAM_CLI) + " " + args + " >" + (kWork / "stdout.txt").string() + " 2>" +
                          (kWork / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small enough to run in a second or two.
const std::string kTiny =
    " --min-count 3 --n-blocks 3 --base-epochs 1 --update-epochs 1 --capacity 5 --top-k 5 --num-keys 4"
    " --set synth.n_users=20 --set synth.n_pois=30 --set synth.n_blocks=4 --set synth.n_clusters=5"
    " --set synth.events_per_block=12 --set synth.trending_size=4 --set synth.n_categories=6"
    " --set synth.n_derived_categories=3 --set backbone.hidden=8 --set backbone.poi_dim=8"
    " --set backbone.user_dim=4 --set keygen.hidden=8 --set keygen.latent_dim=4 --set keygen.epochs=1"
    " --set keygen.max_keys=50 --set grid.rows=5 --set grid.cols=5";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
  static void TearDownTestSuite() { fs::remove_all(kWork); }
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(giram("--help"), 0);
  EXPECT_EQ(giram(""), 1);
  EXPECT_EQ(giram("frobnicate"), 1);
  EXPECT_EQ(giram("run --no-such-flag"), 1);
}

TEST_F(Cli, ConfigErrorsExitOne) {
  EXPECT_EQ(giram("run --print-config --set fusion.gama=0.1"), 1);
  EXPECT_EQ(giram("run --print-config --set fusion.delta"), 1);
  EXPECT_EQ(giram("run --print-config --methods static,oracle"), 1);
  EXPECT_EQ(giram("run --print-config --delta 1.5"), 1);
  EXPECT_EQ(giram("run --print-config --set keygen.num_keys=0"), 1);
}

TEST_F(Cli, PrintConfigAppliesOverrides) {
  ASSERT_EQ(giram("run --print-config --delta 0.8 --set keygen.epochs=3 --retrieval single_key"), 0);
  const auto j = nlohmann::json::parse(slurp(kWork / "stdout.txt"));
  EXPECT_EQ(j["fusion"]["delta"], 0.8);
  EXPECT_EQ(j["keygen"]["epochs"], 3);
  EXPECT_EQ(j["fusion"]["retrieval"], "single_key");
}

TEST_F(Cli, DataErrorsExitTwo) {
  EXPECT_EQ(giram("ingest --data /nonexistent/checkins.csv"), 2);
  std::ofstream(kWork / "bad.csv") << "user_id,poi_id,lat,lon,timestamp,category\nu1,p1,91.0,0.0,100,c\n";
  EXPECT_EQ(giram("ingest --data " + (kWork / "bad.csv").string()), 2);
  EXPECT_EQ(giram("report --metrics /nonexistent/metrics.csv"), 2);
}

TEST_F(Cli, SynthIngestRunReport) {
  const auto data = kWork / "data";
  ASSERT_EQ(giram("synth --out " + data.string() + " --users 20 --pois 30 --blocks 4 --seed 3"), 0);
  ASSERT_TRUE(fs::exists(data / "checkins.csv"));
  ASSERT_TRUE(fs::exists(data / "categories.csv"));

  const auto summary = kWork / "ingest.json";
  ASSERT_EQ(giram("ingest --data " + (data / "checkins.csv").string() + " --categories " +
                  (data / "categories.csv").string() + " --min-count 3 --n-blocks 3 --json " + summary.string()),
            0);
  const auto j = nlohmann::json::parse(slurp(summary));
  EXPECT_EQ(j["blocks"].size(), 4u);
  EXPECT_GT(j["users"].get<int>(), 0);

  const auto out = kWork / "run";
  ASSERT_EQ(giram("run" + kTiny + " --methods static,giram -o " + out.string()), 0) << slurp(kWork / "stderr.txt");
  for (const char* f : {"metrics.csv", "table.csv", "summary.json", "timing.json", "config.json"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  ASSERT_EQ(giram("report --metrics " + (out / "metrics.csv").string() + " -o " + (kWork / "rep").string()), 0);
  EXPECT_EQ(slurp(kWork / "rep" / "table.csv"), slurp(out / "table.csv"));

  // A resumed run with a different configuration is refused.
  EXPECT_EQ(giram("run" + kTiny + " --methods static,giram --delta 0.5 --resume -o " + out.string()), 1);
}
