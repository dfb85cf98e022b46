#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "eapo/metrics.hpp"

namespace fs = std::filesystem;

namespace {

const std::string kCli = EAPO_CLI_PATH;
const std::string kConfig = std::string(EAPO_SOURCE_DIR) + "/configs/key_corridor_3_2.json";

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = kCli + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("eapo_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, MissingConfigExitsOneWithOneLine) {
  EXPECT_EQ(run("train --config " + (dir_ / "nope.json").string() + " --out " + (dir_ / "o").string(), dir_ / "log"),
            1);
  const std::string log = slurp(dir_ / "log");
  EXPECT_FALSE(log.empty());
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1);
}

TEST_F(Cli, UnknownConfigKeyIsRejected) {
  auto j = nlohmann::json::parse(slurp(kConfig));
  j["optim"]["learning_rate"] = 1;
  std::ofstream(dir_ / "bad.json") << j.dump();
  EXPECT_EQ(run("train --config " + (dir_ / "bad.json").string() + " --out " + (dir_ / "o").string(), dir_ / "log"),
            1);
  EXPECT_NE(slurp(dir_ / "log").find("learning_rate"), std::string::npos);
  EXPECT_EQ(run("train --config " + kConfig + " --mode ppo --out " + (dir_ / "o").string(), dir_ / "log"), 1);
}

TEST_F(Cli, SingleEpochSmokeRun) {
  const auto start = std::chrono::steady_clock::now();
  ASSERT_EQ(run("train --config " + kConfig + " --epochs-override 1 --out " + (dir_ / "o").string(), dir_ / "log"), 0)
      << slurp(dir_ / "log");
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 10.0);
  const auto rows = eapo::metrics::read_csv((dir_ / "o" / "metrics.csv").string());
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].epoch, 0);
}

TEST_F(Cli, ManifestIsCompleteAndEchoesTheConfig) {
  ASSERT_EQ(run("train --config " + kConfig + " --epochs-override 3 --out " + (dir_ / "o").string(), dir_ / "log"), 0);
  const auto m = nlohmann::json::parse(slurp(dir_ / "o" / "manifest.json"));
  EXPECT_EQ(m["status"], "complete");
  EXPECT_TRUE(m.contains("schema_version"));
  EXPECT_TRUE(m.contains("seed"));
  EXPECT_EQ(m["config"]["optim"]["epochs"], 3);
  EXPECT_EQ(m["config"]["reward"]["gamma"], 0.9);
  EXPECT_TRUE(fs::exists(dir_ / "o" / m["artifacts"]["metrics"].get<std::string>()));
  ASSERT_FALSE(m["artifacts"]["checkpoints"].empty());
  for (const auto& c : m["artifacts"]["checkpoints"]) EXPECT_TRUE(fs::exists(dir_ / "o" / c.get<std::string>()));
}

TEST_F(Cli, ResumeContinuesWithoutGaps) {
  ASSERT_EQ(run("train --config " + kConfig + " --epochs-override 4 --out " + (dir_ / "full").string(), dir_ / "log"),
            0);
  ASSERT_EQ(run("train --config " + kConfig + " --epochs-override 2 --out " + (dir_ / "part").string(), dir_ / "log"),
            0);
  const fs::path ckpt = dir_ / "part" / "checkpoints" / "epoch_000002.json";
  ASSERT_TRUE(fs::exists(ckpt));
  ASSERT_EQ(run("train --config " + kConfig + " --epochs-override 4 --resume " + ckpt.string() + " --out " +
                    (dir_ / "part").string(),
                dir_ / "log"),
            0)
      << slurp(dir_ / "log");
  const auto rows = eapo::metrics::read_csv((dir_ / "part" / "metrics.csv").string());
  ASSERT_EQ(rows.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(rows[i].epoch, i);
  EXPECT_EQ(slurp(dir_ / "part" / "metrics.csv"), slurp(dir_ / "full" / "metrics.csv"));
}

TEST_F(Cli, ResumeRejectsAChangedConfig) {
  ASSERT_EQ(run("train --config " + kConfig + " --epochs-override 2 --out " + (dir_ / "part").string(), dir_ / "log"),
            0);
  EXPECT_EQ(run("train --config " + kConfig + " --epochs-override 4 --gamma-override 0.5 --resume " +
                    (dir_ / "part" / "checkpoints" / "epoch_000002.json").string() + " --out " +
                    (dir_ / "part").string(),
                dir_ / "log"),
            1);
}

TEST_F(Cli, AblationAccounting) {
  ASSERT_EQ(run("ablate --config " + kConfig + " --modes eapo,grpo-baseline --seeds 1..5 --epochs-override 2 --out " +
                    (dir_ / "ab").string(),
                dir_ / "log"),
            0)
      << slurp(dir_ / "log");
  int manifests = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir_ / "ab"))
    if (e.path().filename() == "manifest.json") ++manifests;
  EXPECT_EQ(manifests, 10);
  std::ifstream in(dir_ / "ab" / "comparison.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, std::string("mode,seed,") + eapo::metrics::kCsvHeader);
  int rows = 0;
  while (std::getline(in, line)) rows += line.empty() ? 0 : 1;
  EXPECT_EQ(rows, 2 * 5 * 2);
}

TEST_F(Cli, AuditIsDeterministicAndInRange) {
  ASSERT_EQ(run("train --config " + kConfig + " --epochs-override 2 --out " + (dir_ / "o").string(), dir_ / "log"), 0);
  const std::string ckpt = (dir_ / "o" / "checkpoints" / "epoch_000002.json").string();
  for (const char* out : {"a1", "a2"})
    ASSERT_EQ(run("reward-audit --checkpoint " + ckpt + " --k 1,10 --samples 40 --out " + (dir_ / out).string(),
                  dir_ / "log"),
              0)
        << slurp(dir_ / "log");
  const std::string a = slurp(dir_ / "a1" / "audit.csv");
  EXPECT_EQ(a, slurp(dir_ / "a2" / "audit.csv"));
  std::istringstream lines(a);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    const auto c1 = line.find(','), c2 = line.find(',', c1 + 1);
    const double rho = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
    EXPECT_GE(rho, -1.0);
    EXPECT_LE(rho, 1.0);
    ++rows;
  }
  EXPECT_EQ(rows, 2);
  EXPECT_EQ(run("reward-audit --checkpoint " + (dir_ / "missing.json").string() + " --out " + (dir_ / "a3").string(),
                dir_ / "log"),
            1);
}
