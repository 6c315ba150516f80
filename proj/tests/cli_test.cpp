#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

fs::path kWork;  // per test, so ctest -j is safe

int cli(const std::string& args, const std::string& stdout_file = "/dev/null") {
  std::string cmd = "cd '" + kWork.string() + "' && '" + CLI_BINARY + "' " + args + " >" + stdout_file + " 2>/dev/null";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    kWork = fs::path(CLI_WORKDIR) / ::testing::UnitTest::GetInstance()->current_test_info()->name();
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
};

}  // namespace

TEST_F(Cli, SizesRows) {
  ASSERT_EQ(cli("sizes", "sizes.txt"), 0);
  auto t = read(kWork / "sizes.txt");
  for (const char* row : {"device-registration, merkle, 79\n", "device-storage, direct, 112\n",
                          "permission-request-cross-region, direct, 154\n"})
    EXPECT_NE(t.find(row), std::string::npos) << row;
}

TEST_F(Cli, RunWritesArtifactsAndIsRepeatable) {
  ASSERT_EQ(cli("run --scenario dos-attack --seed 7 --out a"), 0);
  ASSERT_EQ(cli("run --scenario dos-attack --seed 7 --out b"), 0);
  for (const char* f : {"trace.txt", "verdict.txt", "ledger-rn1.txt", "ledger-rn4.txt", "scenario.json"}) {
    ASSERT_TRUE(fs::exists(kWork / "a" / f)) << f;
    EXPECT_EQ(read(kWork / "a" / f), read(kWork / "b" / f)) << f;
  }
  EXPECT_NE(read(kWork / "a" / "verdict.txt").find("PASS"), std::string::npos);
}

TEST_F(Cli, ScenarioFileAndStructuredFormat) {
  std::ofstream(kWork / "s.json") << R"({"name": "file-run", "horizon_ms": 5000,
    "assertions": [{"name": "devices-registered", "args": {}}]})";
  ASSERT_EQ(cli("run --scenario s.json --format structured --out o"), 0);
  EXPECT_NE(read(kWork / "o" / "verdict.jsonl").find("\"scenario\":\"file-run\""), std::string::npos);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(cli("run --scenario nonexistent"), 2);
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("run --scenario dos-attack --format xml"), 2);
  std::ofstream(kWork / "bad.json") << R"({"name": "x", "topology": {"rns": 3}})";
  EXPECT_EQ(cli("run --scenario bad.json"), 2);
  // an assertion that cannot hold
  std::ofstream(kWork / "fail.json") << R"({"name": "x", "horizon_ms": 3000,
    "assertions": [{"name": "installed", "args": {"payload": "never"}}]})";
  EXPECT_EQ(cli("run --scenario fail.json --out f"), 1);
  EXPECT_TRUE(fs::exists(kWork / "f" / "verdict.txt"));
}

TEST_F(Cli, VerifyProof) {
  ASSERT_EQ(cli("run --scenario privacy-split --out r"), 0);
  auto index = read(kWork / "r" / "receipts" / "index.txt");
  auto line = index.substr(0, index.find('\n'));
  auto file = "r/receipts/" + line.substr(0, line.find(' '));
  auto root = line.substr(line.find("root=") + 5);
  EXPECT_EQ(cli("verify-proof " + file + " " + root), 0);
  std::string wrong = root;
  wrong[0] = wrong[0] == '0' ? '1' : '0';
  EXPECT_EQ(cli("verify-proof " + file + " " + wrong), 1);
  std::ofstream(kWork / "corrupt.proof") << "00ff";
  EXPECT_EQ(cli("verify-proof corrupt.proof " + root), 2);
  EXPECT_EQ(cli("verify-proof missing.proof " + root), 2);
}

TEST_F(Cli, ExportLedgerMatchesRun) {
  ASSERT_EQ(cli("run --scenario certification --seed 3 --out r"), 0);
  ASSERT_EQ(cli("export-ledger --scenario certification --seed 3 --rn 2", "l2.txt"), 0);
  EXPECT_EQ(read(kWork / "l2.txt"), read(kWork / "r" / "ledger-rn2.txt"));
}
