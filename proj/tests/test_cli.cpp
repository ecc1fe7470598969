#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "support.hpp"

namespace fs = std::filesystem;
using testing_support::read_text;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ccmpc_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + CCMPC_CLI + "\" " + args + " > \"" +
                            (dir_ / "stdout.txt").string() + "\" 2> \"" + err.string() + "\"";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_text(err.string())};
  }

  std::string out(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

const char* kShort = " --steps 30 --horizon 12";

nlohmann::json load(const std::string& path) { return nlohmann::json::parse(read_text(path)); }

}  // namespace

TEST_F(Cli, MissingFileIsAnInputError) {
  const auto r = run("run --network " + out("nope.json") + kShort + " --out " + out("x"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nope.json"), std::string::npos) << r.err;
}

TEST_F(Cli, MalformedNetworkNamesTheFile) {
  std::ofstream(out("bad.json")) << "{\"tanks\": [1,}";
  const auto r = run("run --network " + out("bad.json") + kShort + " --out " + out("x"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("bad.json"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownOptionFails) {
  EXPECT_EQ(run("run --bogus 1").code, 1);
  EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, MedianConfidenceReproducesDeterministicRun) {
  ASSERT_EQ(run(std::string("run --mode det --bound 0") + kShort + " --out " + out("det")).code, 0);
  ASSERT_EQ(run(std::string("run --mode cc --gamma 0.5 --bound 0") + kShort + " --out " + out("cc")).code, 0);
  ASSERT_EQ(run(std::string("run --mode cc --gamma 0.5") + kShort + " --out " + out("cc_half")).code, 0);
  ASSERT_EQ(run(std::string("run --mode det") + kShort + " --out " + out("det_half")).code, 0);
  EXPECT_EQ(read_text(out("det/kpi.json")), read_text(out("cc/kpi.json")));
  EXPECT_EQ(read_text(out("det_half/kpi.json")), read_text(out("cc_half/kpi.json")));
}

TEST_F(Cli, SeededRunsAreByteIdentical) {
  ASSERT_EQ(run(std::string("run --mode cc --seed 4 --plot") + kShort + " --out " + out("a")).code, 0);
  ASSERT_EQ(run(std::string("run --mode cc --seed 4") + kShort + " --out " + out("b")).code, 0);
  EXPECT_EQ(read_text(out("a/trace.csv")), read_text(out("b/trace.csv")));
  EXPECT_EQ(read_text(out("a/kpi.json")), read_text(out("b/kpi.json")));
  EXPECT_NE(read_text(out("a/table.txt")).find("seed=4"), std::string::npos);
  EXPECT_TRUE(fs::exists(out("a/plots/volume_T2.svg")));
  EXPECT_FALSE(fs::exists(out("b/plots")));
}

TEST_F(Cli, ConfidenceSweepHasStandardColumns) {
  ASSERT_EQ(run(std::string("sweep --family confidence") + kShort + " --out " + out("s")).code, 0);
  const auto doc = load(out("s/kpi.json"));
  EXPECT_EQ(doc["family"], "confidence");
  std::vector<std::string> labels;
  for (const auto& c : doc["columns"]) {
    labels.push_back(c["label"]);
    const auto& k = c["kpi"];
    EXPECT_NEAR(k["grand_total_m3"].get<double>(),
                k["river_total_m3"].get<double>() + k["creek_total_m3"].get<double>(), 2e-3);
  }
  EXPECT_EQ(labels, (std::vector<std::string>{"MPC", "CC-100%", "CC-90%", "CC-80%", "CC-70%", "CC-60%"}));
  const std::string table = read_text(out("s/table.txt"));
  EXPECT_NE(table.find("CC-60%"), std::string::npos);
  EXPECT_NE(table.find("Tot. %"), std::string::npos);
  EXPECT_TRUE(fs::exists(out("s/CC-90pct/trace.csv")));
  EXPECT_TRUE(fs::exists(out("s/MPC/kpi.json")));
}

TEST_F(Cli, SweepIsIndependentOfJobCount) {
  ASSERT_EQ(run(std::string("sweep --family scale --values 0.8,1.2 --jobs 1") + kShort + " --out " + out("j1")).code,
            0);
  ASSERT_EQ(run(std::string("sweep --family scale --values 0.8,1.2 --jobs 3") + kShort + " --out " + out("j3")).code,
            0);
  EXPECT_EQ(read_text(out("j1/kpi.json")), read_text(out("j3/kpi.json")));
  EXPECT_EQ(read_text(out("j1/table.txt")), read_text(out("j3/table.txt")));
  EXPECT_EQ(load(out("j1/kpi.json"))["columns"].size(), 4u);
}

TEST_F(Cli, SingleValueSweepHasBaselineAndOneRun) {
  ASSERT_EQ(run(std::string("sweep --family confidence --values 0.9") + kShort + " --out " + out("s")).code, 0);
  EXPECT_EQ(load(out("s/kpi.json"))["columns"].size(), 2u);
  EXPECT_EQ(run(std::string("sweep --family nonsense") + kShort + " --out " + out("t")).code, 1);
}

TEST_F(Cli, PlotValidatesItsInputs) {
  ASSERT_EQ(run(std::string("run --mode det") + kShort + " --out " + out("a")).code, 0);
  ASSERT_EQ(run(std::string("run --mode cc") + kShort + " --out " + out("b")).code, 0);
  ASSERT_EQ(run("plot " + out("a/trace.csv") + " " + out("b/trace.csv") + " --out " + out("p")).code, 0);
  int svgs = 0;
  for (const auto& e : fs::directory_iterator(out("p"))) svgs += e.path().extension() == ".svg";
  EXPECT_EQ(svgs, 4);
  EXPECT_NE(read_text(out("p/volume_T3.svg")).find("<polyline"), std::string::npos);

  auto r = run("plot " + out("a/trace.csv") + " --elements \"\" --out " + out("q"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("T1"), std::string::npos) << r.err;
  r = run("plot " + out("a/trace.csv") + " --elements T9 --out " + out("q"));
  EXPECT_EQ(r.code, 1);

  std::string other = read_text(out("b/trace.csv"));
  other.replace(other.find("network=astlingen"), 17, "network=elsewhere");
  std::ofstream(out("other.csv")) << other;
  r = run("plot " + out("a/trace.csv") + " " + out("other.csv") + " --out " + out("q"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("elsewhere"), std::string::npos) << r.err;
}
