#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cbnet/cli.hpp"
#include "cbnet/task.hpp"

using namespace cbnet;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cbnet_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  const std::vector<char> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return {data.begin(), data.end()};
}

}  // namespace

TEST(Cli, SummarizeReportsAhlcConnections) {
  const CliResult r = run({"summarize", "--k", "2", "--style", "ahlc"});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("composite_connections=4\n"), std::string::npos) << r.out;
}

TEST(Cli, SummarizeSlcAndDhlc) {
  const CliResult slc = run({"summarize", "--style", "slc"});
  EXPECT_NE(slc.out.find("composite_connections=0\n"), std::string::npos);
  EXPECT_NE(slc.out.find("direct_additions=4\n"), std::string::npos);
  const CliResult dhlc = run({"summarize", "--style", "dhlc"});
  EXPECT_NE(dhlc.out.find("composite_connections=10\n"), std::string::npos);
}

TEST(Cli, GradcheckDhlcToyPasses) {
  const CliResult r = run({"gradcheck", "--k", "2", "--style", "dhlc", "--toy"});
  EXPECT_EQ(r.code, kExitOk) << r.out << r.err;
  EXPECT_NE(r.out.find("gradcheck PASS"), std::string::npos);
  const auto pos = r.out.find("max_relative_error=");
  ASSERT_NE(pos, std::string::npos);
  EXPECT_LT(std::stod(r.out.substr(pos + 19)), 1e-3);
}

TEST(Cli, GradcheckExitCodeFollowsTolerance) {
  // Same model at a tolerance no finite-difference check can meet.
  const CliResult r = run({"gradcheck", "--k", "1", "--toy", "--tolerance", "1e-30"});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_NE(r.out.find("gradcheck FAIL"), std::string::npos);
}

TEST(Cli, TrainWithZeroStepsWritesInitialWeights) {
  const fs::path dir = scratch("train0");
  const CliResult r = run({"train", "--k", "1", "--steps", "0", "--out", dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  CBNetConfig cfg;
  cfg.k = 1;
  CBNet net = build_cbnet(cfg, 42);
  Head head = make_head(cfg.spec, 42);
  EXPECT_EQ(load_weights(dir / "weights.cbnw"), export_model(net, head));
  EXPECT_TRUE(fs::exists(dir / "loss.csv"));
  fs::remove_all(dir);
}

TEST(Cli, TrainThenEvalReloadsWeights) {
  const fs::path dir = scratch("train_eval");
  const CliResult t = run({"train", "--toy", "--k", "2", "--steps", "3", "--n", "8", "--out", dir.string()});
  ASSERT_EQ(t.code, kExitOk) << t.err;
  const auto csv = read_bytes(dir / "loss.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  const CliResult e = run({"eval", "--toy", "--k", "2", "--n", "8", "--weights-in", (dir / "weights.cbnw").string()});
  EXPECT_EQ(e.code, kExitOk) << e.err;
  EXPECT_NE(t.out.find(e.out), std::string::npos) << t.out << "\n" << e.out;
  fs::remove_all(dir);
}

TEST(Cli, UnknownFlagOrSubcommandIsUsageError) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {"summarize", "--bogus"}, {"frobnicate"}, {}, {"summarize", "--k", "zero"}}) {
    const CliResult r = run(args);
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
    EXPECT_TRUE(r.out.empty());
  }
}

TEST(Cli, InvalidConfigIsUsageError) {
  EXPECT_EQ(run({"summarize", "--k", "3", "--accelerated"}).code, kExitUsage);
  EXPECT_EQ(run({"summarize", "--style", "nope"}).code, kExitUsage);
}

TEST(Cli, VizWritesOnePgmPerLevel) {
  const fs::path dir = scratch("viz");
  const CliResult r = run({"viz", "--out", dir.string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto level2 = read_bytes(dir / "level2.pgm");
  const auto level5 = read_bytes(dir / "level5.pgm");
  const std::string h2 = "P5\n16 16\n255\n", h5 = "P5\n2 2\n255\n";
  ASSERT_EQ(level2.size(), h2.size() + 256);
  ASSERT_EQ(level5.size(), h5.size() + 4);
  EXPECT_EQ(std::string(level2.begin(), level2.begin() + static_cast<long>(h2.size())), h2);
  EXPECT_EQ(std::string(level5.begin(), level5.begin() + static_cast<long>(h5.size())), h5);

  const CliResult again = run({"viz", "--level", "3", "--out", dir.string()});
  EXPECT_EQ(again.code, kExitOk);
  EXPECT_EQ(read_bytes(dir / "level3.pgm").size(), std::string("P5\n8 8\n255\n").size() + 64);
  EXPECT_EQ(run({"viz", "--level", "6", "--out", dir.string()}).code, kExitUsage);
  fs::remove_all(dir);
}

TEST(Cli, RerunsAreByteIdentical) {
  const fs::path a = scratch("rerun_a"), b = scratch("rerun_b");
  for (const fs::path& dir : {a, b}) {
    ASSERT_EQ(run({"train", "--toy", "--steps", "2", "--n", "8", "--out", dir.string()}).code, kExitOk);
    ASSERT_EQ(run({"viz", "--toy", "--out", dir.string()}).code, kExitOk);
  }
  for (const char* file : {"weights.cbnw", "loss.csv", "level2.pgm", "level4.pgm"}) {
    EXPECT_EQ(read_bytes(a / file), read_bytes(b / file)) << file;
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, FlopsListsConfigurations) {
  const CliResult r = run({"flops"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("single"), std::string::npos);
  EXPECT_NE(r.out.find("dual-accelerated"), std::string::npos);
}
