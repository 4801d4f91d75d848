// End-to-end tests that drive the actual binary. The path to it comes in
// through --cli (wired up by ctest).
#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "scanet/data.hpp"
#include "scanet/metrics.hpp"

namespace {

std::string g_cli;
std::string g_src;
std::string g_work;

int run_cli(const std::string& args) {
  const std::string cmd = g_cli + " " + args + " >" + g_work + "/stdout.txt 2>" + g_work +
                          "/stderr.txt";
  const int status = std::system(cmd.c_str());
  if (status < 0) return -1;
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("help exits 0 on every subcommand") {
  CHECK(run_cli("--help") == 0);
  for (const char* sub : {"simulate", "prepare", "train", "disaggregate", "evaluate", "export",
                          "ablate"}) {
    CAPTURE(sub);
    CHECK(run_cli(std::string(sub) + " --help") == 0);
  }
}

TEST_CASE("unknown flags exit 2 with usage text") {
  CHECK(run_cli("--no-such-flag") == 2);
  CHECK(run_cli("simulate --bogus x") == 2);
  CHECK(slurp(g_work + "/stderr.txt").find("Usage") != std::string::npos);
}

TEST_CASE("runtime failures exit 1 with a message") {
  CHECK(run_cli("simulate --spec missing.spec --out " + g_work + "/x") == 1);
  CHECK(slurp(g_work + "/stderr.txt").find("error:") != std::string::npos);
}

TEST_CASE("full tiny pipeline: simulate, prepare, train, disaggregate, evaluate, export") {
  const std::string dir = g_work + "/pipeline";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  REQUIRE(run_cli("simulate --spec " + g_src + "/configs/tiny_household.spec --out " + dir + "/sim") == 0);
  REQUIRE(std::filesystem::exists(dir + "/sim/manifest.txt"));
  REQUIRE(run_cli("prepare --manifest " + dir + "/sim/manifest.txt --appliance fridge --out " +
                  dir + "/data --config " + g_src + "/configs/tiny.conf") == 0);
  REQUIRE(run_cli("train --model scanet --data " + dir + "/data --config " + g_src + "/configs/tiny.conf "
                  "--out " + dir + "/fridge.ckpt --seed 7") == 0);
  REQUIRE(std::filesystem::exists(dir + "/fridge.ckpt.history.csv"));
  REQUIRE(run_cli("disaggregate --ckpt " + dir + "/fridge.ckpt --mains " + dir +
                  "/sim/house2/mains.dat --out " + dir + "/pred.csv") == 0);
  REQUIRE(run_cli("evaluate --pred " + dir + "/pred.csv --truth " + dir +
                  "/sim/house2/fridge.dat --report " + dir + "/report.txt --sae-periods 40") ==
          0);
  const scanet::MetricsReport report = scanet::read_report(dir + "/report.txt");
  CHECK(report.appliance == "fridge");
  CHECK(report.mae > 0.0);
  CHECK(report.mae < 60.0);
  REQUIRE(run_cli("export --ckpt " + dir + "/fridge.ckpt --what attention --mains " + dir +
                  "/sim/house2/mains.dat --window-index 2 --out " + dir + "/exports") == 0);
  CHECK(std::filesystem::exists(dir + "/exports/attention_on.csv"));
  CHECK(std::filesystem::exists(dir + "/exports/index.json"));
}

TEST_CASE("evaluate on a perfect prediction reports zero error") {
  const std::string dir = g_work + "/perfect";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  scanet::TimeSeries truth;
  for (int i = 0; i < 100; ++i) {
    truth.timestamps.push_back(1000 + i);
    truth.values.push_back(i % 7 == 0 ? 120.0 : 0.0);
  }
  scanet::save_channel(dir + "/truth.dat", truth);
  {
    std::ofstream os(dir + "/pred.csv");
    os << "timestamp,watts\n";
    for (size_t i = 0; i < truth.size(); ++i) {
      os << truth.timestamps[i] << "," << truth.values[i] << "\n";
    }
  }
  REQUIRE(run_cli("evaluate --pred " + dir + "/pred.csv --truth " + dir +
                  "/truth.dat --report " + dir + "/report.txt --sae-periods 10") == 0);
  const scanet::MetricsReport report = scanet::read_report(dir + "/report.txt");
  CHECK(report.mae == 0.0);
  CHECK(report.sae == 0.0);
  CHECK(report.f1 == 1.0);
}

TEST_CASE("train --adv with lambda_adv 0 warns and runs supervised") {
  const std::string dir = g_work + "/advwarn";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  // config with the adversarial weight zeroed
  {
    std::ifstream is(g_src + "/configs/tiny.conf");
    std::ofstream os(dir + "/config.conf");
    std::string line;
    while (std::getline(is, line)) {
      if (line.rfind("lambda_adv", 0) == 0) line = "lambda_adv = 0";
      if (line.rfind("epochs", 0) == 0) line = "epochs = 1";
      os << line << "\n";
    }
  }
  REQUIRE(run_cli("simulate --spec " + g_src + "/configs/tiny_household.spec --out " + dir + "/sim") == 0);
  REQUIRE(run_cli("prepare --manifest " + dir + "/sim/manifest.txt --appliance fridge --out " +
                  dir + "/data --config " + dir + "/config.conf") == 0);
  REQUIRE(run_cli("train --model sgn --data " + dir + "/data --config " + dir +
                  "/config.conf --out " + dir + "/m.ckpt --adv --seed 3") == 0);
  CHECK(slurp(g_work + "/stderr.txt").find("supervised") != std::string::npos);
}

TEST_SUITE_END();

int main(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--cli" && i + 1 < argc) g_cli = argv[i + 1];
    if (std::string(argv[i]) == "--src" && i + 1 < argc) g_src = argv[i + 1];
  }
  if (g_cli.empty() || g_src.empty()) {
    std::fprintf(stderr, "usage: cli_tests --cli <scanet-binary> --src <project-root>\n");
    return 1;
  }
  g_work = std::filesystem::absolute("cli_test_work").string();
  std::filesystem::create_directories(g_work);
  doctest::Context ctx;
  const int failures = ctx.run();
  std::filesystem::remove_all(g_work);
  return failures;
}
