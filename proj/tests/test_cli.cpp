#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("isfl_cli_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// Runs the CLI with `args`, returns its exit code; stdout goes to `out`.
int cli(const std::string& args, const fs::path& out = "/dev/null") {
  const std::string cmd = std::string(ISFL_CLI_PATH) + " " + args + " > " + out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  const auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

fs::path write_json(const fs::path& dir, const std::string& name, const json& j) {
  const auto p = dir / name;
  std::ofstream(p) << j.dump();
  return p;
}

json tiny_config() {
  return {{"classes", 3},      {"per_class", 60},      {"dim", 4},         {"clients", 3},
          {"shard_size", 20},  {"shards_per_client", 2}, {"nr", 0.8},      {"hidden", {6}},
          {"rounds", 2},       {"local_epochs", 2},    {"batch_size", 8},  {"eta", 0.05},
          {"probe_size", 12},  {"threads", 1},         {"sr_list", {0.25, 0.5, 1.0}}};
}

}  // namespace

TEST(Cli, SolveWorkedInstance) {
  const auto dir = scratch("solve");
  const auto in = write_json(dir, "in.json", {{"p", {0.5, 0.3, 0.2}}, {"p_k", {0.8, 0.1, 0.1}}, {"L", {1, 2, 3}},
                                              {"varpi", 0.05}});
  ASSERT_EQ(cli("solve --input " + in.string(), dir / "out.json"), 0);
  const auto out = json::parse(slurp(dir / "out.json"));
  EXPECT_NEAR(out["gamma_star"].get<double>(), 0.2572, 1e-4);
  EXPECT_EQ(out["q"][2].get<double>(), 0.05 * 0.1);
  EXPECT_LT(out["exact"]["rho"].get<double>(), out["rho"].get<double>());
  ASSERT_EQ(cli("solve --input " + in.string() + " --out " + (dir / "file.json").string()), 0);
  EXPECT_EQ(json::parse(slurp(dir / "file.json")), out);
}

TEST(Cli, SolveEqualLReturnsP) {
  const auto dir = scratch("solve_equal");
  const auto in = write_json(dir, "in.json", {{"p", {0.5, 0.3, 0.2}}, {"p_k", {0.8, 0.1, 0.1}}, {"L", {2, 2, 2}}});
  ASSERT_EQ(cli("solve --input " + in.string(), dir / "out.json"), 0);
  const auto out = json::parse(slurp(dir / "out.json"));
  EXPECT_TRUE(out["alpha_degenerate"].get<bool>());
  EXPECT_EQ(out["gamma_star"].get<double>(), 0.0);
  EXPECT_EQ(out["q"].get<std::vector<double>>(), (std::vector<double>{0.5, 0.3, 0.2}));
}

TEST(Cli, ErrorExitCodes) {
  const auto dir = scratch("errors");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_EQ(cli("solve --input " + (dir / "bad.json").string()), 1);
  EXPECT_EQ(cli("solve --input " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(cli("run --config " + (dir / "bad.json").string()), 1);
  auto unknown = tiny_config();
  unknown["learning_rate"] = 0.1;
  EXPECT_EQ(cli("run --config " + write_json(dir, "unknown.json", unknown).string()), 1);
  auto capacity = tiny_config();
  capacity["clients"] = 50;
  EXPECT_EQ(cli("partition --config " + write_json(dir, "cap.json", capacity).string() + " --out " +
                (dir / "cap").string()),
            3);
  EXPECT_EQ(cli("no-such-command"), 1);
  EXPECT_EQ(cli(""), 1);
}

TEST(Cli, PartitionWritesManifestDeterministically) {
  const auto dir = scratch("partition");
  auto c = tiny_config();
  const auto cfg = write_json(dir, "c.json", c);
  ASSERT_EQ(cli("partition --config " + cfg.string() + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(cli("partition --config " + cfg.string() + " --out " + (dir / "b").string()), 0);
  EXPECT_EQ(slurp(dir / "a" / "partition.json"), slurp(dir / "b" / "partition.json"));
  const auto m = json::parse(slurp(dir / "a" / "partition.json"));
  EXPECT_EQ(m["clients"].size(), 3u);
}

TEST(Cli, RunWritesArtifactsAndIsByteIdentical) {
  const auto dir = scratch("run");
  auto c = tiny_config();
  c["rounds"] = 1;
  const auto cfg = write_json(dir, "c.json", c);
  ASSERT_EQ(cli("run --config " + cfg.string() + " --seed 3 --out " + (dir / "a").string()), 0);
  ASSERT_EQ(cli("run --config " + cfg.string() + " --seed 3 --out " + (dir / "b").string()), 0);
  for (const char* s : {"fedavg", "rw_is", "gradnorm_is", "isfl"}) {
    const auto run_dir = dir / "a" / s / "seed_3";
    for (const char* f : {"metrics.csv", "bounds.csv", "diagnostics.jsonl"}) {
      ASSERT_TRUE(fs::exists(run_dir / f)) << run_dir / f;
      EXPECT_EQ(slurp(run_dir / f), slurp(dir / "b" / s / "seed_3" / f)) << f;
    }
    // manifests differ only in the output directory
    const auto ma = json::parse(slurp(run_dir / "manifest.json"));
    const auto mb = json::parse(slurp(dir / "b" / s / "seed_3" / "manifest.json"));
    EXPECT_EQ(ma["run_id"], mb["run_id"]);
    EXPECT_EQ(ma["strategy"], s);
    EXPECT_EQ(line_count(run_dir / "metrics.csv"), 2u);
  }
  EXPECT_EQ(slurp(dir / "a" / "plot.csv"), slurp(dir / "b" / "plot.csv"));
}

TEST(Cli, SweepMatchesRunAtFullSamplingRatio) {
  const auto dir = scratch("sweep");
  auto c = tiny_config();
  c["strategies"] = {"fedavg"};
  const auto cfg = write_json(dir, "c.json", c);
  ASSERT_EQ(cli("sweep-sr --config " + cfg.string() + " --seed 0 --out " + (dir / "s").string()), 0);
  ASSERT_EQ(cli("run --config " + cfg.string() + " --seed 0 --out " + (dir / "r").string()), 0);
  EXPECT_EQ(line_count(dir / "s" / "sweep_sr.csv"), 1u + 3u * 3u);
  std::istringstream sweep(slurp(dir / "s" / "sweep_sr.csv"));
  std::string line, full;
  while (std::getline(sweep, line))
    if (line.rfind("fedavg,1,", 0) == 0) full = line;
  ASSERT_FALSE(full.empty());
  std::istringstream metrics(slurp(dir / "r" / "fedavg" / "seed_0" / "metrics.csv"));
  std::string last;
  while (std::getline(metrics, line)) last = line;
  // metrics: round,loss,acc_S,acc_G,... ; sweep: strategy,sr,seed,acc_S,acc_G
  auto field = [](const std::string& s, int i) {
    std::istringstream ss(s);
    std::string f;
    for (int k = 0; k <= i; ++k) std::getline(ss, f, ',');
    return f;
  };
  EXPECT_EQ(field(full, 3), field(last, 2));
  EXPECT_EQ(field(full, 4), field(last, 3));
}

TEST(Cli, BoundsPrintsTable) {
  const auto dir = scratch("bounds");
  const auto cfg = write_json(dir, "c.json", tiny_config());
  ASSERT_EQ(cli("bounds --config " + cfg.string() + " --out " + (dir / "b").string(), dir / "stdout.txt"), 0);
  EXPECT_NE(slurp(dir / "stdout.txt").find("bound_rhs"), std::string::npos);
  EXPECT_EQ(line_count(dir / "b" / "isfl" / "seed_0" / "bounds.csv"), 3u);
}
