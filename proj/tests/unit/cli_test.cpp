// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "revive/cli.hpp"

using namespace revive;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "revive");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int code = cli::main_entry(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string scenario(const std::string& name) { return std::string(REVIVE_SOURCE_DIR) + "/scenarios/" + name + ".yaml"; }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("revive-cli-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& n) const { return (path / n).string(); }
};

}  // namespace

TEST(Cli, RunAttentionFailure) {
  TempDir d("run");
  auto r = invoke({"run", "--scenario", scenario("attention_failure"), "--out", d.file("t.jsonl")});
  EXPECT_EQ(r.code, cli::kOk) << r.err;
  auto t = parse_trace_jsonl(read_text_file(d.file("t.jsonl")));
  EXPECT_NEAR(t.total(), 10.2, 0.1);
}

TEST(Cli, MalformedFileIsParseErrorWithLine) {
  TempDir d("bad");
  { std::ofstream(d.file("bad.yaml")) << "name: x\ndeployment:\n  mode: MADisaggregated\n  num_devices: [\n"; }
  auto r = invoke({"run", "--scenario", d.file("bad.yaml")});
  EXPECT_EQ(r.code, cli::kParseError);
  EXPECT_NE(r.err.find("line"), std::string::npos) << r.err;
}

TEST(Cli, ZeroSurvivorsAborts) {
  auto r = invoke({"run", "--scenario", scenario("single_attention_abort")});
  EXPECT_EQ(r.code, cli::kAborted);
  EXPECT_NE(r.out.find("\"outcome\":\"Aborted\""), std::string::npos);
}

TEST(Cli, MissingScenarioFileIsIoError) {
  EXPECT_EQ(invoke({"run", "--scenario", "/nonexistent/s.yaml"}).code, cli::kIoError);
}

TEST(Cli, CompareReportsReduction) {
  TempDir d("cmp");
  ASSERT_EQ(invoke({"run", "--scenario", scenario("attention_failure"), "--out", d.file("r.jsonl")}).code, 0);
  ASSERT_EQ(invoke({"run", "--baseline", "--scenario", scenario("attention_failure"), "--out", d.file("b.jsonl")}).code, 0);
  auto r = invoke({"compare", d.file("r.jsonl"), d.file("b.jsonl"), "--out", d.file("c.json")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("reduction 87.80%"), std::string::npos) << r.out;
  auto j = nlohmann::json::parse(read_text_file(d.file("c.json")));
  EXPECT_NEAR(j.at("reduction").get<double>(), 0.878, 0.002);

  auto same = invoke({"compare", d.file("b.jsonl"), d.file("b.jsonl")});
  EXPECT_NE(same.out.find("reduction 0.00%"), std::string::npos) << same.out;
}

TEST(Cli, CompareWithoutBaselineIsUsageError) {
  TempDir d("cmp1");
  ASSERT_EQ(invoke({"run", "--scenario", scenario("attention_failure"), "--out", d.file("r.jsonl")}).code, 0);
  EXPECT_EQ(invoke({"compare", d.file("r.jsonl")}).code, cli::kUsage);
}

TEST(Cli, CompareMismatchWarns) {
  TempDir d("cmp2");
  ASSERT_EQ(invoke({"run", "--scenario", scenario("attention_failure"), "--out", d.file("a.jsonl")}).code, 0);
  ASSERT_EQ(invoke({"run", "--baseline", "--scenario", scenario("moe_redundant"), "--out", d.file("b.jsonl")}).code, 0);
  auto r = invoke({"compare", d.file("a.jsonl"), d.file("b.jsonl")});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("warning"), std::string::npos);
}

TEST(Cli, PrecompileThreeKeysThenIdempotent) {
  TempDir d("pre");
  auto sc = d.file("dp4.yaml");
  {
    std::ofstream(sc) << "deployment: {mode: MADisaggregated, num_devices: 8, dp_size: 4, ep_size: 4, num_experts: 16}\n"
                         "faults: [{device: 0, time: 1.0}]\n";
  }
  auto r = invoke({"precompile", "--scenario", sc, "--store", d.file("store")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("3 new"), std::string::npos) << r.out;
  auto again = invoke({"precompile", "--scenario", sc, "--store", d.file("store")});
  EXPECT_NE(again.out.find("0 new"), std::string::npos) << again.out;
}

TEST(Cli, PrecompileUnwritableStoreIsIoError) {
  TempDir d("pre2");
  { std::ofstream(d.file("blocker")) << "x"; }
  auto r = invoke({"precompile", "--scenario", scenario("attention_failure"), "--store", d.file("blocker") + "/sub"});
  EXPECT_EQ(r.code, cli::kIoError);
}

TEST(Cli, StoreFromEnvironment) {
  TempDir d("env");
  ::setenv(cli::kStoreEnv, d.file("envstore").c_str(), 1);
  auto r = invoke({"precompile", "--scenario", scenario("attention_failure")});
  ::unsetenv(cli::kStoreEnv);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(d.file("envstore")));
  EXPECT_EQ(std::distance(fs::directory_iterator(d.file("envstore")), fs::directory_iterator{}), 3);
}

TEST(Cli, RunUsesPersistentStore) {
  TempDir d("store");
  auto r = invoke({"run", "--scenario", scenario("uncovered_configuration"), "--store", d.file("s"), "--out",
                d.file("1.jsonl")});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(parse_trace_jsonl(read_text_file(d.file("1.jsonl"))).category_totals().count(Category::FullCompile), 1u);
  // The full compile populated the store; the second run hits it.
  invoke({"run", "--scenario", scenario("uncovered_configuration"), "--store", d.file("s"), "--out", d.file("2.jsonl")});
  auto t2 = parse_trace_jsonl(read_text_file(d.file("2.jsonl")));
  EXPECT_EQ(t2.category_totals().count(Category::FullCompile), 0u);
  EXPECT_DOUBLE_EQ(t2.category_totals().at(Category::Compile), 6.0);
}

TEST(Cli, SeedAndProfileOverrides) {
  auto r = invoke({"run", "--scenario", scenario("attention_failure"), "--profile", "zero", "--seed", "99"});
  EXPECT_EQ(r.code, 0);
  auto t = parse_trace_jsonl(r.out);
  EXPECT_EQ(t.seed, 99u);
  EXPECT_DOUBLE_EQ(t.total(), 0.0);
  EXPECT_EQ(invoke({"run", "--scenario", scenario("attention_failure"), "--profile", "nope"}).code, cli::kParseError);
}

TEST(Cli, RouteSim) {
  auto r = invoke({"route-sim", "--experts", "256", "--ratio", "1/2", "--tokens", "64"});
  EXPECT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("masked").size(), 128u);
  EXPECT_TRUE(j.at("mask_exclusion").get<bool>());
  EXPECT_EQ(invoke({"route-sim", "--ratio", "2/3"}).code, cli::kParseError);
  EXPECT_EQ(invoke({"route-sim", "--selection", "random"}).code, cli::kParseError);
}

TEST(Cli, InspectAndValidate) {
  auto v = invoke({"validate", "--scenario", scenario("moe_role_switch")});
  EXPECT_EQ(v.code, 0);
  EXPECT_EQ(v.out.rfind("ok: moe_role_switch", 0), 0u);
  auto i = invoke({"inspect", "--scenario", scenario("dense_ffn_rebalance")});
  EXPECT_EQ(i.code, 0);
  EXPECT_NE(i.out.find("dense-ffn group 2"), std::string::npos);
  auto run = invoke({"run", "--scenario", scenario("moe_background_switch")});
  TempDir d("insp");
  { std::ofstream(d.file("t.jsonl")) << run.out; }
  auto it = invoke({"inspect", d.file("t.jsonl")});
  EXPECT_EQ(it.code, 0);
  EXPECT_NE(it.out.find("background"), std::string::npos);
  EXPECT_EQ(invoke({"inspect"}).code, cli::kUsage);
}

TEST(Cli, NoSubcommandIsUsageError) { EXPECT_EQ(invoke({}).code, cli::kUsage); }
