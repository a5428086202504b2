// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "revive/scenario.hpp"

using namespace revive;

namespace {

const char* kMinimal = R"(name: mini
seed: 5
deployment:
  mode: MADisaggregated
  num_devices: 8
  dp_size: 4
  ep_size: 4
  num_experts: 16
  top_k: 2
workload:
  sequences:
    - {prompt_len: 10, decode_target: 5}
    - {prompt_len: 3, arrival: 0.2, decode_target: 9}
faults:
  - {device: 1, time: 0.3, level: L6}
)";

ParseError parse_error(const std::string& text) {
  try {
    parse_scenario(text);
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "expected a parse error";
  return ParseError(0, "", "");
}

}  // namespace

TEST(Scenario, ParsesMinimal) {
  Scenario s = parse_scenario(kMinimal);
  EXPECT_EQ(s.name, "mini");
  EXPECT_EQ(s.seed, 5u);
  EXPECT_EQ(s.deployment.redundant_replicas, uniform_replicas(16, 1));
  ASSERT_EQ(s.workload.size(), 2u);
  EXPECT_EQ(s.workload[1].prompt_len, 3u);
  EXPECT_DOUBLE_EQ(s.workload[1].arrival, 0.2);
  EXPECT_EQ(s.covered_fault().device, 1u);
  EXPECT_DOUBLE_EQ(s.latency.full_compile, 774.0);
}

TEST(Scenario, Overrides) {
  Scenario s = parse_scenario(kMinimal, {77, "zero"});
  EXPECT_EQ(s.seed, 77u);
  EXPECT_DOUBLE_EQ(s.latency.full_compile, 0.0);
}

TEST(Scenario, LatencyOverrides) {
  std::string text = std::string(kMinimal) + "latencies:\n  full_compile: 10\n  xccl: {create_domain: 2.5}\n";
  Scenario s = parse_scenario(text);
  EXPECT_DOUBLE_EQ(s.latency.full_compile, 10.0);
  EXPECT_DOUBLE_EQ(s.latency.xccl.create_domain, 2.5);
}

TEST(Scenario, MalformedYamlHasLine) {
  auto e = parse_error("name: x\ndeployment:\n  mode: [unclosed\n");
  EXPECT_GT(e.line(), 0u);
}

TEST(Scenario, UnknownFieldNamesPathAndLine) {
  std::string text = kMinimal;
  text.replace(text.find("  top_k: 2"), 10, "  top_k: 2\n  topk: 3");
  auto e = parse_error(text);
  EXPECT_EQ(e.field(), "deployment.topk");
  EXPECT_EQ(e.line(), 10u);
}

TEST(Scenario, WrongTypeNamesField) {
  std::string text = kMinimal;
  text.replace(text.find("dp_size: 4"), 10, "dp_size: four");
  auto e = parse_error(text);
  EXPECT_EQ(e.field(), "deployment.dp_size");
  EXPECT_EQ(e.line(), 6u);
}

TEST(Scenario, BadLevel) {
  std::string text = kMinimal;
  text.replace(text.find("L6"), 2, "L9");
  EXPECT_EQ(parse_error(text).field(), "faults[0].level");
}

TEST(Scenario, RequiresExactlyOneCoveredFault) {
  std::string two = std::string(kMinimal) + "  - {device: 2, time: 0.4, level: L5}\n";
  EXPECT_THROW(parse_scenario(two), ParseError);
  std::string benign = kMinimal;
  benign.replace(benign.find("L6"), 2, "L2");
  EXPECT_THROW(parse_scenario(benign), ParseError);
  // A log-only fault next to the covered one is fine.
  std::string mixed = std::string(kMinimal) + "  - {device: 2, time: 0.1, level: L3}\n";
  EXPECT_EQ(parse_scenario(mixed).faults.size(), 2u);
}

TEST(Scenario, FaultPolicyTable) {
  std::string text = kMinimal;
  text.replace(text.find("L6"), 2, "L3");
  text += "policy:\n  fault_actions: {L3: TriggerRecovery}\n";
  EXPECT_EQ(parse_scenario(text).covered_fault().device, 1u);
}

TEST(Scenario, MissingDeployment) {
  auto e = parse_error("name: x\n");
  EXPECT_EQ(e.field(), "deployment");
}

TEST(Scenario, InvalidDeploymentIsParseError) {
  std::string text = kMinimal;
  text.replace(text.find("num_devices: 8"), 14, "num_devices: 9");
  EXPECT_THROW(parse_scenario(text), ParseError);
}

TEST(Scenario, GeneratedWorkloadDeterministic) {
  std::string text = std::string(kMinimal);
  text.replace(text.find("workload:"), text.find("faults:") - text.find("workload:"),
               "workload:\n  generate: {count: 20, prompt_min: 4, prompt_max: 9, decode_min: 1, decode_max: 3, arrival_span: 2.0}\n");
  Scenario a = parse_scenario(text), b = parse_scenario(text);
  ASSERT_EQ(a.workload.size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(a.workload[i].prompt_len, b.workload[i].prompt_len);
    EXPECT_GE(a.workload[i].prompt_len, 4u);
    EXPECT_LE(a.workload[i].prompt_len, 9u);
    EXPECT_LT(a.workload[i].arrival, 2.0);
  }
}

TEST(Scenario, ShippedFilesParse) {
  for (const char* f : {"attention_failure", "moe_redundant", "moe_role_switch", "moe_missing_experts",
                        "moe_background_switch", "dense_ffn_rebalance", "collocated_failure",
                        "uncovered_configuration", "single_attention_abort", "silent_failure_heartbeat"})
    EXPECT_NO_THROW(load_scenario_file(std::string(REVIVE_SOURCE_DIR) + "/scenarios/" + f + ".yaml")) << f;
}

TEST(Scenario, MissingFileIsIoError) {
  EXPECT_THROW(load_scenario_file("/nonexistent/x.yaml"), IoError);
}
