// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <set>
#include <string_view>

namespace revive {

using DeviceId = std::uint32_t;
using ExecutorId = DeviceId;  // one executor process per device
using ExpertId = std::uint32_t;
using SeqId = std::uint64_t;
using BlockId = std::uint32_t;
using TokenId = std::uint32_t;
using Rank = std::uint32_t;

// Simulation clock, seconds.
using SimTime = double;

// Experts that must never be selected by the router.
using ExpertMask = std::set<ExpertId>;

enum class DeploymentMode { MACollocated, MADisaggregated };
enum class DeviceRole { Attention, MoE, Collocated };
enum class Health { Healthy, Failed, Isolated };

constexpr std::string_view to_string(DeploymentMode m) {
  return m == DeploymentMode::MACollocated ? "MACollocated" : "MADisaggregated";
}

constexpr std::string_view to_string(DeviceRole r) {
  switch (r) {
    case DeviceRole::Attention: return "Attention";
    case DeviceRole::MoE: return "MoE";
    case DeviceRole::Collocated: return "Collocated";
  }
  return "?";
}

constexpr std::string_view to_string(Health h) {
  switch (h) {
    case Health::Healthy: return "Healthy";
    case Health::Failed: return "Failed";
    case Health::Isolated: return "Isolated";
  }
  return "?";
}

constexpr bool hosts_attention(DeviceRole r) {
  return r == DeviceRole::Attention || r == DeviceRole::Collocated;
}

constexpr bool hosts_experts(DeviceRole r) {
  return r == DeviceRole::MoE || r == DeviceRole::Collocated;
}

}  // namespace revive
