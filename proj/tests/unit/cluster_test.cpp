// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "revive/cluster.hpp"

using namespace revive;

namespace {

DeploymentConfig disagg(std::uint32_t dp, std::uint32_t ep, std::uint32_t experts, std::uint32_t replicas = 1) {
  DeploymentConfig c;
  c.mode = DeploymentMode::MADisaggregated;
  c.num_devices = dp + ep;
  c.dp_size = dp;
  c.ep_size = ep;
  c.num_experts = experts;
  c.top_k = 1;
  c.redundant_replicas = uniform_replicas(experts, replicas);
  return c;
}

// Independent placement oracle: expert e's primary is the (e mod ep)-th
// expert device.
std::set<ExpertId> round_robin_oracle(std::uint32_t ep, std::uint32_t experts, std::uint32_t slot) {
  std::set<ExpertId> out;
  for (ExpertId e = slot; e < experts; e += ep) out.insert(e);
  return out;
}

}  // namespace

TEST(BuildCluster, DisaggregatedRoles) {
  Cluster c = build_cluster(disagg(4, 4, 8));
  int attn = 0, moe = 0;
  for (const auto& d : c.devices()) (d.role == DeviceRole::Attention ? attn : moe)++;
  EXPECT_EQ(attn, 4);
  EXPECT_EQ(moe, 4);
}

TEST(BuildCluster, CollocatedRoles) {
  DeploymentConfig cfg = disagg(8, 8, 16);
  cfg.mode = DeploymentMode::MACollocated;
  cfg.num_devices = 8;
  Cluster c = build_cluster(cfg);
  ASSERT_EQ(c.devices().size(), 8u);
  for (const auto& d : c.devices()) EXPECT_EQ(d.role, DeviceRole::Collocated);
}

TEST(BuildCluster, EightExpertsPerDeviceAtEp32) {
  Cluster c = build_cluster(disagg(8, 32, 256));
  for (const auto& d : c.devices())
    if (d.role == DeviceRole::MoE) EXPECT_EQ(c.experts_on_device(d.id).size(), 8u);
}

TEST(BuildCluster, InvalidConfigNamesInvariant) {
  auto cfg = disagg(4, 4, 8);
  cfg.attention_tp = 2;
  EXPECT_THROW(build_cluster(cfg), ConfigError);
  cfg = disagg(4, 4, 8);
  cfg.num_devices = 7;
  try {
    build_cluster(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("dp_size + ep_size"), std::string::npos);
  }
  cfg = disagg(4, 4, 8);
  cfg.redundant_replicas[3] = 0;
  EXPECT_THROW(build_cluster(cfg), ConfigError);
  cfg = disagg(4, 4, 8);
  cfg.redundant_replicas.pop_back();
  EXPECT_THROW(build_cluster(cfg), ConfigError);
}

TEST(ExpertsOnDevice, RoundRobinMatchesOracle) {
  Cluster c = build_cluster(disagg(4, 4, 8));
  // First MoE device is id 4.
  EXPECT_EQ(c.experts_on_device(4), (std::set<ExpertId>{0, 4}));
  for (std::uint32_t slot = 0; slot < 4; ++slot) EXPECT_EQ(c.experts_on_device(4 + slot), round_robin_oracle(4, 8, slot));
}

TEST(ExpertsOnDevice, AttentionDeviceHostsNothing) {
  Cluster c = build_cluster(disagg(4, 4, 8));
  EXPECT_TRUE(c.experts_on_device(0).empty());
}

TEST(ExpertsOnDevice, EmptyAfterRemoval) {
  Cluster c = build_cluster(disagg(4, 4, 8, 2));
  c.remove_device_replicas(5);
  EXPECT_TRUE(c.experts_on_device(5).empty());
}

TEST(ExpertsOnDevice, UnknownDeviceThrows) {
  Cluster c = build_cluster(disagg(4, 4, 8));
  EXPECT_THROW(c.experts_on_device(99), LookupError);
}

TEST(SoleReplica, FullRedundancyGivesEmpty) {
  Cluster c = build_cluster(disagg(4, 4, 8, 2));
  for (const auto& d : c.devices()) EXPECT_TRUE(c.sole_replica_experts(d.id).empty());
}

TEST(SoleReplica, NoRedundancyGivesHostedSet) {
  Cluster c = build_cluster(disagg(4, 4, 8));
  // Device 7 is the fourth MoE device: experts 3 and 7.
  EXPECT_EQ(c.sole_replica_experts(7), (std::set<ExpertId>{3, 7}));
}

TEST(SoleReplica, FailedPeerMakesSurvivorSole) {
  Cluster c = build_cluster(disagg(4, 4, 8, 2));
  const auto& reps = c.replicas_of(5);
  ASSERT_EQ(reps.size(), 2u);
  DeviceId d1 = reps[0], d2 = reps[1];
  c.set_health(d2, Health::Failed);
  // Set-intersection oracle: experts on d1 whose other replicas are all unhealthy.
  std::set<ExpertId> oracle;
  for (ExpertId e : c.experts_on_device(d1)) {
    bool other = false;
    for (DeviceId r : c.replicas_of(e)) other |= r != d1 && c.device(r).health == Health::Healthy;
    if (!other) oracle.insert(e);
  }
  auto sole = c.sole_replica_experts(d1);
  EXPECT_TRUE(sole.count(5));
  EXPECT_EQ(sole, oracle);
}

TEST(Placement, TotalityDistinctDevicesAndNoAttention) {
  for (std::uint32_t r = 1; r <= 4; ++r) {
    auto cfg = disagg(6, 10, 64, r);
    cfg.redundant_replicas[0] = 4;
    Cluster c = build_cluster(cfg);
    std::size_t total = 0;
    for (ExpertId e = 0; e < 64; ++e) {
      const auto& reps = c.replicas_of(e);
      ASSERT_FALSE(reps.empty());
      EXPECT_EQ(reps.size(), cfg.redundant_replicas[e]);
      EXPECT_EQ(std::set<DeviceId>(reps.begin(), reps.end()).size(), reps.size());
      for (DeviceId d : reps) EXPECT_EQ(c.device(d).role, DeviceRole::MoE);
      total += reps.size();
    }
    EXPECT_EQ(total, c.materialized_shards());
  }
}

TEST(Placement, RemapLeavesUninvolvedExpertsUnchanged) {
  auto cfg = disagg(4, 8, 32, 1);
  for (ExpertId e = 0; e < 32; e += 3) cfg.redundant_replicas[e] = 2;
  for (ExpertId e = 1; e < 32; e += 5) cfg.redundant_replicas[e] = 3;
  Cluster c = build_cluster(cfg);
  auto sole_owner = [](const Cluster& cl) {
    std::map<ExpertId, DeviceId> out;
    for (const auto& d : cl.devices())
      if (d.health == Health::Healthy)
        for (ExpertId e : cl.sole_replica_experts(d.id)) out[e] = d.id;
    return out;
  };
  for (DeviceId failed = 4; failed < 12; ++failed) {
    Cluster work = c;
    auto before = sole_owner(work);
    auto involved = work.experts_on_device(failed);
    work.set_health(failed, Health::Failed);
    work.remove_device_replicas(failed);
    auto after = sole_owner(work);
    for (ExpertId e = 0; e < 32; ++e) {
      if (involved.count(e)) continue;
      EXPECT_EQ(before.count(e), after.count(e)) << "expert " << e;
      if (before.count(e)) EXPECT_EQ(before[e], after[e]);
    }
    // Three-way replicated experts never become sole after one loss.
    for (ExpertId e = 1; e < 32; e += 5)
      if (e % 3 != 0) EXPECT_FALSE(after.count(e));
  }
}

TEST(DenseFfnGroups, ContiguousBlocksEqualWeights) {
  auto cfg = disagg(4, 12, 24);
  cfg.num_dense_ffn_groups = 3;
  cfg.dense_ffn_tp = 4;
  Cluster c = build_cluster(cfg);
  ASSERT_EQ(c.dense_groups().size(), 3u);
  for (std::uint32_t g = 0; g < 3; ++g) {
    const auto& grp = c.dense_groups()[g];
    EXPECT_EQ(grp.members, (std::vector<DeviceId>{4 + 4 * g, 5 + 4 * g, 6 + 4 * g, 7 + 4 * g}));
    EXPECT_DOUBLE_EQ(grp.routing_weight, 1.0 / 3);
  }
  cfg.num_dense_ffn_groups = 4;
  EXPECT_THROW(build_cluster(cfg), ConfigError);
}
