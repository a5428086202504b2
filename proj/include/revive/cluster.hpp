// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "revive/error.hpp"
#include "revive/types.hpp"

namespace revive {

struct DeploymentConfig {
  DeploymentMode mode = DeploymentMode::MADisaggregated;
  std::uint32_t num_devices = 0;
  std::uint32_t dp_size = 0;       // attention replicas
  std::uint32_t ep_size = 0;       // expert-parallel width
  std::uint32_t attention_tp = 1;
  std::uint32_t dense_ffn_tp = 4;
  std::uint32_t num_dense_ffn_groups = 0;
  std::uint32_t num_experts = 0;   // logical experts, layer-uniform
  std::uint32_t top_k = 1;
  // Replica count per expert id; size must equal num_experts.
  std::vector<std::uint32_t> redundant_replicas;
  std::string model = "deepseek-v3";
  std::string microbatch_class = "decode";

  // Throws ConfigError naming the first violated invariant.
  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("invalid deployment: " + what); };
    if (attention_tp != 1) fail("attention_tp must be 1");
    if (num_devices == 0) fail("num_devices must be > 0");
    if (dp_size == 0) fail("dp_size must be > 0");
    if (ep_size == 0) fail("ep_size must be > 0");
    if (num_experts == 0) fail("num_experts must be > 0");
    if (top_k == 0 || top_k > num_experts) fail("top_k must be in [1, num_experts]");
    if (mode == DeploymentMode::MADisaggregated) {
      if (dp_size + ep_size > num_devices) fail("dp_size + ep_size must be <= num_devices");
      if (dp_size + ep_size != num_devices)
        fail("dp_size + ep_size must cover every device (no spare role)");
    } else {
      if (dp_size > num_devices) fail("dp_size must be <= num_devices");
      if (dp_size != num_devices) fail("collocated deployment must use every device (dp_size == num_devices)");
      if (ep_size != dp_size) fail("collocated deployment requires ep_size == dp_size");
    }
    if (redundant_replicas.size() != num_experts)
      fail("redundant_replicas must list exactly num_experts entries");
    for (std::size_t e = 0; e < redundant_replicas.size(); ++e) {
      if (redundant_replicas[e] < 1)
        fail("expert " + std::to_string(e) + " has replica count < 1");
      if (redundant_replicas[e] > ep_size)
        fail("expert " + std::to_string(e) + " has more replicas than expert devices");
    }
    if (num_dense_ffn_groups > 0) {
      if (dense_ffn_tp == 0) fail("dense_ffn_tp must be > 0");
      if (num_dense_ffn_groups * dense_ffn_tp > ep_size)
        fail("dense-FFN groups need num_dense_ffn_groups * dense_ffn_tp <= expert devices");
    }
  }

  friend bool operator==(const DeploymentConfig&, const DeploymentConfig&) = default;
};

inline std::vector<std::uint32_t> uniform_replicas(std::uint32_t num_experts, std::uint32_t count) {
  return std::vector<std::uint32_t>(num_experts, count);
}

struct Device {
  DeviceId id = 0;
  DeviceRole role = DeviceRole::Attention;
  Health health = Health::Healthy;

  friend bool operator==(const Device&, const Device&) = default;
};

enum class GroupStatus { Healthy, Compromised };

struct DenseFfnGroup {
  std::uint32_t id = 0;
  std::vector<DeviceId> members;
  GroupStatus status = GroupStatus::Healthy;
  double routing_weight = 0.0;

  friend bool operator==(const DenseFfnGroup&, const DenseFfnGroup&) = default;
};

// Devices, roles, expert placement and dense-FFN groups of one serving
// instance. Owned and mutated by the orchestrator.
class Cluster {
 public:
  Cluster() = default;

  const DeploymentConfig& config() const noexcept { return config_; }
  std::span<const Device> devices() const noexcept { return devices_; }
  std::span<const DenseFfnGroup> dense_groups() const noexcept { return dense_groups_; }
  std::size_t num_experts() const noexcept { return placement_.size(); }

  const Device& device(DeviceId id) const {
    if (id >= devices_.size()) throw LookupError("unknown device " + std::to_string(id));
    return devices_[id];
  }

  // Sorted device ids hosting a replica of `expert`.
  const std::vector<DeviceId>& replicas_of(ExpertId expert) const {
    if (expert >= placement_.size())
      throw LookupError("unknown expert " + std::to_string(expert));
    return placement_[expert];
  }

  std::set<ExpertId> experts_on_device(DeviceId id) const {
    device(id);
    std::set<ExpertId> out;
    for (ExpertId e = 0; e < placement_.size(); ++e)
      if (std::binary_search(placement_[e].begin(), placement_[e].end(), id)) out.insert(e);
    return out;
  }

  // Experts whose only healthy replica lives on `id`.
  std::set<ExpertId> sole_replica_experts(DeviceId id) const {
    std::set<ExpertId> out;
    for (ExpertId e : experts_on_device(id)) {
      const auto& reps = placement_[e];
      bool other_healthy = std::any_of(reps.begin(), reps.end(), [&](DeviceId d) {
        return d != id && devices_[d].health == Health::Healthy;
      });
      if (!other_healthy) out.insert(e);
    }
    return out;
  }

  // Experts with at least one replica on a healthy device.
  std::set<ExpertId> materialized_experts() const {
    std::set<ExpertId> out;
    for (ExpertId e = 0; e < placement_.size(); ++e)
      for (DeviceId d : placement_[e])
        if (devices_[d].health == Health::Healthy) {
          out.insert(e);
          break;
        }
    return out;
  }

  // Replica entries on healthy devices.
  std::size_t materialized_shards() const {
    std::size_t n = 0;
    for (const auto& reps : placement_)
      for (DeviceId d : reps) n += devices_[d].health == Health::Healthy ? 1 : 0;
    return n;
  }

  std::vector<DeviceId> healthy_devices_where(bool (*pred)(DeviceRole)) const {
    std::vector<DeviceId> out;
    for (const auto& d : devices_)
      if (d.health == Health::Healthy && pred(d.role)) out.push_back(d.id);
    return out;
  }
  std::vector<DeviceId> healthy_attention_devices() const { return healthy_devices_where(hosts_attention); }
  std::vector<DeviceId> healthy_expert_devices() const { return healthy_devices_where(hosts_experts); }

  // Current attention replica count (the live dp size).
  std::size_t attention_replicas() const { return healthy_attention_devices().size(); }
  std::size_t expert_parallel_width() const { return healthy_expert_devices().size(); }

  const ExpertMask& expert_mask() const noexcept { return mask_; }
  const std::set<DeviceId>& switched_devices() const noexcept { return switched_; }

  // --- mutation (orchestrator / weight_integrity only) ---

  void set_health(DeviceId id, Health h) { mutable_device(id).health = h; }

  void set_role(DeviceId id, DeviceRole r) { mutable_device(id).role = r; }

  void mark_switched(DeviceId id) {
    device(id);
    switched_.insert(id);
  }

  void remove_device_replicas(DeviceId id) {
    device(id);
    for (auto& reps : placement_) std::erase(reps, id);
  }

  void add_replica(ExpertId expert, DeviceId id) {
    device(id);
    if (expert >= placement_.size()) throw LookupError("unknown expert " + std::to_string(expert));
    auto& reps = placement_[expert];
    if (!std::binary_search(reps.begin(), reps.end(), id)) reps.insert(std::upper_bound(reps.begin(), reps.end(), id), id);
  }

  void set_expert_mask(ExpertMask mask) { mask_ = std::move(mask); }

  DenseFfnGroup& dense_group(std::uint32_t gid) {
    if (gid >= dense_groups_.size()) throw LookupError("unknown dense-FFN group " + std::to_string(gid));
    return dense_groups_[gid];
  }

  friend bool operator==(const Cluster&, const Cluster&) = default;

 private:
  friend Cluster build_cluster(const DeploymentConfig& config);

  Device& mutable_device(DeviceId id) {
    device(id);
    return devices_[id];
  }

  DeploymentConfig config_;
  std::vector<Device> devices_;
  std::vector<std::vector<DeviceId>> placement_;
  std::vector<DenseFfnGroup> dense_groups_;
  ExpertMask mask_;
  std::set<DeviceId> switched_;
};

// Disaggregated: devices [0, dp) are attention, [dp, dp+ep) are MoE.
// Collocated: every device is collocated. Primary replicas go round-robin by
// expert id; extra replicas continue the same cursor, skipping devices that
// already host the expert.
inline Cluster build_cluster(const DeploymentConfig& config) {
  config.validate();
  Cluster c;
  c.config_ = config;
  c.devices_.reserve(config.num_devices);
  for (DeviceId id = 0; id < config.num_devices; ++id) {
    DeviceRole role = DeviceRole::Collocated;
    if (config.mode == DeploymentMode::MADisaggregated)
      role = id < config.dp_size ? DeviceRole::Attention : DeviceRole::MoE;
    c.devices_.push_back(Device{id, role, Health::Healthy});
  }

  std::vector<DeviceId> expert_devs;
  for (const auto& d : c.devices_)
    if (hosts_experts(d.role)) expert_devs.push_back(d.id);
  const std::size_t ep = expert_devs.size();

  c.placement_.assign(config.num_experts, {});
  for (ExpertId e = 0; e < config.num_experts; ++e) c.placement_[e].push_back(expert_devs[e % ep]);
  std::size_t cursor = config.num_experts;
  for (ExpertId e = 0; e < config.num_experts; ++e) {
    auto& reps = c.placement_[e];
    for (std::uint32_t r = 1; r < config.redundant_replicas[e]; ++r) {
      for (;;) {
        DeviceId d = expert_devs[cursor++ % ep];
        if (std::find(reps.begin(), reps.end(), d) == reps.end()) {
          reps.push_back(d);
          break;
        }
      }
    }
    std::sort(reps.begin(), reps.end());
  }

  for (std::uint32_t g = 0; g < config.num_dense_ffn_groups; ++g) {
    DenseFfnGroup grp;
    grp.id = g;
    for (std::uint32_t i = 0; i < config.dense_ffn_tp; ++i)
      grp.members.push_back(expert_devs[g * config.dense_ffn_tp + i]);
    grp.routing_weight = 1.0 / config.num_dense_ffn_groups;
    c.dense_groups_.push_back(std::move(grp));
  }
  return c;
}

}  // namespace revive
