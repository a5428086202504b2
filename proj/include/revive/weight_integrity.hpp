// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "revive/cluster.hpp"
#include "revive/comm_domain.hpp"
#include "revive/error.hpp"
#include "revive/latency.hpp"
#include "revive/types.hpp"

namespace revive {

// Knobs for the MoE-failure flowchart.
struct MoePolicy {
  bool allow_role_switch = true;
  bool allow_missing_experts = true;
  // Mask first, role switch later in the background.
  bool background_switch = false;
  // Masking more than this fraction of experts raises a degradation warning.
  double degradation_threshold = 1.0 / 32.0;
};

struct RedundantExpertRemap {
  friend bool operator==(const RedundantExpertRemap&, const RedundantExpertRemap&) = default;
};
struct RoleSwitch {
  ExecutorId donor = 0;
  friend bool operator==(const RoleSwitch&, const RoleSwitch&) = default;
};
struct MissingExpertMask {
  ExpertMask experts;
  friend bool operator==(const MissingExpertMask&, const MissingExpertMask&) = default;
};

struct RecoveryPlan {
  std::variant<RedundantExpertRemap, RoleSwitch, MissingExpertMask> action;
  std::vector<std::string> warnings;
  // Set when a masked plan is to be upgraded by a background role switch.
  std::optional<ExecutorId> background_donor;

  std::string_view name() const {
    switch (action.index()) {
      case 0: return "RedundantExpertRemap";
      case 1: return "RoleSwitch";
      default: return "MissingExpertMask";
    }
  }
};

// Healthy attention executor with the fewest active sequences, ties to the
// lowest logical DP rank.
inline std::optional<ExecutorId> select_donor(const Cluster& c, const RankAssignment& dp,
                                              const std::map<ExecutorId, std::size_t>& active) {
  std::optional<ExecutorId> best;
  std::size_t best_load = 0;
  Rank best_rank = 0;
  for (ExecutorId id : c.healthy_attention_devices()) {
    if (!dp.contains(id)) continue;
    auto it = active.find(id);
    std::size_t load = it == active.end() ? 0 : it->second;
    Rank r = dp.rank_of(id);
    if (!best || load < best_load || (load == best_load && r < best_rank)) {
      best = id;
      best_load = load;
      best_rank = r;
    }
  }
  return best;
}

inline RecoveryPlan decide_moe_recovery(const Cluster& c, DeviceId failed, const MoePolicy& policy,
                                        const RankAssignment& dp,
                                        const std::map<ExecutorId, std::size_t>& active = {}) {
  const Device& dev = c.device(failed);
  if (!hosts_experts(dev.role)) throw ContractError("device " + std::to_string(failed) + " is not an expert host");
  if (c.experts_on_device(failed).empty())
    throw ContractError("device " + std::to_string(failed) + " hosts no experts");

  RecoveryPlan plan;
  ExpertMask sole = c.sole_replica_experts(failed);
  if (sole.empty()) {
    plan.action = RedundantExpertRemap{};
    return plan;
  }

  std::optional<ExecutorId> donor;
  if (policy.allow_role_switch && c.config().mode == DeploymentMode::MADisaggregated &&
      c.attention_replicas() >= 2)
    donor = select_donor(c, dp, active);

  if (donor && !(policy.background_switch && policy.allow_missing_experts)) {
    plan.action = RoleSwitch{*donor};
    return plan;
  }
  if (!policy.allow_missing_experts)
    throw UnrecoverableError("no admissible MoE recovery for device " + std::to_string(failed) +
                             ": experts lost, role switch unavailable and missing experts disallowed");

  double fraction = static_cast<double>(sole.size()) / static_cast<double>(c.num_experts());
  if (fraction > policy.degradation_threshold)
    plan.warnings.push_back("masking " + std::to_string(sole.size()) + " of " + std::to_string(c.num_experts()) +
                            " experts exceeds the degradation threshold");
  plan.action = MissingExpertMask{std::move(sole)};
  plan.background_donor = donor;
  return plan;
}

// Every expert keeps a healthy replica; the failed device leaves the mapping.
inline void apply_redundant_remap(Cluster& c, DeviceId failed) {
  c.remove_device_replicas(failed);
  c.set_health(failed, Health::Isolated);
  for (ExpertId e = 0; e < c.num_experts(); ++e)
    if (c.replicas_of(e).empty() && !c.expert_mask().count(e))
      throw IntegrityViolation("redundant remap left expert " + std::to_string(e) + " without a replica");
}

// Drop every non-healthy device from the mapping and mask what is left
// without a replica. The mask is exactly the set of unmaterialized experts.
inline ExpertMask apply_missing_mask(Cluster& c) {
  for (const auto& d : c.devices())
    if (d.health != Health::Healthy) c.remove_device_replicas(d.id);
  ExpertMask mask;
  for (ExpertId e = 0; e < c.num_experts(); ++e)
    if (c.replicas_of(e).empty()) mask.insert(e);
  c.set_expert_mask(mask);
  for (const auto& d : c.devices())
    if (d.health == Health::Failed) c.set_health(d.id, Health::Isolated);
  return mask;
}

// Healthy groups share traffic evenly; compromised groups get nothing.
inline std::vector<double> rebalance_dense_ffn(Cluster& c) {
  std::size_t healthy = 0;
  for (const auto& g : c.dense_groups()) {
    bool ok = std::all_of(g.members.begin(), g.members.end(),
                          [&](DeviceId d) { return c.device(d).health == Health::Healthy; });
    c.dense_group(g.id).status = ok ? GroupStatus::Healthy : GroupStatus::Compromised;
    healthy += ok ? 1 : 0;
  }
  if (!c.dense_groups().empty() && healthy == 0) throw UnrecoverableError("no healthy dense-FFN group left");
  std::vector<double> weights;
  for (const auto& g : c.dense_groups()) {
    double w = g.status == GroupStatus::Healthy ? 1.0 / static_cast<double>(healthy) : 0.0;
    c.dense_group(g.id).routing_weight = w;
    weights.push_back(w);
  }
  return weights;
}

inline bool dense_group_contains(const Cluster& c, DeviceId d) {
  for (const auto& g : c.dense_groups())
    if (std::find(g.members.begin(), g.members.end(), d) != g.members.end()) return true;
  return false;
}

enum class RoleSwitchPhase : std::uint8_t { MigratingRequests, DroppingAttentionState, LoadingMoEWeights, RejoiningDomain, Done };

constexpr std::string_view to_string(RoleSwitchPhase p) {
  switch (p) {
    case RoleSwitchPhase::MigratingRequests: return "MigratingRequests";
    case RoleSwitchPhase::DroppingAttentionState: return "DroppingAttentionState";
    case RoleSwitchPhase::LoadingMoEWeights: return "LoadingMoEWeights";
    case RoleSwitchPhase::RejoiningDomain: return "RejoiningDomain";
    case RoleSwitchPhase::Done: return "Done";
  }
  return "?";
}

struct RoleSwitchEvent {
  RoleSwitchPhase phase;
  Category category;
  double duration;
  std::string detail;
};

// Converts an attention executor into the replacement for a failed MoE
// executor, one phase per step(). Request migration itself is done by the
// caller before the first step (the donor's scheduler state lives there).
class RoleSwitchDriver {
 public:
  // `experts` are the failed device's experts, captured when the plan was
  // made (a mask may already have removed them from the mapping).
  // `failed_ep_rank` is its EP rank before any compaction.
  RoleSwitchDriver(ExecutorId donor, DeviceId failed, ExpertMask experts, Rank failed_ep_rank)
      : donor_(donor), failed_(failed), experts_(std::move(experts)), failed_ep_rank_(failed_ep_rank) {}

  RoleSwitchPhase phase() const noexcept { return phase_; }
  ExecutorId donor() const noexcept { return donor_; }
  DeviceId failed() const noexcept { return failed_; }
  bool escalated() const noexcept { return escalated_; }
  std::optional<Rank> adopted_rank() const noexcept { return adopted_rank_; }

  // Run the current phase. Returns nullopt when the donor is no longer
  // healthy; the caller then falls back to a missing-expert mask.
  std::optional<RoleSwitchEvent> step(Cluster& c, DomainSet& domains, const LatencyModel& lat) {
    if (phase_ == RoleSwitchPhase::Done) throw StateError("role switch already done");
    if (c.device(donor_).health != Health::Healthy) {
      escalated_ = true;
      return std::nullopt;
    }
    RoleSwitchEvent ev{phase_, Category::Other, 0.0, {}};
    switch (phase_) {
      case RoleSwitchPhase::MigratingRequests:
        if (c.device(donor_).role != DeviceRole::Attention)
          throw ContractError("donor " + std::to_string(donor_) + " is not an attention executor");
        ev.duration = lat.other.migration;
        ev.detail = "migrate requests off donor " + std::to_string(donor_);
        phase_ = RoleSwitchPhase::DroppingAttentionState;
        break;
      case RoleSwitchPhase::DroppingAttentionState:
        c.set_role(donor_, DeviceRole::MoE);
        ev.category = Category::RoleSwitch;
        ev.duration = lat.role_switch;
        ev.detail = "drop KV cache, scheduler and attention weights on " + std::to_string(donor_);
        phase_ = RoleSwitchPhase::LoadingMoEWeights;
        break;
      case RoleSwitchPhase::LoadingMoEWeights:
        c.remove_device_replicas(failed_);
        for (ExpertId e : experts_) c.add_replica(e, donor_);
        if (!c.expert_mask().empty()) {
          ExpertMask mask = c.expert_mask();
          for (ExpertId e : experts_) mask.erase(e);
          c.set_expert_mask(std::move(mask));
        }
        for (const auto& g : c.dense_groups()) {
          auto members = g.members;
          std::replace(members.begin(), members.end(), failed_, donor_);
          c.dense_group(g.id).members = members;
        }
        c.mark_switched(donor_);
        c.set_health(failed_, Health::Isolated);
        ev.category = Category::Generator;
        ev.duration = lat.role_switch_weight_load;
        ev.detail = "load MoE weights of " + std::to_string(failed_) + " onto " + std::to_string(donor_);
        phase_ = RoleSwitchPhase::RejoiningDomain;
        break;
      case RoleSwitchPhase::RejoiningDomain:
        if (domains.ep.contains(failed_)) {
          adopted_rank_ = domains.ep.rank_of(failed_);
          domains = apply_role_switch(domains, failed_, donor_);
        } else {
          domains = rejoin_as_expert(domains, donor_, failed_ep_rank_);
          adopted_rank_ = domains.ep.rank_of(donor_);
        }
        ev.detail = "donor " + std::to_string(donor_) + " adopts EP rank " + std::to_string(*adopted_rank_);
        phase_ = RoleSwitchPhase::Done;
        break;
      case RoleSwitchPhase::Done:
        break;
    }
    return ev;
  }

 private:
  ExecutorId donor_;
  DeviceId failed_;
  ExpertMask experts_;
  Rank failed_ep_rank_;
  RoleSwitchPhase phase_ = RoleSwitchPhase::MigratingRequests;
  bool escalated_ = false;
  std::optional<Rank> adopted_rank_;
};

}  // namespace revive
