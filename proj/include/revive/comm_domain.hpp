// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "revive/cluster.hpp"
#include "revive/error.hpp"
#include "revive/latency.hpp"
#include "revive/types.hpp"

namespace revive {

enum class DomainKind : std::uint8_t { World, DPGroup, EPGroup, AttentionExpert, Trampoline };

constexpr std::string_view to_string(DomainKind k) {
  switch (k) {
    case DomainKind::World: return "World";
    case DomainKind::DPGroup: return "DPGroup";
    case DomainKind::EPGroup: return "EPGroup";
    case DomainKind::AttentionExpert: return "AttentionExpert";
    case DomainKind::Trampoline: return "Trampoline";
  }
  return "?";
}

// Bijection device <-> logical rank in [0, n). Stored as the device sitting at
// each rank, which makes contiguity structural.
class RankAssignment {
 public:
  RankAssignment() = default;
  RankAssignment(DomainKind kind, std::vector<DeviceId> devices_by_rank)
      : kind_(kind), by_rank_(std::move(devices_by_rank)) {
    auto sorted = by_rank_;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw ContractError("rank assignment lists a device twice");
  }

  // From explicit (device, rank) pairs; ranks must be exactly 0..n-1.
  static RankAssignment from_pairs(DomainKind kind, const std::vector<std::pair<DeviceId, Rank>>& pairs) {
    std::vector<std::optional<DeviceId>> slots(pairs.size());
    for (const auto& [d, r] : pairs) {
      if (r >= slots.size() || slots[r]) throw ContractError("ranks must be a contiguous bijection from 0");
      slots[r] = d;
    }
    std::vector<DeviceId> by_rank;
    for (const auto& s : slots) by_rank.push_back(*s);
    return RankAssignment(kind, std::move(by_rank));
  }

  DomainKind kind() const noexcept { return kind_; }
  std::size_t size() const noexcept { return by_rank_.size(); }
  const std::vector<DeviceId>& devices_by_rank() const noexcept { return by_rank_; }

  bool contains(DeviceId d) const { return std::find(by_rank_.begin(), by_rank_.end(), d) != by_rank_.end(); }

  Rank rank_of(DeviceId d) const {
    auto it = std::find(by_rank_.begin(), by_rank_.end(), d);
    if (it == by_rank_.end())
      throw LookupError("device " + std::to_string(d) + " not in " + std::string(to_string(kind_)) + " domain");
    return static_cast<Rank>(it - by_rank_.begin());
  }

  DeviceId device_at(Rank r) const {
    if (r >= by_rank_.size()) throw LookupError("rank " + std::to_string(r) + " out of range");
    return by_rank_[r];
  }

  std::vector<std::pair<DeviceId, Rank>> pairs() const {
    std::vector<std::pair<DeviceId, Rank>> out;
    for (Rank r = 0; r < by_rank_.size(); ++r) out.emplace_back(by_rank_[r], r);
    return out;
  }

  friend bool operator==(const RankAssignment&, const RankAssignment&) = default;

 private:
  friend RankAssignment compact_ranks(const RankAssignment&, DeviceId);
  friend RankAssignment adopt_rank(const RankAssignment&, DeviceId, DeviceId);

  DomainKind kind_ = DomainKind::World;
  std::vector<DeviceId> by_rank_;
};

// Drop `failed`; every rank above it moves down by one.
inline RankAssignment compact_ranks(const RankAssignment& a, DeviceId failed) {
  if (a.kind() == DomainKind::World) throw ContractError("the world group is never reassigned");
  Rank gap = a.rank_of(failed);
  RankAssignment out = a;
  out.by_rank_.erase(out.by_rank_.begin() + gap);
  return out;
}

// Single domain holding both devices: `donor` takes the rank of `failed`,
// then the donor's old slot is closed like any other gap.
inline RankAssignment adopt_rank(const RankAssignment& a, DeviceId failed, DeviceId donor) {
  if (a.kind() == DomainKind::World) throw ContractError("the world group is never reassigned");
  Rank lf = a.rank_of(failed);
  Rank ld = a.rank_of(donor);
  RankAssignment out = a;
  out.by_rank_[lf] = donor;
  out.by_rank_.erase(out.by_rank_.begin() + ld);
  return out;
}

struct RoleSwitchRanks {
  RankAssignment attention;
  RankAssignment moe;
};

// Donor leaves the attention domain (gap compacted) and takes the failed
// device's rank in the MoE domain.
inline RoleSwitchRanks role_switch_ranks(const RankAssignment& attention, const RankAssignment& moe,
                                         DeviceId failed, DeviceId donor) {
  if (moe.contains(donor)) throw ContractError("donor " + std::to_string(donor) + " already in the MoE domain");
  if (!attention.contains(donor)) throw ContractError("donor " + std::to_string(donor) + " not in the attention domain");
  Rank lf = moe.rank_of(failed);
  auto by_rank = moe.devices_by_rank();
  by_rank[lf] = donor;
  return {compact_ranks(attention, donor), RankAssignment(moe.kind(), std::move(by_rank))};
}

// Every communication domain of one instance.
struct DomainSet {
  RankAssignment world;
  RankAssignment dp;
  RankAssignment ep;
  RankAssignment attention_expert;
  std::optional<RankAssignment> trampoline;  // disaggregated only

  std::vector<const RankAssignment*> all() const {
    std::vector<const RankAssignment*> out{&world, &dp, &ep, &attention_expert};
    if (trampoline) out.push_back(&*trampoline);
    return out;
  }

  friend bool operator==(const DomainSet&, const DomainSet&) = default;
};

// Attention devices take the low ranks of the attention-expert domain.
inline DomainSet build_domains(const Cluster& c) {
  std::vector<DeviceId> all, attn, moe;
  for (const auto& d : c.devices()) {
    all.push_back(d.id);
    if (d.health != Health::Healthy) continue;
    if (hosts_attention(d.role)) attn.push_back(d.id);
    if (hosts_experts(d.role)) moe.push_back(d.id);
  }
  DomainSet s;
  s.world = RankAssignment(DomainKind::World, all);
  s.dp = RankAssignment(DomainKind::DPGroup, attn);
  s.ep = RankAssignment(DomainKind::EPGroup, moe);
  if (c.config().mode == DeploymentMode::MADisaggregated) {
    std::vector<DeviceId> ae = attn;
    ae.insert(ae.end(), moe.begin(), moe.end());
    s.attention_expert = RankAssignment(DomainKind::AttentionExpert, ae);
    s.trampoline = RankAssignment(DomainKind::Trampoline, moe);
  } else {
    s.attention_expert = RankAssignment(DomainKind::AttentionExpert, attn);
  }
  return s;
}

// Remove a failed device from every domain except World.
inline DomainSet exclude_device(const DomainSet& s, DeviceId failed) {
  DomainSet out = s;
  auto drop = [&](RankAssignment& a) {
    if (a.contains(failed)) a = compact_ranks(a, failed);
  };
  drop(out.dp);
  drop(out.ep);
  drop(out.attention_expert);
  if (out.trampoline) drop(*out.trampoline);
  return out;
}

// Ranks after `donor` (attention) replaces `failed` (MoE).
inline DomainSet apply_role_switch(const DomainSet& s, DeviceId failed, DeviceId donor) {
  DomainSet out = s;
  auto r = role_switch_ranks(s.dp, s.ep, failed, donor);
  out.dp = std::move(r.attention);
  out.ep = std::move(r.moe);
  out.attention_expert = adopt_rank(s.attention_expert, failed, donor);
  if (out.trampoline) {
    auto t = out.trampoline->devices_by_rank();
    t[out.trampoline->rank_of(failed)] = donor;
    out.trampoline = RankAssignment(DomainKind::Trampoline, std::move(t));
  }
  return out;
}

// The failed device already left every domain (masked recovery ran first):
// the donor leaves the attention side and slots into the expert side at the
// rank the failed device used to hold.
inline DomainSet rejoin_as_expert(const DomainSet& s, DeviceId donor, Rank ep_rank) {
  if (s.ep.contains(donor)) throw ContractError("donor " + std::to_string(donor) + " already in the MoE domain");
  DomainSet out = s;
  out.dp = compact_ranks(s.dp, donor);
  auto insert = [&](const RankAssignment& a, Rank r) {
    auto v = a.devices_by_rank();
    v.insert(v.begin() + std::min<std::size_t>(r, v.size()), donor);
    return RankAssignment(a.kind(), std::move(v));
  };
  out.ep = insert(s.ep, ep_rank);
  if (out.trampoline) out.trampoline = insert(*s.trampoline, ep_rank);
  auto ae = compact_ranks(s.attention_expert, donor);
  out.attention_expert = insert(ae, static_cast<Rank>(out.dp.size()) + ep_rank);
  return out;
}

enum class RebuildStepKind : std::uint8_t { DestroyTrampoline, DestroyAttentionExpert, RecreateWithAssignment };

constexpr std::string_view to_string(RebuildStepKind k) {
  switch (k) {
    case RebuildStepKind::DestroyTrampoline: return "DestroyTrampoline";
    case RebuildStepKind::DestroyAttentionExpert: return "DestroyAttentionExpert";
    case RebuildStepKind::RecreateWithAssignment: return "RecreateWithAssignment";
  }
  return "?";
}

struct RebuildStep {
  RebuildStepKind kind;
  // Recreate spends distributed_groups on the torch subgroups, then xccl.
  double distributed_groups_seconds = 0;
  double xccl_seconds = 0;

  double duration() const { return distributed_groups_seconds + xccl_seconds; }
  friend bool operator==(const RebuildStep&, const RebuildStep&) = default;
};

struct DomainRebuildPlan {
  std::vector<RebuildStep> steps;

  double total() const {
    double t = 0;
    for (const auto& s : steps) t += s.duration();
    return t;
  }
  friend bool operator==(const DomainRebuildPlan&, const DomainRebuildPlan&) = default;
};

// Destroy steps first (trampoline only when disaggregated), then recreate.
inline DomainRebuildPlan rebuild_domains(DeploymentMode mode, const LatencyModel& lat) {
  DomainRebuildPlan p;
  if (mode == DeploymentMode::MADisaggregated)
    p.steps.push_back({RebuildStepKind::DestroyTrampoline, 0, lat.xccl.destroy_trampoline});
  p.steps.push_back({RebuildStepKind::DestroyAttentionExpert, 0, lat.xccl.destroy_attention_expert});
  p.steps.push_back({RebuildStepKind::RecreateWithAssignment, lat.distributed_groups, lat.xccl.create_domain});
  return p;
}

}  // namespace revive
