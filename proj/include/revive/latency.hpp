// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "revive/error.hpp"
#include "revive/types.hpp"

namespace revive {

// Timing categories of a recovery or reinitialization trace. Detection is the
// fault-to-trigger interval and sits outside the recovery total.
enum class Category : std::uint8_t {
  Detection,
  Engine,
  ExecutorProcesses,
  DistributedGroups,
  Xccl,
  RoleSwitch,
  Generator,
  ReadCache,
  Compile,
  FullCompile,
  Other,
};

inline constexpr std::array kAllCategories{
    Category::Detection, Category::Engine,    Category::ExecutorProcesses, Category::DistributedGroups,
    Category::Xccl,      Category::RoleSwitch, Category::Generator,        Category::ReadCache,
    Category::Compile,   Category::FullCompile, Category::Other,
};

constexpr std::string_view to_string(Category c) {
  switch (c) {
    case Category::Detection: return "detection";
    case Category::Engine: return "engine";
    case Category::ExecutorProcesses: return "executor_processes";
    case Category::DistributedGroups: return "distributed_groups";
    case Category::Xccl: return "xccl";
    case Category::RoleSwitch: return "role_switch";
    case Category::Generator: return "generator";
    case Category::ReadCache: return "read_cache";
    case Category::Compile: return "compile";
    case Category::FullCompile: return "full_compile";
    case Category::Other: return "other";
  }
  return "?";
}

inline std::optional<Category> category_from_string(std::string_view s) {
  for (Category c : kAllCategories)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

// Per-category durations in seconds.
struct LatencyModel {
  double engine = 0;
  double executor_processes = 0;
  double distributed_groups = 0;
  struct Xccl {
    double destroy_trampoline = 0;
    double destroy_attention_expert = 0;
    double create_domain = 0;
  } xccl;
  double role_switch = 0;  // drop KV cache, scheduler and attention weights
  struct Generator {
    double weight_load = 0;
    double kv_warmup = 0;
  } generator;
  double role_switch_weight_load = 0;  // MoE weights from disk onto a switched executor
  double read_cache = 0;
  struct CachedCompile {
    double disaggregated = 0;
    double collocated = 0;
  } cached_compile;
  double full_compile = 0;
  struct Other {
    double global_stop = 0;
    double step_revert = 0;
    double migration = 0;
    double gating_update = 0;
    double resume = 0;
    double baseline_misc = 0;  // scheduler init etc. in a full restart
  } other;

  double cached_compile_for(DeploymentMode m) const {
    return m == DeploymentMode::MACollocated ? cached_compile.collocated : cached_compile.disaggregated;
  }

  void validate() const {
    const double fields[] = {engine,
                             executor_processes,
                             distributed_groups,
                             xccl.destroy_trampoline,
                             xccl.destroy_attention_expert,
                             xccl.create_domain,
                             role_switch,
                             generator.weight_load,
                             generator.kv_warmup,
                             role_switch_weight_load,
                             read_cache,
                             cached_compile.disaggregated,
                             cached_compile.collocated,
                             full_compile,
                             other.global_stop,
                             other.step_revert,
                             other.migration,
                             other.gating_update,
                             other.resume,
                             other.baseline_misc};
    for (double f : fields)
      if (!(f >= 0.0)) throw ConfigError("latency model durations must be non-negative");
  }

  // Calibrated to the published totals: cached restart 83.1 s, recovery
  // 10.2 s, role-switch weight load 40.6 s, cached compile 6 s / 8 s, full
  // compile 12.9 min. Per-category splits are not published; these are
  // chosen so the totals hold (generator is the largest restart component).
  static LatencyModel calibrated() {
    LatencyModel m;
    m.engine = 6.0;
    m.executor_processes = 16.96;
    m.distributed_groups = 1.6;
    m.xccl = {0.2, 0.3, 0.9};
    m.role_switch = 1.95;
    m.generator = {44.0, 6.5};
    m.role_switch_weight_load = 40.6;
    m.read_cache = 1.0;
    m.cached_compile = {6.0, 8.0};
    m.full_compile = 774.0;
    // migration and gating update stay under 50 ms; baseline_misc aggregates
    // several sub-100 ms restart overheads
    m.other = {0.03, 0.01, 0.04, 0.02, 0.06, 0.14};
    return m;
  }

  static LatencyModel zero() { return LatencyModel{}; }

  static LatencyModel profile(std::string_view name) {
    if (name == "calibrated") return calibrated();
    if (name == "zero") return zero();
    throw ConfigError("unknown latency profile '" + std::string(name) + "' (expected calibrated or zero)");
  }
};

}  // namespace revive
