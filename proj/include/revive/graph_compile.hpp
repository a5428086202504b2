// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "revive/cluster.hpp"
#include "revive/error.hpp"
#include "revive/latency.hpp"
#include "revive/types.hpp"

namespace revive {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Position-independent description of who does what: any single attention
// loss yields the same layout, as does any MoE loss or any role switch.
inline std::string role_layout(std::size_t attention, std::size_t experts, std::size_t switched) {
  return "attn=" + std::to_string(attention) + ",moe=" + std::to_string(experts) +
         ",switched=" + std::to_string(switched);
}

// What a compiled graph depends on. Lookups are exact-match.
struct GraphCacheKey {
  DeploymentMode mode = DeploymentMode::MADisaggregated;
  std::uint32_t dp_size = 0;
  std::uint32_t ep_size = 0;
  std::uint64_t layout_hash = 0;
  std::string model;
  std::string microbatch_class;

  auto operator<=>(const GraphCacheKey&) const = default;
  bool operator==(const GraphCacheKey&) const = default;

  std::string canonical() const {
    std::ostringstream os;
    os << to_string(mode) << "|dp=" << dp_size << "|ep=" << ep_size << "|layout=" << hex64(layout_hash)
       << "|model=" << model << "|mb=" << microbatch_class;
    return os.str();
  }
  std::string file_stem() const { return hex64(fnv1a64(canonical())); }
};

inline GraphCacheKey make_cache_key(const DeploymentConfig& base, std::uint32_t dp, std::uint32_t ep,
                                    std::uint32_t switched) {
  return GraphCacheKey{base.mode, dp, ep, fnv1a64(role_layout(dp, ep, switched)), base.model, base.microbatch_class};
}

inline GraphCacheKey cache_key_for(const Cluster& c) {
  return make_cache_key(c.config(), static_cast<std::uint32_t>(c.attention_replicas()),
                        static_cast<std::uint32_t>(c.expert_parallel_width()),
                        static_cast<std::uint32_t>(c.switched_devices().size()));
}

inline nlohmann::ordered_json to_json(const GraphCacheKey& k) {
  return {{"mode", std::string(to_string(k.mode))},
          {"dp_size", k.dp_size},
          {"ep_size", k.ep_size},
          {"layout_hash", hex64(k.layout_hash)},
          {"model", k.model},
          {"microbatch_class", k.microbatch_class}};
}

inline GraphCacheKey cache_key_from_json(const nlohmann::json& j) {
  GraphCacheKey k;
  auto mode = j.at("mode").get<std::string>();
  if (mode == "MACollocated")
    k.mode = DeploymentMode::MACollocated;
  else if (mode == "MADisaggregated")
    k.mode = DeploymentMode::MADisaggregated;
  else
    throw IoError("cache entry has unknown mode '" + mode + "'");
  k.dp_size = j.at("dp_size").get<std::uint32_t>();
  k.ep_size = j.at("ep_size").get<std::uint32_t>();
  k.layout_hash = std::stoull(j.at("layout_hash").get<std::string>(), nullptr, 16);
  k.model = j.at("model").get<std::string>();
  k.microbatch_class = j.at("microbatch_class").get<std::string>();
  return k;
}

struct CacheEntry {
  SimTime created_at = 0;
  std::uint64_t size_estimate = 0;
};

// Compiled-graph cache. Memory-only, or backed by a directory holding one
// "<hash>.entry" JSON file per key. Never evicts.
class CacheStore {
 public:
  CacheStore() = default;

  static CacheStore open(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create cache store " + dir.string() + ": " + ec.message());
    CacheStore s;
    s.dir_ = dir;
    for (const auto& f : fs::directory_iterator(dir)) {
      if (f.path().extension() != ".entry") continue;
      std::ifstream in(f.path());
      try {
        auto j = nlohmann::json::parse(in);
        s.entries_[cache_key_from_json(j.at("key"))] =
            CacheEntry{j.at("created_at").get<double>(), j.at("size_estimate").get<std::uint64_t>()};
      } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt cache entry " + f.path().string() + ": " + e.what());
      }
    }
    return s;
  }

  bool persistent() const noexcept { return !dir_.empty(); }
  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(const GraphCacheKey& k) const { return entries_.count(k) != 0; }
  const std::map<GraphCacheKey, CacheEntry>& entries() const noexcept { return entries_; }

  // Returns false when the key was already present.
  bool insert(const GraphCacheKey& k, CacheEntry e) {
    if (contains(k)) return false;
    if (persistent()) {
      auto path = dir_ / (k.file_stem() + ".entry");
      std::ofstream out(path);
      nlohmann::ordered_json j{{"key", to_json(k)}, {"created_at", e.created_at}, {"size_estimate", e.size_estimate}};
      out << j.dump(2) << '\n';
      if (!out) throw IoError("cannot write cache entry " + path.string());
    }
    entries_.emplace(k, e);
    return true;
  }

 private:
  std::filesystem::path dir_;
  std::map<GraphCacheKey, CacheEntry> entries_;
};

enum class FailureKind : std::uint8_t { AttentionLoss, ExpertLoss, RoleSwitched, CollocatedLoss };

// Post-failure configurations reachable from `base` by one device loss.
inline std::vector<FailureKind> single_failure_scenarios(const DeploymentConfig& base) {
  if (base.mode == DeploymentMode::MACollocated) {
    if (base.dp_size >= 2) return {FailureKind::CollocatedLoss};
    return {};
  }
  std::vector<FailureKind> out;
  if (base.dp_size >= 2) out.push_back(FailureKind::AttentionLoss);
  if (base.ep_size >= 2) out.push_back(FailureKind::ExpertLoss);
  if (base.dp_size >= 2) out.push_back(FailureKind::RoleSwitched);
  return out;
}

inline GraphCacheKey cache_key_after(const DeploymentConfig& base, FailureKind f) {
  switch (f) {
    case FailureKind::AttentionLoss: return make_cache_key(base, base.dp_size - 1, base.ep_size, 0);
    case FailureKind::ExpertLoss: return make_cache_key(base, base.dp_size, base.ep_size - 1, 0);
    case FailureKind::RoleSwitched: return make_cache_key(base, base.dp_size - 1, base.ep_size, 1);
    case FailureKind::CollocatedLoss: return make_cache_key(base, base.dp_size - 1, base.ep_size - 1, 0);
  }
  throw ContractError("unknown failure kind");
}

struct PrecompileReport {
  std::vector<GraphCacheKey> keys;  // distinct keys covered, in scenario order
  std::vector<GraphCacheKey> created;
  double offline_seconds = 0;       // full-compile cost of the new entries
};

inline PrecompileReport precompile_failure_scenarios(const DeploymentConfig& base,
                                                     const std::vector<FailureKind>& scenarios, CacheStore& store,
                                                     const LatencyModel& lat, SimTime now = 0) {
  PrecompileReport r;
  std::set<GraphCacheKey> seen;
  for (FailureKind f : scenarios) {
    GraphCacheKey k = cache_key_after(base, f);
    if (!seen.insert(k).second) continue;
    r.keys.push_back(k);
    if (store.insert(k, CacheEntry{now, 0})) {
      r.created.push_back(k);
      r.offline_seconds += lat.full_compile;
    }
  }
  return r;
}

struct CompileResult {
  bool cache_hit = false;
  double read_cache = 0;
  double compile = 0;  // cached compile on hit, full compile on miss

  double duration() const { return read_cache + compile; }
};

inline CompileResult compile(const GraphCacheKey& key, CacheStore& store, const LatencyModel& lat, SimTime now = 0) {
  CompileResult r;
  if (store.contains(key)) {
    r.cache_hit = true;
    r.read_cache = lat.read_cache;
    r.compile = lat.cached_compile_for(key.mode);
  } else {
    r.compile = lat.full_compile;
    store.insert(key, CacheEntry{now, 0});
  }
  return r;
}

}  // namespace revive
