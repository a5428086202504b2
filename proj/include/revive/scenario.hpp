// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "revive/block_table.hpp"
#include "revive/cluster.hpp"
#include "revive/error.hpp"
#include "revive/failure_detection.hpp"
#include "revive/latency.hpp"
#include "revive/weight_integrity.hpp"

namespace revive {

struct SequenceSpec {
  std::uint32_t prompt_len = 1;
  SimTime arrival = 0;
  std::uint32_t decode_target = 1;
};

struct InjectedFault {
  DeviceId device = 0;
  SimTime time = 0;
  // Empty for a silent failure that only the heartbeat monitor notices.
  std::optional<FaultLevel> level = FaultLevel::L6;
  std::string error_type = "npu fault";
};

struct DetectionConfig {
  HeartbeatConfig heartbeat;
  SimTime poll_interval = 1.0;
};

struct SimulationConfig {
  SimTime step_time = 0.05;
  std::uint32_t block_size = BlockTable::kDefaultBlockSize;
  std::uint32_t blocks_per_executor = 4096;
  // Keep generating after recovery until every sequence finishes.
  bool drain = true;
  std::uint32_t max_steps = 200000;
};

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 0;
  DeploymentConfig deployment;
  std::vector<SequenceSpec> workload;
  std::vector<InjectedFault> faults;
  MoePolicy policy;
  FaultPolicy fault_policy;
  DetectionConfig detection;
  SimulationConfig sim;
  LatencyModel latency = LatencyModel::calibrated();
  // Precompile every single-failure configuration before the run.
  bool precompile = true;

  bool covered(const InjectedFault& f) const {
    return !f.level || fault_policy.classify(*f.level) == FaultAction::TriggerRecovery;
  }

  // The one fault that triggers recovery.
  const InjectedFault& covered_fault() const {
    for (const auto& f : faults)
      if (covered(f)) return f;
    throw ConfigError("scenario has no fault that triggers recovery");
  }

  void validate() const {
    deployment.validate();
    latency.validate();
    std::size_t n = 0;
    for (const auto& f : faults) {
      if (f.device >= deployment.num_devices)
        throw ConfigError("fault on unknown device " + std::to_string(f.device));
      if (f.time < 0) throw ConfigError("fault time must be >= 0");
      n += covered(f) ? 1 : 0;
    }
    if (n != 1) throw ConfigError("scenario must inject exactly one recovery-triggering fault, found " + std::to_string(n));
    for (const auto& s : workload) {
      if (s.prompt_len == 0) throw ConfigError("sequence prompt_len must be >= 1");
      if (s.decode_target == 0) throw ConfigError("sequence decode_target must be >= 1");
      if (s.arrival < 0) throw ConfigError("sequence arrival must be >= 0");
    }
    if (sim.step_time <= 0) throw ConfigError("simulation step_time must be > 0");
    if (detection.poll_interval <= 0) throw ConfigError("poll_interval must be > 0");
    HeartbeatMonitor{detection.heartbeat};
  }
};

namespace detail {

// Walks a YAML document, tracking the dotted path for error messages and
// rejecting unknown keys.
class YamlReader {
 public:
  YamlReader(YAML::Node node, std::string path) : node_(std::move(node)), path_(std::move(path)) {
    if (node_ && !node_.IsMap()) fail(node_, path_, "expected a mapping");
  }

  bool has(const std::string& key) const {
    seen_.insert(key);
    return node_ && node_[key];
  }

  YAML::Node raw(const std::string& key) const {
    seen_.insert(key);
    return node_ ? node_[key] : YAML::Node();
  }

  YamlReader child(const std::string& key) const { return YamlReader(raw(key), sub(key)); }

  template <class T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    return convert<T>(node_[key], sub(key));
  }

  template <class T>
  T require(const std::string& key) const {
    if (!has(key)) fail(node_, sub(key), "missing required field");
    return convert<T>(node_[key], sub(key));
  }

  void finish() const {
    if (!node_) return;
    for (const auto& kv : node_) {
      auto k = kv.first.as<std::string>();
      if (!seen_.count(k)) fail(kv.first, sub(k), "unknown field");
    }
  }

  std::string sub(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const YAML::Node& node() const { return node_; }

  [[noreturn]] static void fail(const YAML::Node& n, const std::string& field, const std::string& what) {
    std::size_t line = n ? static_cast<std::size_t>(n.Mark().line + 1) : 0;
    throw ParseError(line, field, what);
  }

  template <class T>
  static T convert(const YAML::Node& n, const std::string& field) {
    try {
      if constexpr (std::is_same_v<T, std::uint32_t> || std::is_same_v<T, std::uint64_t>) {
        auto v = n.as<long long>();
        if (v < 0) fail(n, field, "expected a non-negative integer");
        return static_cast<T>(v);
      } else {
        return n.as<T>();
      }
    } catch (const YAML::BadConversion&) {
      fail(n, field, "wrong type for value '" + (n.IsScalar() ? n.Scalar() : std::string("<non-scalar>")) + "'");
    }
  }

 private:
  YAML::Node node_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

inline FaultLevel parse_level(const YAML::Node& n, const std::string& field) {
  auto s = YamlReader::convert<std::string>(n, field);
  if (s.size() == 2 && (s[0] == 'L' || s[0] == 'l') && s[1] >= '1' && s[1] <= '6') return fault_level_from_int(s[1] - '0');
  YamlReader::fail(n, field, "expected a fault level L1..L6");
}

inline FaultAction parse_action(const YAML::Node& n, const std::string& field) {
  auto s = YamlReader::convert<std::string>(n, field);
  if (s == "Ignore") return FaultAction::Ignore;
  if (s == "LogOnly") return FaultAction::LogOnly;
  if (s == "TriggerRecovery") return FaultAction::TriggerRecovery;
  YamlReader::fail(n, field, "expected Ignore, LogOnly or TriggerRecovery");
}

inline void read_latencies(const YamlReader& r, LatencyModel& m) {
  m.engine = r.get("engine", m.engine);
  m.executor_processes = r.get("executor_processes", m.executor_processes);
  m.distributed_groups = r.get("distributed_groups", m.distributed_groups);
  if (r.has("xccl")) {
    auto x = r.child("xccl");
    m.xccl.destroy_trampoline = x.get("destroy_trampoline", m.xccl.destroy_trampoline);
    m.xccl.destroy_attention_expert = x.get("destroy_attention_expert", m.xccl.destroy_attention_expert);
    m.xccl.create_domain = x.get("create_domain", m.xccl.create_domain);
    x.finish();
  }
  m.role_switch = r.get("role_switch", m.role_switch);
  if (r.has("generator")) {
    auto g = r.child("generator");
    m.generator.weight_load = g.get("weight_load", m.generator.weight_load);
    m.generator.kv_warmup = g.get("kv_warmup", m.generator.kv_warmup);
    g.finish();
  }
  m.role_switch_weight_load = r.get("role_switch_weight_load", m.role_switch_weight_load);
  m.read_cache = r.get("read_cache", m.read_cache);
  if (r.has("cached_compile")) {
    auto c = r.child("cached_compile");
    m.cached_compile.disaggregated = c.get("disaggregated", m.cached_compile.disaggregated);
    m.cached_compile.collocated = c.get("collocated", m.cached_compile.collocated);
    c.finish();
  }
  m.full_compile = r.get("full_compile", m.full_compile);
  if (r.has("other")) {
    auto o = r.child("other");
    m.other.global_stop = o.get("global_stop", m.other.global_stop);
    m.other.step_revert = o.get("step_revert", m.other.step_revert);
    m.other.migration = o.get("migration", m.other.migration);
    m.other.gating_update = o.get("gating_update", m.other.gating_update);
    m.other.resume = o.get("resume", m.other.resume);
    m.other.baseline_misc = o.get("baseline_misc", m.other.baseline_misc);
    o.finish();
  }
  r.finish();
}

}  // namespace detail

struct ScenarioOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
};

// Parse a YAML scenario document. Errors carry the line and dotted field.
inline Scenario parse_scenario(const std::string& text, const ScenarioOverrides& ov = {}) {
  using detail::YamlReader;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ParseError(static_cast<std::size_t>(e.mark.line + 1), "", e.msg);
  }
  if (!root || !root.IsMap()) throw ParseError(1, "", "scenario must be a YAML mapping");

  Scenario s;
  YamlReader top(root, "");
  s.name = top.get<std::string>("name", s.name);
  s.seed = top.get<std::uint64_t>("seed", 0);
  std::string profile = top.get<std::string>("profile", "calibrated");
  if (ov.profile) profile = *ov.profile;
  if (ov.seed) s.seed = *ov.seed;
  try {
    s.latency = LatencyModel::profile(profile);
  } catch (const ConfigError& e) {
    YamlReader::fail(top.raw("profile"), "profile", e.what());
  }

  {
    if (!top.has("deployment")) throw ParseError(0, "deployment", "missing required section");
    auto d = top.child("deployment");
    auto& c = s.deployment;
    auto mode = d.require<std::string>("mode");
    if (mode == "MACollocated")
      c.mode = DeploymentMode::MACollocated;
    else if (mode == "MADisaggregated")
      c.mode = DeploymentMode::MADisaggregated;
    else
      YamlReader::fail(d.raw("mode"), d.sub("mode"), "expected MACollocated or MADisaggregated");
    c.num_devices = d.require<std::uint32_t>("num_devices");
    c.dp_size = d.require<std::uint32_t>("dp_size");
    c.ep_size = d.get<std::uint32_t>("ep_size", c.mode == DeploymentMode::MACollocated ? c.dp_size : 0);
    c.attention_tp = d.get<std::uint32_t>("attention_tp", 1);
    c.dense_ffn_tp = d.get<std::uint32_t>("dense_ffn_tp", 4);
    c.num_dense_ffn_groups = d.get<std::uint32_t>("num_dense_ffn_groups", 0);
    c.num_experts = d.require<std::uint32_t>("num_experts");
    c.top_k = d.get<std::uint32_t>("top_k", 8);
    c.model = d.get<std::string>("model", c.model);
    c.microbatch_class = d.get<std::string>("microbatch_class", c.microbatch_class);
    c.redundant_replicas = uniform_replicas(c.num_experts, d.get<std::uint32_t>("replicas", 1));
    if (d.has("replica_overrides")) {
      auto ro = d.raw("replica_overrides");
      if (!ro.IsMap()) YamlReader::fail(ro, d.sub("replica_overrides"), "expected a mapping expert -> count");
      for (const auto& kv : ro) {
        auto field = d.sub("replica_overrides") + "." + kv.first.Scalar();
        auto e = YamlReader::convert<std::uint32_t>(kv.first, field);
        if (e >= c.num_experts) YamlReader::fail(kv.first, field, "expert id out of range");
        c.redundant_replicas[e] = YamlReader::convert<std::uint32_t>(kv.second, field);
      }
    }
    d.finish();
  }

  if (top.has("workload")) {
    auto w = top.child("workload");
    if (w.has("sequences")) {
      auto seqs = w.raw("sequences");
      if (!seqs.IsSequence()) YamlReader::fail(seqs, "workload.sequences", "expected a list");
      for (std::size_t i = 0; i < seqs.size(); ++i) {
        YamlReader q(seqs[i], "workload.sequences[" + std::to_string(i) + "]");
        SequenceSpec sp;
        sp.prompt_len = q.require<std::uint32_t>("prompt_len");
        sp.arrival = q.get<double>("arrival", 0.0);
        sp.decode_target = q.require<std::uint32_t>("decode_target");
        q.finish();
        s.workload.push_back(sp);
      }
    }
    if (w.has("generate")) {
      auto g = w.child("generate");
      auto count = g.require<std::uint32_t>("count");
      auto pmin = g.get<std::uint32_t>("prompt_min", 16), pmax = g.get<std::uint32_t>("prompt_max", 512);
      auto dmin = g.get<std::uint32_t>("decode_min", 16), dmax = g.get<std::uint32_t>("decode_max", 256);
      auto span = g.get<double>("arrival_span", 0.0);
      g.finish();
      if (pmin == 0 || pmin > pmax || dmin == 0 || dmin > dmax)
        YamlReader::fail(w.raw("generate"), "workload.generate", "need 1 <= min <= max for prompt and decode");
      std::mt19937_64 rng(s.seed ^ 0x5EED5EED5EEDULL);
      for (std::uint32_t i = 0; i < count; ++i) {
        SequenceSpec sp;
        sp.prompt_len = pmin + static_cast<std::uint32_t>(rng() % (pmax - pmin + 1));
        sp.decode_target = dmin + static_cast<std::uint32_t>(rng() % (dmax - dmin + 1));
        sp.arrival = span * static_cast<double>(rng() >> 11) * 0x1.0p-53;
        s.workload.push_back(sp);
      }
    }
    w.finish();
  }

  if (top.has("faults")) {
    auto fl = top.raw("faults");
    if (!fl.IsSequence()) YamlReader::fail(fl, "faults", "expected a list");
    for (std::size_t i = 0; i < fl.size(); ++i) {
      YamlReader f(fl[i], "faults[" + std::to_string(i) + "]");
      InjectedFault inj;
      inj.device = f.require<std::uint32_t>("device");
      inj.time = f.require<double>("time");
      if (f.has("level")) {
        auto lv = f.raw("level");
        if (lv.IsNull() || (lv.IsScalar() && lv.Scalar() == "silent"))
          inj.level.reset();
        else
          inj.level = detail::parse_level(lv, f.sub("level"));
      }
      inj.error_type = f.get<std::string>("error_type", inj.error_type);
      f.finish();
      s.faults.push_back(inj);
    }
  }

  if (top.has("policy")) {
    auto p = top.child("policy");
    s.policy.allow_role_switch = p.get("allow_role_switch", s.policy.allow_role_switch);
    s.policy.allow_missing_experts = p.get("allow_missing_experts", s.policy.allow_missing_experts);
    s.policy.background_switch = p.get("background_switch", s.policy.background_switch);
    s.policy.degradation_threshold = p.get("degradation_threshold", s.policy.degradation_threshold);
    if (p.has("fault_actions")) {
      auto fa = p.raw("fault_actions");
      if (!fa.IsMap()) YamlReader::fail(fa, "policy.fault_actions", "expected a mapping level -> action");
      for (const auto& kv : fa) {
        auto field = "policy.fault_actions." + kv.first.Scalar();
        s.fault_policy.set(detail::parse_level(kv.first, field), detail::parse_action(kv.second, field));
      }
    }
    p.finish();
  }

  if (top.has("detection")) {
    auto d = top.child("detection");
    s.detection.heartbeat.interval = d.get("heartbeat_interval", s.detection.heartbeat.interval);
    s.detection.heartbeat.miss_threshold = d.get<std::uint32_t>("miss_threshold", s.detection.heartbeat.miss_threshold);
    s.detection.poll_interval = d.get("poll_interval", s.detection.poll_interval);
    d.finish();
  }

  if (top.has("simulation")) {
    auto m = top.child("simulation");
    s.sim.step_time = m.get("step_time", s.sim.step_time);
    s.sim.block_size = m.get<std::uint32_t>("block_size", s.sim.block_size);
    s.sim.blocks_per_executor = m.get<std::uint32_t>("blocks_per_executor", s.sim.blocks_per_executor);
    s.sim.drain = m.get("drain", s.sim.drain);
    s.sim.max_steps = m.get<std::uint32_t>("max_steps", s.sim.max_steps);
    m.finish();
  }

  if (top.has("compile_cache")) {
    auto c = top.child("compile_cache");
    s.precompile = c.get("precompile", s.precompile);
    c.finish();
  }

  if (top.has("latencies")) detail::read_latencies(top.child("latencies"), s.latency);
  top.finish();

  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw ParseError(0, "", e.what());
  }
  return s;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline Scenario load_scenario_file(const std::string& path, const ScenarioOverrides& ov = {}) {
  return parse_scenario(read_text_file(path), ov);
}

}  // namespace revive
