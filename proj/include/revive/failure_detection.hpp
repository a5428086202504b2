// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "revive/error.hpp"
#include "revive/types.hpp"

namespace revive {

enum class FaultLevel : std::uint8_t { L1 = 1, L2, L3, L4, L5, L6 };

inline FaultLevel fault_level_from_int(int level) {
  if (level < 1 || level > 6) throw ConfigError("fault level must be in L1..L6, got " + std::to_string(level));
  return static_cast<FaultLevel>(level);
}

inline std::string to_string(FaultLevel l) { return "L" + std::to_string(static_cast<int>(l)); }

struct FaultCode {
  FaultLevel level = FaultLevel::L6;
  std::string event_id;
  SimTime alarm_time = 0.0;
  std::string error_type;

  friend bool operator==(const FaultCode&, const FaultCode&) = default;
};

enum class FaultAction { Ignore, LogOnly, TriggerRecovery };

constexpr std::string_view to_string(FaultAction a) {
  switch (a) {
    case FaultAction::Ignore: return "Ignore";
    case FaultAction::LogOnly: return "LogOnly";
    case FaultAction::TriggerRecovery: return "TriggerRecovery";
  }
  return "?";
}

// Level -> action table. L1 is benign and L6 isolates the NPU; the levels in
// between default to log-only (L2, L3) or recovery (L4, L5).
struct FaultPolicy {
  std::array<FaultAction, 6> actions{FaultAction::Ignore,          FaultAction::LogOnly,
                                     FaultAction::LogOnly,         FaultAction::TriggerRecovery,
                                     FaultAction::TriggerRecovery, FaultAction::TriggerRecovery};

  FaultAction classify(FaultLevel level) const { return actions[static_cast<std::size_t>(level) - 1]; }
  void set(FaultLevel level, FaultAction a) { actions[static_cast<std::size_t>(level) - 1] = a; }
};

inline FaultAction classify_fault(const FaultCode& code, const FaultPolicy& policy = {}) {
  return policy.classify(code.level);
}

enum class FaultSource { HeartbeatTimeout, AnnotationReport };

constexpr std::string_view to_string(FaultSource s) {
  return s == FaultSource::HeartbeatTimeout ? "HeartbeatTimeout" : "AnnotationReport";
}

struct FaultEvent {
  FaultSource source = FaultSource::HeartbeatTimeout;
  DeviceId device = 0;
  std::optional<FaultCode> code;  // absent for heartbeat timeouts
  SimTime detected_at = 0.0;

  friend bool operator==(const FaultEvent&, const FaultEvent&) = default;
};

struct HeartbeatConfig {
  SimTime interval = 1.0;
  std::uint32_t miss_threshold = 3;
};

struct HeartbeatRecord {
  ExecutorId executor = 0;
  SimTime last_seen = 0.0;
  std::uint32_t missed = 0;
  bool suspect = false;
};

// Tracks executor liveness. A check counts a miss for every executor that
// has been silent for at least one interval; reaching the threshold emits a
// single HeartbeatTimeout and marks the executor suspect.
class HeartbeatMonitor {
 public:
  explicit HeartbeatMonitor(HeartbeatConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.interval <= 0.0) throw ConfigError("heartbeat interval must be > 0");
    if (cfg_.miss_threshold == 0) throw ConfigError("heartbeat miss threshold must be > 0");
  }

  const HeartbeatConfig& config() const noexcept { return cfg_; }

  // (Re)registering clears the suspect flag.
  void register_executor(ExecutorId id, SimTime now) { records_[id] = HeartbeatRecord{id, now, 0, false}; }

  void unregister_executor(ExecutorId id) { records_.erase(id); }

  void record_heartbeat(ExecutorId id, SimTime now) {
    auto it = records_.find(id);
    if (it == records_.end()) throw LookupError("heartbeat from unregistered executor " + std::to_string(id));
    it->second.last_seen = now;
    it->second.missed = 0;
  }

  std::vector<FaultEvent> check_timeouts(SimTime now) {
    constexpr double kSlack = 1e-9;
    std::vector<FaultEvent> events;
    for (auto& [id, rec] : records_) {  // std::map: ordered by executor id
      if (rec.suspect) continue;
      if (now - rec.last_seen + kSlack >= cfg_.interval) ++rec.missed;
      if (rec.missed >= cfg_.miss_threshold) {
        rec.suspect = true;
        events.push_back(FaultEvent{FaultSource::HeartbeatTimeout, id, std::nullopt, now});
      }
    }
    return events;
  }

  const HeartbeatRecord& record(ExecutorId id) const {
    auto it = records_.find(id);
    if (it == records_.end()) throw LookupError("unregistered executor " + std::to_string(id));
    return it->second;
  }

  std::size_t size() const noexcept { return records_.size(); }

 private:
  HeartbeatConfig cfg_;
  std::map<ExecutorId, HeartbeatRecord> records_;
};

// Stand-in for the device-plugin annotation poller: fault codes are posted
// when raised and reported at the first poll at or after their alarm time.
class AnnotationPoller {
 public:
  void post(DeviceId device, FaultCode code) { pending_.push_back({device, std::move(code)}); }

  std::vector<FaultEvent> poll(SimTime now) {
    std::vector<FaultEvent> events;
    std::vector<Posted> keep;
    for (auto& p : pending_) {
      if (p.code.alarm_time <= now)
        events.push_back(FaultEvent{FaultSource::AnnotationReport, p.device, p.code, now});
      else
        keep.push_back(std::move(p));
    }
    pending_ = std::move(keep);
    return events;
  }

  bool empty() const noexcept { return pending_.empty(); }

 private:
  struct Posted {
    DeviceId device;
    FaultCode code;
  };
  std::vector<Posted> pending_;
};

}  // namespace revive
