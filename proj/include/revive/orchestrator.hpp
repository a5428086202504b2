// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "revive/block_table.hpp"
#include "revive/cluster.hpp"
#include "revive/comm_domain.hpp"
#include "revive/error.hpp"
#include "revive/failure_detection.hpp"
#include "revive/graph_compile.hpp"
#include "revive/latency.hpp"
#include "revive/scenario.hpp"
#include "revive/sequence_state.hpp"
#include "revive/trace.hpp"
#include "revive/weight_integrity.hpp"

namespace revive {

// Discrete-event queue. Equal timestamps fire in insertion order.
class EventQueue {
 public:
  using Action = std::function<void(SimTime)>;

  void schedule(SimTime at, Action fn) { heap_.push(Item{at, next_seq_++, std::move(fn)}); }

  // Runs until empty or stop() is called from inside an action.
  void run() {
    stopped_ = false;
    while (!heap_.empty() && !stopped_) {
      Item it = heap_.top();
      heap_.pop();
      now_ = it.at;
      it.fn(it.at);
    }
  }

  void stop() { stopped_ = true; }
  void clear() { heap_ = {}; }
  SimTime now() const noexcept { return now_; }
  bool empty() const noexcept { return heap_.empty(); }

 private:
  struct Item {
    SimTime at;
    std::uint64_t seq;
    Action fn;
    bool operator>(const Item& o) const { return at > o.at || (at == o.at && seq > o.seq); }
  };
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap_;
  std::uint64_t next_seq_ = 0;
  SimTime now_ = 0;
  bool stopped_ = false;
};

// Where each unfinished sequence stands at a point in time.
struct SequenceSnapshot {
  ExecutorId executor = 0;
  std::vector<TokenId> tokens;  // prompt ++ decoded
  SeqPhase phase = SeqPhase::WaitingPrefill;
  friend bool operator==(const SequenceSnapshot&, const SequenceSnapshot&) = default;
};

struct PostRecoveryStats {
  std::size_t completed = 0;
  std::size_t unfinished = 0;
  std::size_t steps = 0;
};

// One scenario run: the serving instance before the fault, detection, and the
// recovery pipeline (stop, revert, migrate, weight plan, domain rebuild,
// cached compile, resume).
class Simulation {
 public:
  explicit Simulation(Scenario sc, CacheStore* store = nullptr)
      : sc_(std::move(sc)), rng_(sc_.seed), monitor_(sc_.detection.heartbeat) {
    sc_.validate();
    cluster_ = build_cluster(sc_.deployment);
    initial_domains_ = domains_ = build_domains(cluster_);
    if (store) {
      store_ = store;
    } else {
      owned_store_.emplace();
      store_ = &*owned_store_;
    }
    for (DeviceId d : cluster_.healthy_attention_devices())
      executors_.emplace(d, AttentionExecutor(d, sc_.sim.blocks_per_executor, sc_.sim.block_size, sc_.seed));
    for (std::size_t i = 0; i < sc_.workload.size(); ++i) {
      const auto& w = sc_.workload[i];
      Sequence s;
      s.id = i;
      s.decode_target = w.decode_target;
      for (std::uint32_t p = 0; p < w.prompt_len; ++p) s.prompt_tokens.push_back(synth_token(~sc_.seed, i, p));
      arrivals_.push_back({w.arrival, std::move(s)});
    }
    std::stable_sort(arrivals_.begin(), arrivals_.end(),
                     [](const Arrival& a, const Arrival& b) { return a.at < b.at; });
  }

  const Scenario& scenario() const noexcept { return sc_; }
  const Cluster& cluster() const noexcept { return cluster_; }
  const DomainSet& domains() const noexcept { return domains_; }
  const DomainSet& initial_domains() const noexcept { return initial_domains_; }
  const std::map<ExecutorId, AttentionExecutor>& executors() const noexcept { return executors_; }
  const RecoveryTrace& trace() const noexcept { return trace_; }
  const std::optional<RecoveryPlan>& plan() const noexcept { return plan_; }
  const std::optional<GraphCacheKey>& compiled_key() const noexcept { return compiled_key_; }

  // Unfinished sequences at the start of the interrupted step.
  const std::map<SeqId, SequenceSnapshot>& pre_failure() const noexcept { return pre_failure_; }
  // Unfinished sequences once every recovery pipeline has finished.
  const std::map<SeqId, SequenceSnapshot>& post_recovery() const noexcept { return post_recovery_; }
  // Surviving executors' block tables were restored to their step-start state.
  bool tables_restored() const noexcept { return tables_restored_; }
  const PostRecoveryStats& drain_stats() const noexcept { return drain_; }

  RecoveryTrace run() {
    if (ran_) throw StateError("simulation already ran");
    ran_ = true;
    begin_trace("revive");
    if (sc_.precompile)
      precompile_failure_scenarios(sc_.deployment, single_failure_scenarios(sc_.deployment), *store_, sc_.latency);
    run_until_detection();
    try {
      recover();
    } catch (const UnrecoverableError& e) {
      abort(e.what());
      return trace_;
    }
    capture_post_recovery();
    check_post_recovery();
    if (sc_.sim.drain) drain();
    return trace_;
  }

  // Full restart of the instance with a warm compile cache.
  RecoveryTrace run_baseline() {
    if (ran_) throw StateError("simulation already ran");
    ran_ = true;
    begin_trace("baseline");
    run_until_detection();
    const auto& lat = sc_.latency;
    TraceBuilder b(trace_, trace_.detected_at);
    b.phase(Category::Engine, lat.engine, "initialize engine");
    b.phase(Category::ExecutorProcesses, lat.executor_processes, "launch executor processes");
    b.phase(Category::DistributedGroups, lat.distributed_groups, "form torch distributed groups");
    b.phase(Category::Xccl, lat.xccl.create_domain, "form XCCL domain");
    b.phase(Category::Generator, lat.generator.weight_load, "instantiate model and load weights");
    b.phase(Category::Generator, lat.generator.kv_warmup, "KV cache warmup");
    b.phase(Category::ReadCache, lat.read_cache, "read graph cache");
    b.phase(Category::Compile, lat.cached_compile_for(sc_.deployment.mode), "cached compile");
    b.phase(Category::Other, lat.other.baseline_misc, "scheduler init and small overheads");
    return trace_;
  }

  // Invariants that must hold once service resumes. Throws IntegrityViolation.
  void check_post_recovery() const {
    auto fail = [](const std::string& w) { throw IntegrityViolation("post-recovery: " + w); };
    for (const auto& [id, pre] : pre_failure_) {
      auto it = post_recovery_.find(id);
      if (it == post_recovery_.end()) fail("sequence " + std::to_string(id) + " lost");
      if (it->second.tokens != pre.tokens) fail("sequence " + std::to_string(id) + " token list changed");
      if (cluster_.device(it->second.executor).health != Health::Healthy ||
          !hosts_attention(cluster_.device(it->second.executor).role))
        fail("sequence " + std::to_string(id) + " on an unhealthy or non-attention executor");
    }
    ExpertMask unmaterialized;
    auto live = cluster_.materialized_experts();
    for (ExpertId e = 0; e < cluster_.num_experts(); ++e)
      if (!live.count(e)) unmaterialized.insert(e);
    if (unmaterialized != cluster_.expert_mask()) fail("expert mask is not exactly the unmaterialized set");
    for (const auto& d : cluster_.devices())
      if (d.health != Health::Healthy)
        for (ExpertId e = 0; e < cluster_.num_experts(); ++e)
          for (DeviceId r : cluster_.replicas_of(e))
            if (r == d.id) fail("expert " + std::to_string(e) + " still mapped to unhealthy device");
    if (domains_.world != initial_domains_.world) fail("world group changed");
    for (const auto* a : domains_.all()) {
      if (a->kind() == DomainKind::World) continue;
      for (DeviceId d : a->devices_by_rank())
        if (cluster_.device(d).health != Health::Healthy) fail(std::string(to_string(a->kind())) + " holds an unhealthy device");
    }
    if (domains_.dp.size() != cluster_.attention_replicas()) fail("DP group size differs from attention replicas");
    if (domains_.ep.size() != cluster_.expert_parallel_width()) fail("EP group size differs from expert devices");
    if (!cluster_.dense_groups().empty()) {
      double sum = 0;
      for (const auto& g : cluster_.dense_groups()) sum += g.routing_weight;
      if (std::abs(sum - 1.0) > 1e-9) fail("dense-FFN routing weights do not sum to 1");
    }
    for (const auto& [id, ex] : executors_) ex.block_table().check_invariants();
  }

 private:
  struct Arrival {
    SimTime at;
    Sequence seq;
  };

  using J = nlohmann::ordered_json;

  void begin_trace(const char* kind) {
    trace_.scenario = sc_.name;
    trace_.kind = kind;
    trace_.mode = sc_.deployment.mode;
    trace_.seed = sc_.seed;
  }

  // ---- pre-failure service and detection ----

  void run_until_detection() {
    const InjectedFault& f = sc_.covered_fault();
    fault_ = f;
    trace_.fault_time = f.time;
    for (const auto& d : cluster_.devices()) monitor_.register_executor(d.id, 0.0);

    for (std::size_t i = 0; i < sc_.faults.size(); ++i) {
      const auto& inj = sc_.faults[i];
      q_.schedule(inj.time, [this, i](SimTime t) { inject(sc_.faults[i], i, t); });
    }
    q_.schedule(0.0, [this](SimTime t) { step(t, 0); });
    const double hb = sc_.detection.heartbeat.interval, poll = sc_.detection.poll_interval;
    q_.schedule(hb, [this, hb](SimTime t) { heartbeat_tick(t, 1, hb); });
    q_.schedule(poll, [this, poll](SimTime t) { poll_tick(t, 1, poll); });
    q_.run();
    q_.clear();
    if (!detected_) throw IntegrityViolation("fault was never detected");
  }

  void inject(const InjectedFault& f, std::size_t index, SimTime t) {
    bool covered = sc_.covered(f);
    if (covered) cluster_.set_health(f.device, Health::Failed);
    if (f.level)
      poller_.post(f.device, FaultCode{*f.level, "evt-" + std::to_string(index), t, f.error_type});
    TraceBuilder(trace_, t).note("fault_injected", J{{"device", f.device},
                                                     {"time", round_us(t)},
                                                     {"level", f.level ? to_string(*f.level) : "silent"},
                                                     {"error_type", f.error_type}});
  }

  void heartbeat_tick(SimTime t, std::uint64_t k, double interval) {
    if (detected_) return;
    for (const auto& d : cluster_.devices())
      if (d.health == Health::Healthy) monitor_.record_heartbeat(d.id, t);
    handle(monitor_.check_timeouts(t), t);
    if (!detected_) q_.schedule(static_cast<double>(k + 1) * interval, [this, k, interval](SimTime n) { heartbeat_tick(n, k + 1, interval); });
  }

  void poll_tick(SimTime t, std::uint64_t k, double interval) {
    if (detected_) return;
    handle(poller_.poll(t), t);
    if (!detected_) q_.schedule(static_cast<double>(k + 1) * interval, [this, k, interval](SimTime n) { poll_tick(n, k + 1, interval); });
  }

  void handle(const std::vector<FaultEvent>& events, SimTime t) {
    for (const auto& ev : events) {
      FaultAction action = ev.code ? classify_fault(*ev.code, sc_.fault_policy) : FaultAction::TriggerRecovery;
      J j{{"source", std::string(to_string(ev.source))},
          {"device", ev.device},
          {"detected_at", round_us(ev.detected_at)},
          {"action", std::string(to_string(action))}};
      if (ev.code) {
        j["level"] = to_string(ev.code->level);
        j["event_id"] = ev.code->event_id;
        j["alarm_time"] = round_us(ev.code->alarm_time);
      }
      TraceBuilder(trace_, t).note("fault_event", std::move(j));
      if (action == FaultAction::TriggerRecovery && !detected_ && ev.device == fault_->device) {
        detected_ = true;
        trace_.detected_at = t;
        trace_.records.emplace_back(Phase{Category::Detection, fault_->time, t,
                                          std::string("detected via ") + std::string(to_string(ev.source)),
                                          Pipeline::Foreground});
        q_.stop();
      }
    }
  }

  void admit_arrivals(SimTime t) {
    while (next_arrival_ < arrivals_.size() && arrivals_[next_arrival_].at <= t) {
      auto& a = arrivals_[next_arrival_++];
      std::optional<ExecutorId> best;
      std::size_t best_load = 0;
      for (const auto& [id, ex] : executors_) {
        if (cluster_.device(id).health != Health::Healthy) continue;
        if (!best || ex.active_count() < best_load) {
          best = id;
          best_load = ex.active_count();
        }
      }
      if (!best) throw UnrecoverableError("no attention executor to admit requests");
      executors_.at(*best).enqueue(std::move(a.seq));
    }
  }

  // One synchronized generation step on every attention executor. The step
  // containing the covered fault never completes: each executor gets through
  // a random prefix of its work and then blocks on the collective.
  void step(SimTime t, std::uint64_t k) {
    if (detected_) return;
    admit_arrivals(t);
    const SimTime end = static_cast<double>(k + 1) * sc_.sim.step_time;
    const bool interrupted = fault_->time < end;
    if (interrupted) {
      for (const auto& [id, ex] : executors_)
        for (const auto& [sid, s] : ex.sequences())
          if (!s.finished()) pre_failure_[sid] = SequenceSnapshot{id, build_recovery_prompt(s), s.phase};
      for (const auto& [id, ex] : executors_) step_start_tables_.emplace(id, ex.block_table());
    }
    for (auto& [id, ex] : executors_) {
      ex.begin_step();
      auto work = ex.runnable();
      std::size_t n = work.size();
      if (interrupted) n = static_cast<std::size_t>(rng_() % (work.size() + 1));
      for (std::size_t i = 0; i < n; ++i) ex.process(work[i]);
      if (!interrupted) ex.end_step();
    }
    if (!interrupted) q_.schedule(end, [this, k](SimTime n) { step(n, k + 1); });
  }

  // ---- recovery pipeline ----

  std::map<ExecutorId, std::size_t> attention_loads(std::optional<ExecutorId> exclude = std::nullopt) const {
    std::map<ExecutorId, std::size_t> loads;
    for (const auto& [id, ex] : executors_)
      if (id != exclude && cluster_.device(id).health == Health::Healthy) loads[id] = ex.active_count();
    return loads;
  }

  void migrate_from(ExecutorId from, TraceBuilder& b, const char* why) {
    auto& src = executors_.at(from);
    auto seqs = src.release_for_migration();
    std::vector<SeqId> ids;
    for (const auto& s : seqs) ids.push_back(s.id);
    auto plan = plan_migration(from, ids, attention_loads(from));
    J moves = J::array();
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      ExecutorId to = plan.moves[i].second;
      moves.push_back(J{{"seq", seqs[i].id}, {"to", to}, {"prompt_len", build_recovery_prompt(seqs[i]).size()}});
      executors_.at(to).enqueue(std::move(seqs[i]));
    }
    executors_.erase(from);
    b.note("migration", J{{"from", from}, {"reason", why}, {"moves", moves}});
  }

  void note_domains(TraceBuilder& b) {
    for (const auto* a : domains_.all()) {
      J pairs = J::array();
      for (const auto& [d, r] : a->pairs()) pairs.push_back(J::array({d, r}));
      b.note("assignment", J{{"domain", std::string(to_string(a->kind()))}, {"ranks", pairs}});
    }
  }

  void rebuild_and_compile(TraceBuilder& b) {
    const auto& lat = sc_.latency;
    for (const auto& st : rebuild_domains(sc_.deployment.mode, lat).steps) {
      switch (st.kind) {
        case RebuildStepKind::DestroyTrampoline:
          b.phase(Category::Xccl, st.xccl_seconds, "destroy trampoline domain");
          break;
        case RebuildStepKind::DestroyAttentionExpert:
          b.phase(Category::Xccl, st.xccl_seconds, "destroy attention-expert domain");
          break;
        case RebuildStepKind::RecreateWithAssignment:
          b.phase(Category::DistributedGroups, st.distributed_groups_seconds,
                  "reassign DP/EP subgroups, world group intact");
          b.phase(Category::Xccl, st.xccl_seconds, "recreate attention-expert domain with compacted ranks");
          break;
      }
    }
    note_domains(b);
    GraphCacheKey key = cache_key_for(cluster_);
    compiled_key_ = key;
    auto res = compile(key, *store_, lat, b.now());
    b.note("compile", J{{"key", key.canonical()}, {"cache_hit", res.cache_hit}});
    if (res.cache_hit) {
      b.phase(Category::ReadCache, res.read_cache, "read graph cache from disk");
      b.phase(Category::Compile, res.compile, "cached compile");
    } else {
      b.phase(Category::FullCompile, res.compile, "full graph compile, no cache for this configuration");
    }
  }

  void check_mask_routable() const {
    std::size_t unmasked = cluster_.num_experts() - cluster_.expert_mask().size();
    if (unmasked < sc_.deployment.top_k)
      throw UnrecoverableError("mask leaves " + std::to_string(unmasked) + " experts, fewer than top_k");
  }

  void run_role_switch(RoleSwitchDriver& drv, TraceBuilder& b) {
    migrate_from(drv.donor(), b, "role switch donor");
    while (drv.phase() != RoleSwitchPhase::Done) {
      auto ev = drv.step(cluster_, domains_, sc_.latency);
      if (!ev) {
        b.note("warning", J{{"message", "donor lost during role switch, falling back to missing experts"}});
        apply_missing_mask(cluster_);
        check_mask_routable();
        return;
      }
      if (ev->phase == RoleSwitchPhase::RejoiningDomain)
        b.note("role_switch", J{{"phase", std::string(to_string(ev->phase))}, {"detail", ev->detail}});
      else
        b.phase(ev->category, ev->duration, ev->detail);
    }
  }

  void recover() {
    const DeviceId failed = fault_->device;
    const DeviceRole role = cluster_.device(failed).role;
    const auto& lat = sc_.latency;
    TraceBuilder b(trace_, trace_.detected_at);

    b.phase(Category::Other, lat.other.global_stop, "global stop signal to all executors");
    std::size_t reverted = 0;
    tables_restored_ = true;
    for (auto& [id, ex] : executors_) {
      reverted += ex.step_in_flight() ? 1 : 0;
      ex.revert_in_flight_step();
      if (id != failed && !(ex.block_table() == step_start_tables_.at(id))) tables_restored_ = false;
    }
    b.phase(Category::Other, lat.other.step_revert, "revert in-flight step on " + std::to_string(reverted) + " executors");

    bool role_switched = false;
    if (hosts_attention(role)) {
      migrate_from(failed, b, "executor failed");
      b.phase(Category::Other, lat.other.migration, "migrate sequences off failed executor " + std::to_string(failed));
    }

    std::optional<RoleSwitchDriver> background;
    if (hosts_experts(role) && !cluster_.experts_on_device(failed).empty()) {
      const ExpertMask lost = cluster_.experts_on_device(failed);
      const Rank failed_ep_rank = domains_.ep.rank_of(failed);
      plan_ = decide_moe_recovery(cluster_, failed, sc_.policy, domains_.dp, attention_loads());
      J pj{{"plan", std::string(plan_->name())}};
      if (auto* rs = std::get_if<RoleSwitch>(&plan_->action)) pj["donor"] = rs->donor;
      if (auto* mm = std::get_if<MissingExpertMask>(&plan_->action)) pj["masked"] = mm->experts;
      if (plan_->background_donor) pj["background_donor"] = *plan_->background_donor;
      b.note("plan", pj);
      for (const auto& w : plan_->warnings) b.note("warning", J{{"message", w}});

      if (std::holds_alternative<RedundantExpertRemap>(plan_->action)) {
        apply_redundant_remap(cluster_, failed);
        b.phase(Category::Other, lat.other.gating_update, "remove failed replicas from the expert map");
      } else if (auto* mm = std::get_if<MissingExpertMask>(&plan_->action)) {
        apply_missing_mask(cluster_);
        check_mask_routable();
        b.phase(Category::Other, lat.other.gating_update,
                "mask " + std::to_string(mm->experts.size()) + " missing experts in the gate");
        if (plan_->background_donor) background.emplace(*plan_->background_donor, failed, lost, failed_ep_rank);
      } else {
        RoleSwitchDriver drv(std::get<RoleSwitch>(plan_->action).donor, failed, lost, failed_ep_rank);
        run_role_switch(drv, b);
        role_switched = drv.phase() == RoleSwitchPhase::Done;
      }
    }

    if (!cluster_.dense_groups().empty() && dense_group_contains(cluster_, failed)) {
      auto w = rebalance_dense_ffn(cluster_);
      b.note("dense_ffn", J{{"weights", w}});
      b.phase(Category::Other, lat.other.gating_update, "rebalance tokens over healthy dense-FFN groups");
    }

    if (cluster_.device(failed).health == Health::Failed) cluster_.set_health(failed, Health::Isolated);
    if (!role_switched) domains_ = exclude_device(domains_, failed);
    if (domains_.dp.size() == 0) throw UnrecoverableError("no attention executor left");

    rebuild_and_compile(b);
    b.phase(Category::Other, lat.other.resume, "resume inference");
    resumed_at_ = b.now();

    if (background) {
      TraceBuilder bg(trace_, resumed_at_, Pipeline::Background);
      bg.note("background", J{{"message", "role switch while serving with masked experts"}});
      run_role_switch(*background, bg);
      if (background->phase() == RoleSwitchPhase::Done) {
        rebuild_and_compile(bg);
        bg.phase(Category::Other, lat.other.resume, "resume with full expert set");
        bg.note("upgrade", J{{"mask_size", cluster_.expert_mask().size()}});
      }
    }
    trace_.outcome = Outcome::Recovered;
  }

  void abort(const std::string& reason) {
    trace_.outcome = Outcome::Aborted;
    trace_.reason = reason;
    TraceBuilder(trace_, trace_.detected_at).note("abort", J{{"reason", reason}});
  }

  void capture_post_recovery() {
    for (const auto& [id, ex] : executors_)
      for (const auto& [sid, s] : ex.sequences())
        if (!s.finished()) post_recovery_[sid] = SequenceSnapshot{id, build_recovery_prompt(s), s.phase};
  }

  void drain() {
    SimTime t = resumed_at_;
    auto pending = [&] {
      if (next_arrival_ < arrivals_.size()) return true;
      for (const auto& [id, ex] : executors_)
        if (ex.active_count() > 0) return true;
      return false;
    };
    while (pending() && drain_.steps < sc_.sim.max_steps) {
      admit_arrivals(t);
      for (auto& [id, ex] : executors_) {
        ex.begin_step();
        for (SeqId s : ex.runnable()) ex.process(s);
        ex.end_step();
      }
      ++drain_.steps;
      t += sc_.sim.step_time;
    }
    for (const auto& [id, ex] : executors_) drain_.unfinished += ex.active_count();
    drain_.completed = next_arrival_ - drain_.unfinished;
    TraceBuilder(trace_, t).note("post_recovery", J{{"completed", drain_.completed},
                                                    {"unfinished", drain_.unfinished},
                                                    {"steps", drain_.steps}});
  }

  Scenario sc_;
  std::mt19937_64 rng_;
  Cluster cluster_;
  DomainSet domains_;
  DomainSet initial_domains_;
  std::optional<CacheStore> owned_store_;
  CacheStore* store_ = nullptr;
  std::map<ExecutorId, AttentionExecutor> executors_;
  std::vector<Arrival> arrivals_;
  std::size_t next_arrival_ = 0;
  HeartbeatMonitor monitor_;
  AnnotationPoller poller_;
  EventQueue q_;
  std::optional<InjectedFault> fault_;
  bool detected_ = false;
  bool ran_ = false;
  RecoveryTrace trace_;
  std::optional<RecoveryPlan> plan_;
  std::optional<GraphCacheKey> compiled_key_;
  std::map<SeqId, SequenceSnapshot> pre_failure_;
  std::map<SeqId, SequenceSnapshot> post_recovery_;
  std::map<ExecutorId, BlockTable> step_start_tables_;
  bool tables_restored_ = false;
  SimTime resumed_at_ = 0;
  PostRecoveryStats drain_;
};

inline RecoveryTrace run_scenario(const Scenario& sc, CacheStore* store = nullptr) {
  return Simulation(sc, store).run();
}

inline RecoveryTrace run_baseline_reinit(const Scenario& sc) { return Simulation(sc).run_baseline(); }

}  // namespace revive
