// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "revive/revive.hpp"

namespace revive::cli {

// Process exit codes. Stable; documented in the README.
enum ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kParseError = 2,
  kAborted = 3,
  kIoError = 4,
  kInvariantViolation = 5,
};

inline constexpr const char* kStoreEnv = "REVIVE_STORE_DIR";

struct Common {
  std::string scenario;
  std::string out;
  std::string store;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> profile;
};

inline std::string default_store(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kStoreEnv)) return env;
  return {};
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw IoError("write failed: " + path);
}

inline Scenario load(const Common& c) { return load_scenario_file(c.scenario, ScenarioOverrides{c.seed, c.profile}); }

inline std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

inline std::string pct(double fraction) { return fmt(fraction * 100.0, 2) + "%"; }

inline int cmd_run(const Common& c, bool baseline, std::ostream& out, std::ostream& err) {
  Scenario sc = load(c);
  RecoveryTrace bl = run_baseline_reinit(sc);
  if (baseline) {
    write_output(c.out, to_jsonl(bl), out);
    err << "baseline: total " << fmt(bl.total()) << " s\n";
    return kOk;
  }
  std::string store_dir = default_store(c.store);
  std::optional<CacheStore> store;
  if (!store_dir.empty()) store = CacheStore::open(store_dir);
  RecoveryTrace tr = run_scenario(sc, store ? &*store : nullptr);
  write_output(c.out, to_jsonl(tr, tr.outcome == Outcome::Recovered ? std::optional(bl.total()) : std::nullopt), out);
  if (tr.outcome == Outcome::Aborted) {
    err << "aborted: " << tr.reason << '\n';
    return kAborted;
  }
  err << "recovered: total " << fmt(tr.total()) << " s, baseline " << fmt(bl.total()) << " s";
  if (bl.total() > 0) err << ", reduction " << pct(1.0 - tr.total() / bl.total());
  err << '\n';
  return kOk;
}

inline int cmd_compare(const std::string& revive_path, const std::string& baseline_path, const std::string& out_path,
                       std::ostream& out, std::ostream& err) {
  auto rv = parse_trace_jsonl(read_text_file(revive_path));
  auto bl = parse_trace_jsonl(read_text_file(baseline_path));
  TraceComparison cmp = compare_traces(rv, bl);
  for (const auto& w : cmp.warnings) err << "warning: " << w << '\n';

  std::ostringstream t;
  t << std::left << std::setw(20) << "category" << std::right << std::setw(12) << "revive" << std::setw(12)
    << "baseline" << std::setw(12) << "delta" << '\n';
  for (const auto& d : cmp.categories)
    t << std::left << std::setw(20) << to_string(d.category) << std::right << std::setw(12) << fmt(d.revive)
      << std::setw(12) << fmt(d.baseline) << std::setw(12) << fmt(d.delta()) << '\n';
  t << std::left << std::setw(20) << "total" << std::right << std::setw(12) << fmt(cmp.revive_total) << std::setw(12)
    << fmt(cmp.baseline_total) << std::setw(12) << fmt(cmp.revive_total - cmp.baseline_total) << '\n';
  t << "reduction " << pct(cmp.reduction) << '\n';
  out << t.str();

  if (!out_path.empty()) {
    nlohmann::ordered_json j{{"revive_total", round_us(cmp.revive_total)},
                             {"baseline_total", round_us(cmp.baseline_total)},
                             {"reduction", std::round(cmp.reduction * 1e6) / 1e6}};
    auto cats = nlohmann::ordered_json::array();
    for (const auto& d : cmp.categories)
      cats.push_back({{"category", std::string(to_string(d.category))},
                      {"revive", round_us(d.revive)},
                      {"baseline", round_us(d.baseline)}});
    j["categories"] = cats;
    j["warnings"] = cmp.warnings;
    write_output(out_path, j.dump(2) + "\n", out);
  }
  return kOk;
}

inline int cmd_precompile(const Common& c, std::ostream& out, std::ostream&) {
  Scenario sc = load(c);
  std::string dir = default_store(c.store);
  if (dir.empty()) throw ConfigError("precompile needs --store or " + std::string(kStoreEnv));
  CacheStore store = CacheStore::open(dir);
  auto rep = precompile_failure_scenarios(sc.deployment, single_failure_scenarios(sc.deployment), store, sc.latency);
  std::set<GraphCacheKey> created(rep.created.begin(), rep.created.end());
  for (const auto& k : rep.keys) out << (created.count(k) ? "created " : "exists  ") << k.canonical() << '\n';
  out << rep.created.size() << " new, " << rep.keys.size() << " total, offline compile " << fmt(rep.offline_seconds, 1)
      << " s\n";
  return kOk;
}

struct RouteSimArgs {
  std::size_t experts = 256;
  std::size_t tokens = 4096;
  std::size_t top_k = 8;
  std::string ratio = "1/32";
  std::string selection = "every-nth";
  double skew = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

inline int cmd_route_sim(const RouteSimArgs& a, std::ostream& out, std::ostream&) {
  RouteSimConfig cfg;
  cfg.logits = SyntheticLogitsConfig{a.tokens, a.experts, a.skew, a.seed};
  cfg.top_k = a.top_k;
  cfg.r = parse_fraction(a.ratio);
  if (a.selection == "every-nth")
    cfg.selection = FailedSelection::EveryNth;
  else if (a.selection == "task-based")
    cfg.selection = FailedSelection::TaskBased;
  else
    throw ConfigError("unknown selection '" + a.selection + "' (expected every-nth or task-based)");
  auto rep = run_route_sim(cfg);
  nlohmann::ordered_json j{{"experts", a.experts},
                           {"tokens", a.tokens},
                           {"top_k", a.top_k},
                           {"ratio", to_string(cfg.r)},
                           {"selection", a.selection},
                           {"seed", a.seed},
                           {"masked", rep.mask},
                           {"mask_exclusion", rep.mask_exclusion},
                           {"count_conservation", rep.count_conservation},
                           {"selection_size", rep.selection_size},
                           {"base_counts", rep.base_counts},
                           {"masked_counts", rep.masked_counts}};
  write_output(a.out, j.dump() + "\n", out);
  return rep.mask_exclusion && rep.count_conservation && rep.selection_size ? kOk : kInvariantViolation;
}

inline void inspect_scenario(const Scenario& sc, std::ostream& out) {
  const auto& d = sc.deployment;
  Cluster c = build_cluster(d);
  out << "scenario " << sc.name << " seed " << sc.seed << '\n'
      << "mode " << to_string(d.mode) << ", devices " << d.num_devices << ", dp " << d.dp_size << ", ep " << d.ep_size
      << ", experts " << d.num_experts << ", top_k " << d.top_k << '\n';
  out << "sole-replica experts per expert device:\n";
  for (const auto& dev : c.devices())
    if (hosts_experts(dev.role))
      out << "  device " << dev.id << ": " << c.experts_on_device(dev.id).size() << " hosted, "
          << c.sole_replica_experts(dev.id).size() << " sole\n";
  for (const auto& g : c.dense_groups()) {
    out << "dense-ffn group " << g.id << ":";
    for (DeviceId m : g.members) out << ' ' << m;
    out << '\n';
  }
  DomainSet ds = build_domains(c);
  for (const auto* a : ds.all()) out << to_string(a->kind()) << " size " << a->size() << '\n';
  out << "sequences " << sc.workload.size() << '\n';
  for (const auto& f : sc.faults)
    out << "fault device " << f.device << " at " << fmt(f.time) << " s, "
        << (f.level ? to_string(*f.level) : std::string("silent")) << (sc.covered(f) ? " (covered)" : "") << '\n';
  out << "precompile keys:\n";
  for (FailureKind k : single_failure_scenarios(d)) out << "  " << cache_key_after(d, k).canonical() << '\n';
}

inline void inspect_trace(const RecoveryTrace& t, std::ostream& out) {
  out << t.kind << " trace for " << t.scenario << " (" << to_string(t.mode) << "), outcome " << to_string(t.outcome);
  if (!t.reason.empty()) out << ": " << t.reason;
  out << '\n';
  for (const auto& p : t.phases())
    out << std::left << std::setw(11) << to_string(p.pipeline) << std::setw(20) << to_string(p.category) << std::right
        << std::setw(10) << fmt(p.start) << std::setw(10) << fmt(p.end) << "  " << p.detail << '\n';
  out << "total " << fmt(t.total()) << " s\n";
}

inline int cmd_inspect(const Common& c, const std::string& trace_path, std::ostream& out, std::ostream&) {
  if (!trace_path.empty())
    inspect_trace(parse_trace_jsonl(read_text_file(trace_path)), out);
  else
    inspect_scenario(load(c), out);
  return kOk;
}

inline int cmd_validate(const Common& c, std::ostream& out, std::ostream&) {
  Scenario sc = load(c);
  out << "ok: " << sc.name << " (" << to_string(sc.deployment.mode) << ", " << sc.deployment.num_devices
      << " devices, " << sc.workload.size() << " sequences)\n";
  return kOk;
}

// Parses argv and dispatches. Maps library exceptions onto exit codes.
inline int main_entry(int argc, const char* const* argv, std::ostream& out = std::cout,
                      std::ostream& err = std::cerr) {
  CLI::App app{"Fault-recovery simulator for MoE inference serving"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* s, bool need_scenario) {
    auto* o = s->add_option("--scenario", c.scenario, "scenario YAML file");
    if (need_scenario) o->required();
    s->add_option("--out", c.out, "output file (default stdout)");
    s->add_option("--store", c.store, std::string("compile cache directory (default $") + kStoreEnv + ")");
    s->add_option("--seed", c.seed, "override the scenario seed");
    s->add_option("--profile", c.profile, "latency profile: calibrated or zero");
  };

  bool baseline = false;
  auto* run = app.add_subcommand("run", "run a scenario and write its recovery trace");
  add_common(run, true);
  run->add_flag("--baseline", baseline, "model a full restart instead");

  std::string rv_path, bl_path;
  auto* cmp = app.add_subcommand("compare", "compare a recovery trace against a baseline trace");
  cmp->add_option("revive", rv_path, "recovery trace")->required();
  cmp->add_option("baseline", bl_path, "baseline trace")->required();
  cmp->add_option("--out", c.out, "write a JSON report");

  auto* pre = app.add_subcommand("precompile", "fill the compile cache for single-failure configurations");
  add_common(pre, true);

  RouteSimArgs rs;
  auto* route = app.add_subcommand("route-sim", "routing under masked experts");
  route->add_option("--experts", rs.experts);
  route->add_option("--tokens", rs.tokens);
  route->add_option("--top-k", rs.top_k);
  route->add_option("--ratio", rs.ratio, "failed fraction, e.g. 1/32");
  route->add_option("--selection", rs.selection, "every-nth or task-based");
  route->add_option("--skew", rs.skew, "per-expert popularity bias");
  route->add_option("--seed", rs.seed);
  route->add_option("--out", rs.out);

  std::string trace_path;
  auto* insp = app.add_subcommand("inspect", "summarize a scenario or a trace file");
  add_common(insp, false);
  insp->add_option("trace", trace_path, "trace file");

  auto* val = app.add_subcommand("validate", "parse and validate a scenario");
  add_common(val, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kOk;
    }
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    if (*run) return cmd_run(c, baseline, out, err);
    if (*cmp) return cmd_compare(rv_path, bl_path, c.out, out, err);
    if (*pre) return cmd_precompile(c, out, err);
    if (*route) return cmd_route_sim(rs, out, err);
    if (*insp) {
      if (trace_path.empty() && c.scenario.empty()) {
        err << "usage error: inspect needs --scenario or a trace file\n";
        return kUsage;
      }
      return cmd_inspect(c, trace_path, out, err);
    }
    if (*val) return cmd_validate(c, out, err);
  } catch (const ParseError& e) {
    err << e.what() << '\n';
    return kParseError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kParseError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIoError;
  } catch (const IntegrityViolation& e) {
    err << "invariant violation: " << e.what() << '\n';
    return kInvariantViolation;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}

}  // namespace revive::cli
