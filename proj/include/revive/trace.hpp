// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "revive/error.hpp"
#include "revive/latency.hpp"
#include "revive/types.hpp"

namespace revive {

enum class Pipeline : std::uint8_t { Foreground, Background };
enum class Outcome : std::uint8_t { Recovered, Aborted };

constexpr std::string_view to_string(Pipeline p) { return p == Pipeline::Foreground ? "foreground" : "background"; }
constexpr std::string_view to_string(Outcome o) { return o == Outcome::Recovered ? "Recovered" : "Aborted"; }

struct Phase {
  Category category = Category::Other;
  SimTime start = 0;
  SimTime end = 0;
  std::string detail;
  Pipeline pipeline = Pipeline::Foreground;

  double duration() const { return end - start; }
  friend bool operator==(const Phase&, const Phase&) = default;
};

// Untimed fact recorded along the pipeline (fault event, plan, migration,
// rank assignment, warning).
struct Note {
  std::string type;
  nlohmann::ordered_json data;
  friend bool operator==(const Note&, const Note&) = default;
};

using TraceRecord = std::variant<Phase, Note>;

// Timed recovery (or restart) record. The total runs from detection to the
// end of the last foreground phase; the detection phase precedes it.
struct RecoveryTrace {
  std::string scenario;
  std::string kind = "revive";  // or "baseline"
  DeploymentMode mode = DeploymentMode::MADisaggregated;
  std::uint64_t seed = 0;
  std::vector<TraceRecord> records;
  Outcome outcome = Outcome::Recovered;
  std::string reason;
  SimTime fault_time = 0;
  SimTime detected_at = 0;

  std::vector<Phase> phases(std::optional<Pipeline> only = std::nullopt) const {
    std::vector<Phase> out;
    for (const auto& r : records)
      if (auto* p = std::get_if<Phase>(&r); p && (!only || p->pipeline == *only)) out.push_back(*p);
    return out;
  }

  std::vector<Note> notes(std::string_view type = {}) const {
    std::vector<Note> out;
    for (const auto& r : records)
      if (auto* n = std::get_if<Note>(&r); n && (type.empty() || n->type == type)) out.push_back(*n);
    return out;
  }

  // Sum of foreground phase durations, detection excluded.
  double total() const {
    double t = 0;
    for (const auto& p : phases(Pipeline::Foreground))
      if (p.category != Category::Detection) t += p.duration();
    return t;
  }

  std::map<Category, double> category_totals(Pipeline pipe = Pipeline::Foreground) const {
    std::map<Category, double> out;
    for (const auto& p : phases(pipe))
      if (p.category != Category::Detection) out[p.category] += p.duration();
    return out;
  }

  friend bool operator==(const RecoveryTrace&, const RecoveryTrace&) = default;
};

// Trace times have microsecond resolution.
inline double round_us(double t) { return std::round(t * 1e6) / 1e6; }

// Appends back-to-back phases on one pipeline clock.
class TraceBuilder {
 public:
  TraceBuilder(RecoveryTrace& trace, SimTime start, Pipeline pipe = Pipeline::Foreground)
      : trace_(trace), now_(round_us(start)), pipe_(pipe) {}

  SimTime now() const noexcept { return now_; }

  const Phase& phase(Category c, double duration, std::string detail) {
    if (duration < 0) throw ContractError("negative phase duration");
    Phase p{c, now_, round_us(now_ + duration), std::move(detail), pipe_};
    now_ = p.end;
    trace_.records.emplace_back(std::move(p));
    return std::get<Phase>(trace_.records.back());
  }

  void note(std::string type, nlohmann::ordered_json data) {
    trace_.records.emplace_back(Note{std::move(type), std::move(data)});
  }

 private:
  RecoveryTrace& trace_;
  SimTime now_;
  Pipeline pipe_;
};

struct CategoryDelta {
  Category category;
  double revive = 0;
  double baseline = 0;
  double delta() const { return revive - baseline; }
};

struct TraceComparison {
  double revive_total = 0;
  double baseline_total = 0;
  double reduction = 0;  // 1 - revive/baseline
  std::vector<CategoryDelta> categories;
  std::vector<std::string> warnings;
};

inline TraceComparison compare_traces(const RecoveryTrace& revive, const RecoveryTrace& baseline) {
  TraceComparison c;
  c.revive_total = revive.total();
  c.baseline_total = baseline.total();
  if (c.baseline_total <= 0) throw Error("undefined reduction: baseline total is 0");
  c.reduction = 1.0 - c.revive_total / c.baseline_total;
  if (revive.scenario != baseline.scenario)
    c.warnings.push_back("scenario mismatch: '" + revive.scenario + "' vs '" + baseline.scenario + "'");
  if (revive.mode != baseline.mode) c.warnings.push_back("deployment mode mismatch");
  auto rt = revive.category_totals();
  auto bt = baseline.category_totals();
  for (Category cat : kAllCategories) {
    if (cat == Category::Detection) continue;
    double r = rt.count(cat) ? rt[cat] : 0.0;
    double b = bt.count(cat) ? bt[cat] : 0.0;
    if (r == 0 && b == 0) continue;
    c.categories.push_back({cat, r, b});
  }
  return c;
}

// ---- JSON Lines ----

// Microsecond rounding keeps printed times free of accumulation noise.

// With a baseline total the summary also carries the reduction.
inline std::string to_jsonl(const RecoveryTrace& t, std::optional<double> baseline_total = std::nullopt) {
  using J = nlohmann::ordered_json;
  std::ostringstream os;
  os << J{{"record", "header"},
          {"scenario", t.scenario},
          {"kind", t.kind},
          {"mode", std::string(to_string(t.mode))},
          {"seed", t.seed}}
            .dump()
     << '\n';
  for (const auto& r : t.records) {
    if (const auto* p = std::get_if<Phase>(&r)) {
      os << J{{"record", "phase"},
              {"pipeline", std::string(to_string(p->pipeline))},
              {"category", std::string(to_string(p->category))},
              {"start", round_us(p->start)},
              {"end", round_us(p->end)},
              {"duration", round_us(p->duration())},
              {"detail", p->detail}}
                .dump()
         << '\n';
    } else {
      const auto& n = std::get<Note>(r);
      J j{{"record", "note"}, {"type", n.type}};
      for (const auto& [k, v] : n.data.items()) j[k] = v;
      os << j.dump() << '\n';
    }
  }
  J totals = J::object();
  for (const auto& [c, v] : t.category_totals()) totals[std::string(to_string(c))] = round_us(v);
  J summary{{"record", "summary"},
            {"outcome", std::string(to_string(t.outcome))},
            {"reason", t.reason},
            {"fault_time", round_us(t.fault_time)},
            {"detected_at", round_us(t.detected_at)},
            {"total", round_us(t.total())},
            {"category_totals", totals}};
  if (baseline_total && *baseline_total > 0) {
    summary["baseline_total"] = round_us(*baseline_total);
    summary["reduction"] = std::round((1.0 - t.total() / *baseline_total) * 1e6) / 1e6;
  }
  os << summary.dump() << '\n';
  return os.str();
}

inline RecoveryTrace parse_trace_jsonl(std::string_view text) {
  RecoveryTrace t;
  bool header = false, summary = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto rec = j.at("record").get<std::string>();
      if (rec == "header") {
        header = true;
        t.scenario = j.at("scenario").get<std::string>();
        t.kind = j.at("kind").get<std::string>();
        t.mode = j.at("mode").get<std::string>() == "MACollocated" ? DeploymentMode::MACollocated
                                                                 : DeploymentMode::MADisaggregated;
        t.seed = j.at("seed").get<std::uint64_t>();
      } else if (rec == "phase") {
        auto cat = category_from_string(j.at("category").get<std::string>());
        if (!cat) throw ParseError(line_no, "category", "unknown category");
        Phase p{*cat, j.at("start").get<double>(), j.at("end").get<double>(), j.at("detail").get<std::string>(),
                j.at("pipeline").get<std::string>() == "background" ? Pipeline::Background : Pipeline::Foreground};
        t.records.emplace_back(std::move(p));
      } else if (rec == "note") {
        nlohmann::ordered_json data = nlohmann::ordered_json::parse(line);
        data.erase("record");
        auto type = data.at("type").get<std::string>();
        data.erase("type");
        t.records.emplace_back(Note{type, data});
      } else if (rec == "summary") {
        summary = true;
        t.outcome = j.at("outcome").get<std::string>() == "Aborted" ? Outcome::Aborted : Outcome::Recovered;
        t.reason = j.at("reason").get<std::string>();
        t.fault_time = j.at("fault_time").get<double>();
        t.detected_at = j.at("detected_at").get<double>();
      } else {
        throw ParseError(line_no, "record", "unknown record kind '" + rec + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, "", e.what());
    }
  }
  if (!header || !summary) throw ParseError(0, "", "trace needs a header and a summary record");
  return t;
}

}  // namespace revive
