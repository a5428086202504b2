// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "revive/error.hpp"
#include "revive/types.hpp"

namespace revive {

// Exact non-negative rational, used for failure fractions r.
struct Fraction {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  // floor(r * n)
  std::uint64_t of(std::uint64_t n) const { return num * n / den; }

  friend bool operator==(const Fraction&, const Fraction&) = default;
};

// "1/32", "0.5" or "1".
inline Fraction parse_fraction(std::string_view s) {
  auto digits = [](std::string_view t) {
    return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; });
  };
  Fraction f;
  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    auto a = s.substr(0, slash), b = s.substr(slash + 1);
    if (!digits(a) || !digits(b)) throw ConfigError("bad fraction '" + std::string(s) + "'");
    f = {std::stoull(std::string(a)), std::stoull(std::string(b))};
  } else if (auto dot = s.find('.'); dot != std::string_view::npos) {
    auto a = s.substr(0, dot), b = s.substr(dot + 1);
    if ((!a.empty() && !digits(a)) || !digits(b) || b.size() > 12) throw ConfigError("bad fraction '" + std::string(s) + "'");
    std::uint64_t den = 1;
    for (std::size_t i = 0; i < b.size(); ++i) den *= 10;
    f = {(a.empty() ? 0 : std::stoull(std::string(a))) * den + std::stoull(std::string(b)), den};
  } else {
    if (!digits(s)) throw ConfigError("bad fraction '" + std::string(s) + "'");
    f = {std::stoull(std::string(s)), 1};
  }
  if (f.den == 0) throw ConfigError("fraction with zero denominator");
  std::uint64_t g = std::gcd(f.num, f.den);
  if (g > 1) f = {f.num / g, f.den / g};
  return f;
}

inline std::string to_string(const Fraction& f) {
  return std::to_string(f.num) + "/" + std::to_string(f.den);
}

// Highest-scoring k experts outside the mask, best first; ties go to the
// lower expert id. Masked entries behave as -inf.
inline std::vector<ExpertId> top_k_route(std::span<const double> row, std::size_t k, const ExpertMask& mask = {}) {
  std::vector<ExpertId> cand;
  cand.reserve(row.size());
  for (ExpertId e = 0; e < row.size(); ++e)
    if (!mask.count(e)) cand.push_back(e);
  if (k > cand.size())
    throw RoutingError("top-" + std::to_string(k) + " requested but only " + std::to_string(cand.size()) +
                       " experts are unmasked");
  auto better = [&](ExpertId a, ExpertId b) { return row[a] > row[b] || (row[a] == row[b] && a < b); };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(), better);
  cand.resize(k);
  return cand;
}

using ActivationCounts = std::vector<std::uint64_t>;

// Row-major tokens x experts.
struct GatingLogits {
  std::size_t tokens = 0;
  std::size_t experts = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t t) const { return {values.data() + t * experts, experts}; }
};

inline ActivationCounts count_activations(const GatingLogits& logits, std::size_t k, const ExpertMask& mask = {}) {
  ActivationCounts counts(logits.experts, 0);
  for (std::size_t t = 0; t < logits.tokens; ++t)
    for (ExpertId e : top_k_route(logits.row(t), k, mask)) ++counts[e];
  return counts;
}

// Fail the floor(r*n) most activated experts (ties to the lower id).
inline ExpertMask select_failed_task_based(const ActivationCounts& counts, Fraction r) {
  if (r.num > r.den) throw ConfigError("failure fraction must be <= 1");
  std::vector<ExpertId> ids(counts.size());
  std::iota(ids.begin(), ids.end(), ExpertId{0});
  std::stable_sort(ids.begin(), ids.end(), [&](ExpertId a, ExpertId b) { return counts[a] > counts[b]; });
  auto n = r.of(counts.size());
  return ExpertMask(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n));
}

// Fail every (1/r)-th expert starting at 0, floor(r*n) of them.
inline ExpertMask select_failed_every_nth(std::size_t num_experts, Fraction r) {
  if (r.num == 0 || r.num > r.den) throw ConfigError("failure fraction must be in (0, 1]");
  if (r.den % r.num != 0) throw ConfigError("1/r must be an integer, got r = " + to_string(r));
  const std::uint64_t step = r.den / r.num;
  ExpertMask out;
  for (std::uint64_t i = 0; i < r.of(num_experts); ++i) out.insert(static_cast<ExpertId>(i * step));
  return out;
}

struct SyntheticLogitsConfig {
  std::size_t tokens = 4096;
  std::size_t experts = 256;
  // 0 gives independent uniform scores; > 0 adds a fixed per-expert bias so
  // some experts are systematically more popular.
  double popularity_skew = 0.0;
  std::uint64_t seed = 0;
};

inline double unit_double(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline GatingLogits synthetic_logits(const SyntheticLogitsConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> bias(cfg.experts, 0.0);
  if (cfg.popularity_skew > 0)
    for (auto& b : bias) b = cfg.popularity_skew * unit_double(rng);
  GatingLogits g{cfg.tokens, cfg.experts, std::vector<double>(cfg.tokens * cfg.experts)};
  for (std::size_t t = 0; t < cfg.tokens; ++t)
    for (std::size_t e = 0; e < cfg.experts; ++e) g.values[t * cfg.experts + e] = unit_double(rng) + bias[e];
  return g;
}

enum class FailedSelection { TaskBased, EveryNth };

struct RouteSimConfig {
  SyntheticLogitsConfig logits;
  std::size_t top_k = 8;
  Fraction r{1, 32};
  FailedSelection selection = FailedSelection::EveryNth;
};

struct RouteSimReport {
  ActivationCounts base_counts;
  ActivationCounts masked_counts;
  ExpertMask mask;
  bool mask_exclusion = false;     // no masked expert ever routed
  bool count_conservation = false; // sum == tokens * k, zero on masked
  bool selection_size = false;     // |mask| == floor(r*n)
};

inline RouteSimReport run_route_sim(const RouteSimConfig& cfg) {
  auto logits = synthetic_logits(cfg.logits);
  RouteSimReport rep;
  rep.base_counts = count_activations(logits, cfg.top_k);
  rep.mask = cfg.selection == FailedSelection::TaskBased ? select_failed_task_based(rep.base_counts, cfg.r)
                                                         : select_failed_every_nth(cfg.logits.experts, cfg.r);
  rep.masked_counts = count_activations(logits, cfg.top_k, rep.mask);
  std::uint64_t total = std::accumulate(rep.masked_counts.begin(), rep.masked_counts.end(), std::uint64_t{0});
  rep.mask_exclusion = std::all_of(rep.mask.begin(), rep.mask.end(), [&](ExpertId e) { return rep.masked_counts[e] == 0; });
  rep.count_conservation = rep.mask_exclusion && total == cfg.logits.tokens * cfg.top_k;
  rep.selection_size = rep.mask.size() == cfg.r.of(cfg.logits.experts);
  return rep;
}

}  // namespace revive
