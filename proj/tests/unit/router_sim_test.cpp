// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "revive/router_sim.hpp"

using namespace revive;

namespace {

std::set<ExpertId> as_set(const std::vector<ExpertId>& v) { return {v.begin(), v.end()}; }

// Full sort of (score desc, id asc) over unmasked experts.
std::vector<ExpertId> brute_top_k(const std::vector<double>& row, std::size_t k, const ExpertMask& mask) {
  std::vector<std::pair<double, ExpertId>> v;
  for (ExpertId e = 0; e < row.size(); ++e)
    if (!mask.count(e)) v.emplace_back(-row[e], e);
  std::sort(v.begin(), v.end());
  std::vector<ExpertId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(v[i].second);
  return out;
}

}  // namespace

TEST(TopK, Unmasked) {
  std::vector<double> row{0.9, 0.5, 0.3, 0.1};
  EXPECT_EQ(as_set(top_k_route(row, 2)), (std::set<ExpertId>{0, 1}));
}

TEST(TopK, MaskForcesNextBest) {
  std::vector<double> row{0.9, 0.5, 0.3, 0.1};
  EXPECT_EQ(as_set(top_k_route(row, 2, {0})), (std::set<ExpertId>{1, 2}));
}

TEST(TopK, TiesToLowerId) {
  std::vector<double> row{0.5, 0.7, 0.5, 0.5};
  EXPECT_EQ(top_k_route(row, 3), (std::vector<ExpertId>{1, 0, 2}));
}

TEST(TopK, TooFewUnmaskedIsRoutingError) {
  std::vector<double> row{0.1, 0.2, 0.3};
  EXPECT_THROW(top_k_route(row, 2, {0, 1}), RoutingError);
}

TEST(TopK, RandomRowsMatchBruteForce) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 3000; ++trial) {
    std::vector<double> row(64);
    for (auto& x : row) x = trial % 5 == 0 ? std::round(u(rng) * 4) / 4 : u(rng);
    ExpertMask mask;
    std::size_t m = rng() % 40;
    for (std::size_t i = 0; i < m; ++i) mask.insert(static_cast<ExpertId>(rng() % 64));
    auto got = top_k_route(row, 8, mask);
    ASSERT_EQ(got, brute_top_k(row, 8, mask));
    for (ExpertId e : got) ASSERT_FALSE(mask.count(e));
  }
}

TEST(TaskBased, SortOracle) {
  EXPECT_EQ(select_failed_task_based({9, 1, 5, 3}, {1, 2}), (ExpertMask{0, 2}));
}

TEST(TaskBased, ZeroSizeGivesEmpty) {
  EXPECT_TRUE(select_failed_task_based({9, 1, 5, 3}, {1, 8}).empty());
}

TEST(TaskBased, UniformCountsTieToLowerIds) {
  EXPECT_EQ(select_failed_task_based(ActivationCounts(8, 4), {1, 4}), (ExpertMask{0, 1}));
}

TEST(EveryNth, EvenIndexed) {
  EXPECT_EQ(select_failed_every_nth(8, {1, 2}), (ExpertMask{0, 2, 4, 6}));
  ExpertMask even;
  for (ExpertId e = 0; e < 256; e += 2) even.insert(e);
  EXPECT_EQ(select_failed_every_nth(256, {1, 2}), even);
}

TEST(EveryNth, OneThirtySecondOf256) {
  ExpertMask expect;
  for (ExpertId e = 0; e <= 224; e += 32) expect.insert(e);
  EXPECT_EQ(select_failed_every_nth(256, {1, 32}), expect);
}

TEST(EveryNth, OneOverN) { EXPECT_EQ(select_failed_every_nth(64, {1, 64}), (ExpertMask{0})); }

TEST(EveryNth, NonIntegralStepRejected) {
  EXPECT_THROW(select_failed_every_nth(64, {2, 3}), ConfigError);
  EXPECT_THROW(select_failed_every_nth(64, {0, 1}), ConfigError);
}

TEST(SelectionSize, FloorLaw) {
  for (std::size_t n : {7u, 8u, 63u, 64u, 100u, 256u}) {
    for (std::uint64_t d : {1u, 2u, 4u, 8u, 16u, 32u, 64u}) {
      Fraction r{1, d};
      EXPECT_EQ(select_failed_every_nth(n, r).size(), n / d);
      EXPECT_EQ(select_failed_task_based(ActivationCounts(n, 1), r).size(), n / d);
    }
  }
}

TEST(Fraction, Parse) {
  EXPECT_EQ(parse_fraction("1/32"), (Fraction{1, 32}));
  EXPECT_EQ(parse_fraction("2/4"), (Fraction{1, 2}));
  EXPECT_EQ(parse_fraction("0.5"), (Fraction{1, 2}));
  EXPECT_EQ(parse_fraction("0.03125"), (Fraction{1, 32}));
  EXPECT_EQ(parse_fraction("1"), (Fraction{1, 1}));
  EXPECT_THROW(parse_fraction("x"), ConfigError);
  EXPECT_THROW(parse_fraction("1/0"), ConfigError);
}

TEST(RouteSim, InvariantsHold) {
  for (auto sel : {FailedSelection::EveryNth, FailedSelection::TaskBased}) {
    RouteSimConfig cfg;
    cfg.logits = {512, 64, 0.5, 42};
    cfg.top_k = 6;
    cfg.r = {1, 8};
    cfg.selection = sel;
    auto rep = run_route_sim(cfg);
    EXPECT_TRUE(rep.mask_exclusion);
    EXPECT_TRUE(rep.count_conservation);
    EXPECT_TRUE(rep.selection_size);
    std::uint64_t base = std::accumulate(rep.base_counts.begin(), rep.base_counts.end(), std::uint64_t{0});
    EXPECT_EQ(base, 512u * 6u);
  }
}

TEST(RouteSim, DeterministicForSeed) {
  RouteSimConfig cfg;
  cfg.logits = {128, 32, 0.2, 9};
  cfg.selection = FailedSelection::TaskBased;
  auto a = run_route_sim(cfg), b = run_route_sim(cfg);
  EXPECT_EQ(a.masked_counts, b.masked_counts);
  EXPECT_EQ(a.mask, b.mask);
}
