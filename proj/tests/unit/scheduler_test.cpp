// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "kvpool/core/error.h"
#include "kvpool/scheduler/scheduler.h"

namespace kvpool {
namespace {

constexpr std::uint32_t kB = 16;

TokenList iota_tokens(std::size_t n, Token base = 1000) {
  TokenList t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = base + static_cast<Token>(i);
  return t;
}

Request request_for(TokenList prompt, SessionId session = 1) {
  Request r;
  r.session_id = session;
  r.prompt = std::move(prompt);
  return r;
}

ClusterSnapshot colocated(std::vector<std::uint64_t> loads) {
  ClusterSnapshot s;
  for (std::size_t i = 0; i < loads.size(); ++i) {
    s.instances.push_back({static_cast<InstanceId>(i), InstanceKind::kColocated, true, loads[i]});
  }
  return s;
}

TEST(GlobalPromptTrees, EmptyAndFull) {
  GlobalPromptTrees trees(kB, 300);
  const TokenList p = iota_tokens(100);
  EXPECT_TRUE(trees.match(p, InstanceKind::kColocated, 0.0).empty());
  trees.update(3, InstanceKind::kColocated, p, 1.0);
  const auto m = trees.match(p, InstanceKind::kColocated, 2.0);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m.at(3), 96u);
  EXPECT_TRUE(trees.match(p, InstanceKind::kPrefillOnly, 2.0).empty());
}

// Brute force: longest common block-aligned prefix with any stored sequence.
std::size_t lcp_oracle(const std::vector<TokenList>& stored, const TokenList& q) {
  std::size_t best = 0;
  for (const auto& s : stored) {
    std::size_t k = 0;
    while (k < s.size() && k < q.size() && s[k] == q[k]) ++k;
    best = std::max(best, k / kB * kB);
  }
  return best;
}

TEST(GlobalPromptTrees, PerInstanceMatchEqualsBruteForce) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    GlobalPromptTrees trees(kB, 1e9);
    std::map<InstanceId, std::vector<TokenList>> stored;
    const TokenList base = iota_tokens(256);
    for (int i = 0; i < 12; ++i) {
      TokenList t(base.begin(), base.begin() + static_cast<std::ptrdiff_t>(rng() % 256));
      for (std::size_t j = 0, extra = rng() % 64; j < extra; ++j) t.push_back(static_cast<Token>(rng() % 4));
      const InstanceId inst = static_cast<InstanceId>(rng() % 3);
      trees.update(inst, InstanceKind::kPrefillOnly, t, 1.0);
      stored[inst].push_back(t);
    }
    for (int q = 0; q < 20; ++q) {
      TokenList query(base.begin(), base.begin() + static_cast<std::ptrdiff_t>(rng() % 256));
      for (std::size_t j = 0, extra = rng() % 64; j < extra; ++j) query.push_back(static_cast<Token>(rng() % 4));
      const auto got = trees.match(query, InstanceKind::kPrefillOnly, 2.0);
      for (const auto& [inst, seqs] : stored) EXPECT_EQ(got.at(inst), lcp_oracle(seqs, query));
    }
  }
}

TEST(GlobalPromptTrees, ExpiredEntriesAreIgnored) {
  GlobalPromptTrees trees(kB, 300);
  const TokenList p = iota_tokens(64);
  trees.update(0, InstanceKind::kColocated, p, 0.0);
  EXPECT_EQ(trees.match(p, InstanceKind::kColocated, 0, 299.0), 64u);
  EXPECT_EQ(trees.match(p, InstanceKind::kColocated, 0, 301.0), 0u);
  // A refresh of the first half keeps only that half alive.
  trees.update(0, InstanceKind::kColocated, TokenSpan(p).first(32), 200.0);
  EXPECT_EQ(trees.match(p, InstanceKind::kColocated, 0, 400.0), 32u);
  trees.purge(0);
  EXPECT_EQ(trees.match(p, InstanceKind::kColocated, 0, 400.0), 0u);
}

TEST(Scheduler, PromptTreePicksLongestPrefix) {
  Scheduler s({Policy::kPromptTree, 300}, kB);
  const TokenList p = iota_tokens(64);
  s.update_trees(0, InstanceKind::kColocated, TokenSpan(p).first(32), 0.0);
  const auto d = s.route(request_for(p), colocated({100, 0}), 1.0);
  EXPECT_EQ(d.chosen, 0u);
  EXPECT_EQ(d.matched_len, 32u);
  EXPECT_TRUE(d.extra_holders.empty());
}

// Enumerated oracle for the tie-break chain.
InstanceId tie_oracle(const std::vector<std::size_t>& matched, const std::vector<std::uint64_t>& load) {
  InstanceId best = 0;
  for (InstanceId i = 1; i < matched.size(); ++i) {
    if (matched[i] > matched[best] || (matched[i] == matched[best] && load[i] < load[best])) best = i;
  }
  return best;
}

TEST(Scheduler, TieBreakMatchesOracle) {
  std::mt19937_64 rng(5);
  const TokenList p = iota_tokens(64);
  for (int trial = 0; trial < 200; ++trial) {
    Scheduler s({Policy::kPromptTree, 300}, kB);
    const std::size_t n = 2 + rng() % 4;
    std::vector<std::size_t> matched(n);
    std::vector<std::uint64_t> load(n);
    for (std::size_t i = 0; i < n; ++i) {
      matched[i] = (rng() % 3) * kB;
      load[i] = rng() % 3;
      if (matched[i] > 0) s.update_trees(i, InstanceKind::kColocated, TokenSpan(p).first(matched[i]), 0.0);
    }
    const auto d = s.route(request_for(p), colocated(load), 1.0);
    EXPECT_EQ(d.chosen, tie_oracle(matched, load));
  }
  Scheduler s({Policy::kPromptTree, 300}, kB);
  s.update_trees(0, InstanceKind::kColocated, TokenSpan(p).first(32), 0.0);
  s.update_trees(1, InstanceKind::kColocated, TokenSpan(p).first(32), 0.0);
  EXPECT_EQ(s.route(request_for(p), colocated({10, 5}), 1.0).chosen, 1u);
}

TEST(Scheduler, ExtraHolderExtendsChosenMatch) {
  Scheduler s({Policy::kPromptTree, 300}, kB);
  const TokenList p = iota_tokens(128);
  s.update_trees(0, InstanceKind::kPrefillOnly, TokenSpan(p).first(32), 0.0);
  s.update_trees(1, InstanceKind::kPrefillOnly, TokenSpan(p).first(96), 0.0);
  ClusterSnapshot c;
  c.instances = {{0, InstanceKind::kPrefillOnly, true, 0},
                 {1, InstanceKind::kPrefillOnly, false, 0},
                 {2, InstanceKind::kDecodeOnly, true, 0}};
  auto d = s.route(request_for(p), c, 1.0);
  EXPECT_EQ(d.chosen, 0u);
  EXPECT_EQ(d.decode, 2u);
  EXPECT_TRUE(d.extra_holders.empty());  // holder 1 is down

  c.instances[1].live = true;
  c.instances.push_back({3, InstanceKind::kPrefillOnly, true, 0});
  s.update_trees(3, InstanceKind::kPrefillOnly, TokenSpan(p).first(16), 0.0);
  d = s.route(request_for(p), c, 1.0);
  EXPECT_EQ(d.chosen, 1u);
  EXPECT_TRUE(d.extra_holders.empty());
}

TEST(Scheduler, SessionIdIsStableAndLeastLoadFollowsLoad) {
  Scheduler sid({Policy::kSessionId, 300}, kB);
  Scheduler ll({Policy::kLeastLoad, 300}, kB);
  const auto a = sid.route(request_for(iota_tokens(10), 77), colocated({0, 0, 0}), 0.0);
  const auto b = sid.route(request_for(iota_tokens(20), 77), colocated({9, 9, 0}), 5.0);
  EXPECT_EQ(a.chosen, b.chosen);
  EXPECT_EQ(ll.route(request_for(iota_tokens(10), 77), colocated({5, 1, 3}), 0.0).chosen, 1u);
  EXPECT_EQ(ll.route(request_for(iota_tokens(10), 77), colocated({0, 1, 3}), 0.0).chosen, 0u);
}

TEST(Scheduler, LearnThenHitAndFallBackAfterTtl) {
  Scheduler s({Policy::kPromptTree, 300}, kB);
  const TokenList p = iota_tokens(64);
  s.update_trees(2, InstanceKind::kColocated, p, 10.0);
  EXPECT_EQ(s.route(request_for(p), colocated({0, 0, 50}), 20.0).chosen, 2u);
  EXPECT_EQ(s.route(request_for(p), colocated({0, 0, 50}), 400.0).chosen, 0u);
}

TEST(Scheduler, NoLiveInstanceThrows) {
  Scheduler s({Policy::kLeastLoad, 300}, kB);
  ClusterSnapshot c = colocated({0});
  c.instances[0].live = false;
  try {
    s.route(request_for(iota_tokens(4)), c, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoLiveInstance);
  }
}

TEST(Scheduler, RoutingIsDeterministic) {
  Scheduler s({Policy::kPromptTree, 300}, kB);
  const TokenList p = iota_tokens(64);
  s.update_trees(1, InstanceKind::kColocated, p, 0.0);
  const auto c = colocated({3, 3, 3});
  const auto a = s.route(request_for(p), c, 1.0);
  const auto b = s.route(request_for(p), c, 1.0);
  EXPECT_EQ(a.chosen, b.chosen);
  EXPECT_EQ(a.matched_len, b.matched_len);
  EXPECT_EQ(a.alternatives.size(), b.alternatives.size());
}

}  // namespace
}  // namespace kvpool
