// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kvpool/core/config.h"
#include "kvpool/mempool/prefix_tree.h"

namespace kvpool {

// Scheduler-side record of which instance holds which prompt prefixes. One
// tree per (kind, instance); block values are insert times so entries older
// than the TTL are skipped by match. Advisory only: instances evict without
// telling the scheduler.
class GlobalPromptTrees {
 public:
  GlobalPromptTrees(std::uint32_t block_size, double ttl);

  // Records that `instance` now caches the full blocks of `tokens`.
  void update(InstanceId instance, InstanceKind kind, TokenSpan tokens, SimTime now);

  // Longest non-expired block-aligned prefix per instance of `kind`, in
  // tokens. Instances without an entry are absent.
  std::map<InstanceId, std::size_t> match(TokenSpan tokens, InstanceKind kind, SimTime now) const;
  std::size_t match(TokenSpan tokens, InstanceKind kind, InstanceId instance, SimTime now) const;

  // Drops every entry for `instance`.
  void purge(InstanceId instance);

  double ttl() const { return ttl_; }

 private:
  using Tree = PrefixTree<SimTime>;
  std::uint32_t block_size_;
  double ttl_;
  std::map<std::pair<InstanceKind, InstanceId>, Tree> trees_;
};

struct InstanceLoad {
  InstanceId id = 0;
  InstanceKind kind = InstanceKind::kColocated;
  bool live = true;
  // Tokens queued plus in flight.
  std::uint64_t load = 0;
};

struct ClusterSnapshot {
  std::vector<InstanceLoad> instances;
};

struct RouteCandidate {
  InstanceId id = 0;
  std::size_t matched = 0;
  std::uint64_t load = 0;
};

struct RoutingDecision {
  // Serving instance (colocated) or prefill instance.
  InstanceId chosen = kNoInstance;
  // Decode instance of a disaggregated pair.
  InstanceId decode = kNoInstance;
  std::size_t matched_len = 0;
  std::size_t decode_matched_len = 0;
  // Peers of the chosen instance's kind holding a longer prefix.
  std::vector<ExtraHolder> extra_holders;
  std::vector<RouteCandidate> alternatives;
};

class Scheduler {
 public:
  Scheduler(SchedulerParams params, std::uint32_t block_size);

  Policy policy() const { return params_.policy; }

  // Pure function of (request, snapshot, tree contents, now). Disaggregated
  // clusters get a prefill and a decode instance; colocated ones get one.
  // Throws NoLiveInstance.
  RoutingDecision route(const Request& request, const ClusterSnapshot& cluster, SimTime now) const;

  void update_trees(InstanceId instance, InstanceKind kind, TokenSpan tokens, SimTime now);
  void purge(InstanceId instance) { trees_.purge(instance); }
  const GlobalPromptTrees& trees() const { return trees_; }

 private:
  // Picks among live instances of `kind`; fills matched/alternatives when the
  // policy consults the trees.
  RouteCandidate pick(const Request& request, const ClusterSnapshot& cluster, InstanceKind kind, SimTime now,
                      bool by_prefix, std::vector<RouteCandidate>* considered) const;

  SchedulerParams params_;
  GlobalPromptTrees trees_;
};

}  // namespace kvpool
