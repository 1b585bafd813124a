// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/scheduler/scheduler.h"

#include <fmt/format.h>

#include <algorithm>
#include <tuple>

#include "kvpool/core/error.h"

namespace kvpool {

GlobalPromptTrees::GlobalPromptTrees(std::uint32_t block_size, double ttl) : block_size_(block_size), ttl_(ttl) {}

void GlobalPromptTrees::update(InstanceId instance, InstanceKind kind, TokenSpan tokens, SimTime now) {
  const std::size_t n = tokens.size() / block_size_;
  if (n == 0) return;
  auto [it, inserted] = trees_.try_emplace({kind, instance}, block_size_);
  const std::vector<SimTime> times(n, now);
  it->second.insert(tokens.first(n * block_size_), times, now, Tree::Conflict::kOverwrite);
}

std::size_t GlobalPromptTrees::match(TokenSpan tokens, InstanceKind kind, InstanceId instance, SimTime now) const {
  auto it = trees_.find({kind, instance});
  if (it == trees_.end()) return 0;
  const SimTime horizon = now - ttl_;
  const auto path = it->second.walk(tokens, [horizon](const Tree::Node& node, std::size_t k) {
    return node.values[k] < horizon;
  });
  return path.blocks * block_size_;
}

std::map<InstanceId, std::size_t> GlobalPromptTrees::match(TokenSpan tokens, InstanceKind kind, SimTime now) const {
  std::map<InstanceId, std::size_t> out;
  for (const auto& [key, tree] : trees_) {
    if (key.first == kind) out[key.second] = match(tokens, kind, key.second, now);
  }
  return out;
}

void GlobalPromptTrees::purge(InstanceId instance) {
  std::erase_if(trees_, [instance](const auto& entry) { return entry.first.second == instance; });
}

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Scheduler::Scheduler(SchedulerParams params, std::uint32_t block_size)
    : params_(params), trees_(block_size, params.ttl) {}

void Scheduler::update_trees(InstanceId instance, InstanceKind kind, TokenSpan tokens, SimTime now) {
  trees_.update(instance, kind, tokens, now);
}

RouteCandidate Scheduler::pick(const Request& request, const ClusterSnapshot& cluster, InstanceKind kind,
                               SimTime now, bool by_prefix, std::vector<RouteCandidate>* considered) const {
  std::vector<RouteCandidate> live;
  for (const auto& inst : cluster.instances) {
    if (inst.live && inst.kind == kind) live.push_back({inst.id, 0, inst.load});
  }
  if (live.empty()) {
    throw Error(ErrorCode::kNoLiveInstance, fmt::format("no live {} instance", to_string(kind)));
  }
  std::sort(live.begin(), live.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (by_prefix) {
    for (auto& c : live) c.matched = trees_.match(request.prompt, kind, c.id, now);
  }
  if (considered != nullptr) *considered = live;

  if (params_.policy == Policy::kSessionId && !by_prefix) {
    return live[mix64(request.session_id) % live.size()];
  }
  // Longest prefix, then least load, then lowest id. Without prefix
  // information every match is zero and this is least load.
  return *std::min_element(live.begin(), live.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(b.matched, a.load, a.id) < std::make_tuple(a.matched, b.load, b.id);
  });
}

RoutingDecision Scheduler::route(const Request& request, const ClusterSnapshot& cluster, SimTime now) const {
  const bool colocated = std::any_of(cluster.instances.begin(), cluster.instances.end(),
                                     [](const auto& i) { return i.kind == InstanceKind::kColocated; });
  const bool by_prefix = params_.policy == Policy::kPromptTree;
  const InstanceKind first_kind = colocated ? InstanceKind::kColocated : InstanceKind::kPrefillOnly;

  RoutingDecision d;
  const RouteCandidate chosen = pick(request, cluster, first_kind, now, by_prefix, &d.alternatives);
  d.chosen = chosen.id;
  d.matched_len = chosen.matched;
  if (by_prefix) {
    // The single best longer holder covers every shorter one's range.
    const RouteCandidate* best = nullptr;
    for (const auto& c : d.alternatives) {
      if (c.id == chosen.id || c.matched <= chosen.matched) continue;
      if (best == nullptr || std::make_tuple(c.matched, best->load, best->id) > std::make_tuple(best->matched, c.load, c.id)) {
        best = &c;
      }
    }
    if (best != nullptr) d.extra_holders.push_back({best->id, chosen.matched, best->matched});
  }
  if (!colocated) {
    const RouteCandidate dec = pick(request, cluster, InstanceKind::kDecodeOnly, now, by_prefix, nullptr);
    d.decode = dec.id;
    d.decode_matched_len = dec.matched;
  }
  return d;
}

}  // namespace kvpool
