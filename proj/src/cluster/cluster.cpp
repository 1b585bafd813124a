// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/cluster/cluster.h"

#include <fmt/format.h>

#include "kvpool/core/error.h"

namespace kvpool {

std::string_view to_string(InstanceStatus status) {
  switch (status) {
    case InstanceStatus::kLive:
      return "live";
    case InstanceStatus::kFailed:
      return "failed";
    case InstanceStatus::kRemoved:
      return "removed";
  }
  return "unknown";
}

ClusterState::ClusterState(double heartbeat_interval, double failure_timeout)
    : interval_(heartbeat_interval), timeout_(failure_timeout) {}

void ClusterState::register_instance(const InstanceSpec& spec, SimTime now) {
  if (members_.contains(spec.id)) throw Error(ErrorCode::kDuplicateId, fmt::format("instance {}", spec.id));
  members_.emplace(spec.id, Member{spec, InstanceStatus::kLive, now, false});
  ++version_;
}

Member& ClusterState::mutable_member(InstanceId id) {
  auto it = members_.find(id);
  if (it == members_.end()) throw Error(ErrorCode::kUnknownId, fmt::format("instance {}", id));
  return it->second;
}

const Member& ClusterState::member(InstanceId id) const {
  return const_cast<ClusterState*>(this)->mutable_member(id);
}

void ClusterState::remove_instance(InstanceId id) {
  mutable_member(id).status = InstanceStatus::kRemoved;
  ++version_;
}

void ClusterState::heartbeat(InstanceId id, SimTime now) {
  Member& m = mutable_member(id);
  if (!m.silent && m.status == InstanceStatus::kLive) m.last_heartbeat = now;
}

void ClusterState::crash(InstanceId id) { mutable_member(id).silent = true; }

void ClusterState::mark_failed(InstanceId id) {
  Member& m = mutable_member(id);
  m.status = InstanceStatus::kFailed;
  m.silent = true;
  ++version_;
}

std::vector<InstanceId> ClusterState::overdue(SimTime now) const {
  std::vector<InstanceId> out;
  for (const auto& [id, m] : members_) {
    if (m.status == InstanceStatus::kLive && now - m.last_heartbeat >= timeout_) out.push_back(id);
  }
  return out;
}

bool ClusterState::routable(InstanceId id) const {
  auto it = members_.find(id);
  return it != members_.end() && it->second.status == InstanceStatus::kLive;
}

bool ClusterState::running(InstanceId id) const {
  auto it = members_.find(id);
  return it != members_.end() && it->second.status != InstanceStatus::kFailed && !it->second.silent;
}

namespace {

std::uint32_t free_total(const MemPool& pool) {
  return pool.free_blocks(Medium::kHbm) + pool.free_blocks(Medium::kDram);
}

}  // namespace

CleanupReport handle_failure(ClusterState& cluster, InstanceId id, SimTime now,
                             const std::map<InstanceId, MemPool*>& live_pools, TransferEngine& transfers,
                             Scheduler& scheduler) {
  CleanupReport report;
  report.failed = id;
  report.time = now;
  cluster.mark_failed(id);

  for (const auto& [pid, pool] : live_pools) {
    if (pid == id) continue;
    report.pools.push_back({pid, free_total(*pool), 0, pool->blocks_allocated_by(id).size()});
  }
  // Transfers time out: the surviving receiver drops what it set aside.
  for (const auto tid : transfers.in_flight_involving(id)) {
    const auto spec_dst = transfers.destination(tid);
    MemPool* dst = nullptr;
    if (spec_dst != id) {
      auto it = live_pools.find(spec_dst);
      if (it != live_pools.end()) dst = it->second;
    }
    transfers.abort(tid, dst);
    report.aborted_transfers.push_back(tid);
  }
  for (auto& pc : report.pools) {
    MemPool& pool = *live_pools.at(pc.instance);
    pool.release_allocated_by(id);
    pc.free_after = free_total(pool);
  }
  scheduler.purge(id);
  return report;
}

bool allocation_conserved(const MemPool& pool, const ClusterState& cluster) {
  std::size_t owned = 0;
  for (const auto& [id, m] : cluster.members()) {
    if (m.status == InstanceStatus::kFailed) {
      if (!pool.blocks_allocated_by(id).empty()) return false;
    } else {
      owned += pool.blocks_allocated_by(id).size();
    }
  }
  const std::size_t capacity = pool.capacity(Medium::kHbm) + pool.capacity(Medium::kDram);
  return free_total(pool) + owned == capacity;
}

}  // namespace kvpool
