// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "kvpool/core/types.h"
#include "kvpool/mempool/mem_pool.h"
#include "kvpool/scheduler/scheduler.h"
#include "kvpool/transfer/transfer_engine.h"

namespace kvpool {

enum class InstanceStatus : std::uint8_t { kLive, kFailed, kRemoved };

std::string_view to_string(InstanceStatus status);

struct Member {
  InstanceSpec spec;
  InstanceStatus status = InstanceStatus::kLive;
  SimTime last_heartbeat = 0.0;
  // Crashed but not yet detected: silent, still listed as live.
  bool silent = false;
};

// Membership as seen by the global scheduler. Instances report heartbeats;
// one that stays silent for `failure_timeout` is declared failed.
class ClusterState {
 public:
  ClusterState(double heartbeat_interval, double failure_timeout);

  // Throws DuplicateId.
  void register_instance(const InstanceSpec& spec, SimTime now);
  // Graceful removal: in-flight work drains, no new routes. Throws UnknownId.
  void remove_instance(InstanceId id);

  void heartbeat(InstanceId id, SimTime now);
  // Stops the instance's heartbeats and work without telling anyone.
  void crash(InstanceId id);
  void mark_failed(InstanceId id);

  // Live instances whose last heartbeat is at least `failure_timeout` old.
  std::vector<InstanceId> overdue(SimTime now) const;

  bool routable(InstanceId id) const;
  // Alive from the data plane's point of view: not crashed, failed or gone.
  bool running(InstanceId id) const;
  const Member& member(InstanceId id) const;
  const std::map<InstanceId, Member>& members() const { return members_; }
  // Bumped on every roster change, i.e. every broadcast.
  std::uint64_t roster_version() const { return version_; }

  double heartbeat_interval() const { return interval_; }
  double failure_timeout() const { return timeout_; }

 private:
  Member& mutable_member(InstanceId id);

  double interval_;
  double timeout_;
  std::map<InstanceId, Member> members_;
  std::uint64_t version_ = 0;
};

struct PoolCleanup {
  InstanceId instance = 0;
  std::uint32_t free_before = 0;  // HBM + DRAM
  std::uint32_t free_after = 0;
  // Blocks on this pool allocated on behalf of the failed instance.
  std::size_t cross_allocations = 0;
};

struct CleanupReport {
  InstanceId failed = kNoInstance;
  SimTime time = 0.0;
  std::vector<std::uint64_t> aborted_transfers;
  std::vector<PoolCleanup> pools;
};

// Declares `id` failed and releases everything it held on survivors:
// in-flight transfers to or from it are dropped, every live pool frees
// blocks allocated on its behalf, and its global tree entries are purged.
// Requests are the caller's business.
CleanupReport handle_failure(ClusterState& cluster, InstanceId id, SimTime now,
                             const std::map<InstanceId, MemPool*>& live_pools, TransferEngine& transfers,
                             Scheduler& scheduler);

// Every block on `pool` is free or allocated on behalf of a live owner.
bool allocation_conserved(const MemPool& pool, const ClusterState& cluster);

}  // namespace kvpool
