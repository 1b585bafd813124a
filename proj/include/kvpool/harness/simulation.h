// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "kvpool/cluster/cluster.h"
#include "kvpool/core/config.h"
#include "kvpool/engine/instance.h"
#include "kvpool/harness/event_queue.h"
#include "kvpool/harness/metrics.h"
#include "kvpool/harness/workload.h"
#include "kvpool/scheduler/scheduler.h"
#include "kvpool/transfer/transfer_engine.h"

namespace kvpool {

struct RoutingRecord {
  RequestId request_id = 0;
  std::string chosen;  // "name" or "prefill/decode"
  std::size_t matched_len = 0;
  std::vector<RouteCandidate> alternatives;
};

// Discrete-event simulation of one cluster serving one workload. The event
// trace is a pure function of the config (seed included).
class Simulation {
 public:
  explicit Simulation(SimConfig config);
  Simulation(SimConfig config, Workload workload);
  ~Simulation();

  // Runs to completion. Throws DeadlockDetected if events run out while
  // requests are still pending.
  MetricsReport run();
  // Processes one event; false once nothing is left.
  bool step();
  // Processes every event scheduled before `t`.
  void run_until(SimTime t);

  SimTime now() const { return now_; }
  const SimConfig& config() const { return config_; }
  MetricsReport report() const;

  Instance& instance(InstanceId id) { return *instances_.at(id); }
  std::size_t instance_count() const { return instances_.size(); }
  InstanceId instance_id(const std::string& name) const;
  const ClusterState& cluster() const { return cluster_; }
  const TransferEngine& transfers() const { return transfers_; }
  const Scheduler& scheduler() const { return scheduler_; }
  const std::vector<RequestState>& requests() const { return requests_; }
  const std::vector<RoutingRecord>& routing_log() const { return routing_; }
  const std::vector<CleanupReport>& cleanups() const { return cleanups_; }
  // Per cleanup: whether every live pool conserved its allocations after the
  // affected requests were failed.
  const std::vector<bool>& conservation_checks() const { return conserved_; }
  // Arrivals routed after each failure broadcast, by chosen instance.
  std::size_t routes_to_failed() const { return routes_to_failed_; }

  // Crashes `id` now; detection follows through missed heartbeats.
  void inject_failure(InstanceId id);

  void write_requests_csv(std::ostream& out) const;
  void write_transfers_csv(std::ostream& out) const;
  void write_routing_csv(std::ostream& out) const;
  void write_summary_csv(std::ostream& out) const;

 private:
  enum class Flow : std::uint8_t { kPrefillToDecode, kDecodeToPrefill };
  struct Flight {
    Flow flow = Flow::kPrefillToDecode;
    std::size_t request = 0;
    InstanceId src = 0;
    InstanceId dst = 0;
    std::vector<BlockAddr> src_pins;  // decode-side blocks held for a return trip
    std::vector<TokenList::value_type> tokens;
  };

  void handle(const SimEvent& e);
  void on_arrival(std::size_t req);
  void on_prefill_done(InstanceId inst, std::uint64_t batch);
  void on_transfer_done(std::uint64_t tid);
  void on_decode_step(InstanceId inst);
  void on_response(std::size_t req);
  void on_heartbeat();
  void on_retry(InstanceId inst, std::uint64_t req_plus_one);

  void kick(InstanceId inst);
  void start_prefill(Instance& inst);
  bool begin_prefill_transfer(std::size_t req, const std::vector<SimTime>* layer_finish);
  void finish_request(std::size_t req);
  void fail_request(std::size_t req, const std::string& why);
  void fail_instance(InstanceId id);
  void charge(std::size_t req, InstanceId inst, std::uint64_t tokens);
  void discharge(std::size_t req, InstanceId inst);
  ClusterSnapshot snapshot() const;
  bool running(InstanceId id) const { return cluster_.running(id); }
  std::size_t index_of(const RequestState* r) const { return static_cast<std::size_t>(r - requests_.data()); }
  RequestRecord record_of(const RequestState& r) const;
  bool disaggregated() const { return disaggregated_; }

  SimConfig config_;
  Workload workload_;
  std::vector<std::unique_ptr<Instance>> instances_;
  std::vector<std::string> names_;
  TransferEngine transfers_;
  Scheduler scheduler_;
  ClusterState cluster_;
  EventQueue events_;
  SimTime now_ = 0.0;
  bool disaggregated_ = false;

  std::vector<RequestState> requests_;
  std::vector<std::size_t> session_of_;    // request index -> session index
  std::vector<std::size_t> first_request_; // session index -> first request index
  std::size_t pending_ = 0;

  std::map<std::uint64_t, PrefillBatch> batches_;
  std::uint64_t next_batch_ = 0;
  std::map<InstanceId, DecodeStep> steps_;
  std::map<std::uint64_t, Flight> flights_;
  std::map<std::size_t, std::vector<SimTime>> layer_gates_;
  std::vector<bool> retry_pending_;
  std::vector<std::map<InstanceId, std::uint64_t>> charges_;
  std::vector<std::uint64_t> load_;
  bool heartbeat_scheduled_ = false;

  std::vector<RoutingRecord> routing_;
  std::vector<CleanupReport> cleanups_;
  std::vector<bool> conserved_;
  std::size_t routes_to_failed_ = 0;
};

// Convenience: build, run, report.
MetricsReport run_simulation(const SimConfig& config);

}  // namespace kvpool
