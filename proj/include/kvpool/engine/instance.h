// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "kvpool/core/config.h"
#include "kvpool/engine/cost_model.h"
#include "kvpool/engine/design.h"
#include "kvpool/engine/request_state.h"
#include "kvpool/mempool/mem_pool.h"
#include "kvpool/transfer/transfer_engine.h"

namespace kvpool {

// How a prefill reaches other instances' historical KV.
struct PeerView {
  // Pool of a live peer, nullptr otherwise.
  std::function<MemPool*(InstanceId)> pool;
  std::function<const InstanceSpec*(InstanceId)> spec;
  TransferEngine* transfers = nullptr;
};

struct PrefillBatch {
  std::vector<RequestState*> admitted;
  // Requests that could not get memory; already back at the queue front.
  std::vector<RequestState*> deferred;
  SimTime start = 0.0;
  SimTime compute_start = 0.0;  // after swaps and fetches
  SimTime finish = 0.0;
  std::vector<SimTime> layer_finish;
  std::uint64_t computed_tokens = 0;
  std::uint64_t reused_tokens = 0;
};

struct DecodeStep {
  std::vector<RequestState*> stepped;
  // Requests dropped for lack of memory; their KV is already released.
  std::vector<RequestState*> aborted;
  SimTime start = 0.0;
  SimTime finish = 0.0;
};

// One simulated inference instance: its memory pool, prefill queue and
// running decode set. All mutation happens from the owning event loop.
class Instance {
 public:
  Instance(const InstanceSpec& spec, const SimConfig& config, DesignCaps caps);

  InstanceId id() const { return spec_.id; }
  const InstanceSpec& spec() const { return spec_; }
  InstanceKind kind() const { return spec_.kind; }
  const DesignCaps& caps() const { return caps_; }
  MemPool& pool() { return pool_; }
  const MemPool& pool() const { return pool_; }
  const CostModel& cost_model() const { return cost_; }

  bool does_prefill() const { return spec_.kind != InstanceKind::kDecodeOnly; }
  bool does_decode() const { return spec_.kind != InstanceKind::kPrefillOnly; }

  void enqueue(RequestState* r) { queue_.push_back(r); }
  std::deque<RequestState*>& queue() { return queue_; }
  const std::vector<RequestState*>& decoding() const { return decoding_; }
  void add_decoding(RequestState* r);
  void remove_decoding(const RequestState* r);
  void remove_queued(const RequestState* r);

  SimTime busy_until() const { return busy_until_; }
  void set_busy_until(SimTime t) { busy_until_ = t; }
  bool in_iteration() const { return in_iteration_; }
  void set_in_iteration(bool on) { in_iteration_ = on; }

  // Admits a FIFO batch and prepares it: reuse decisions, swaps, remote
  // fetches and block allocation. Returns the batch timing; the caller
  // delivers completion at `finish`.
  PrefillBatch run_prefill(SimTime now, const PeerView& peers);

  // Allocates the next decode step's blocks and times the step.
  DecodeStep start_decode_step(SimTime now);
  // Emits one token for every request still running in `step`; returns the
  // requests that produced their last token.
  std::vector<RequestState*> complete_decode_step(const DecodeStep& step, SimTime now);

  // Indexes the prompt's full blocks when the design keeps prefill KV.
  void index_prompt(RequestState& r);
  // End of life on this instance: retags blocks to their final content,
  // indexes prompt plus generated tokens when the design says so, and drops
  // the request's references.
  void retire(RequestState& r);
  // Takes over KV delivered to this instance for `r`.
  void hold(RequestState& r, std::vector<BlockAddr> blocks);
  // Drops the request's references without indexing.
  void release(RequestState& r);

  // Frees `n` HBM blocks by swapping to DRAM, then evicting. Returns false if
  // that is not possible; `elapsed` grows by the swap time.
  bool make_room(std::size_t n, SimTime& elapsed);

  // Requests currently holding KV here.
  std::size_t holders() const { return holders_; }

 private:
  void check_tags(const RequestState& r, std::size_t reused_blocks) const;

  InstanceSpec spec_;
  ModelConfig model_;
  BlockConfig block_;
  EngineParams engine_;
  DesignCaps caps_;
  MemPool pool_;
  CostModel cost_;
  std::deque<RequestState*> queue_;
  std::vector<RequestState*> decoding_;
  SimTime busy_until_ = 0.0;
  bool in_iteration_ = false;
  std::size_t holders_ = 0;
};

}  // namespace kvpool
