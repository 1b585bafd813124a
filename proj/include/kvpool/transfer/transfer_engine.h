// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kvpool/core/config.h"
#include "kvpool/core/error.h"
#include "kvpool/mempool/mem_pool.h"
#include "kvpool/transfer/network_model.h"
#include "kvpool/transfer/transfer_plan.h"

namespace kvpool {

// Opaque metadata carried to the receiver with the data.
struct TransferPayload {
  RequestId request_id = kNoRequest;
  TokenList prompt;
  std::map<std::string, std::string> sampling_params;
};

struct TransferFlags {
  // Receiver indexes `tokens` against the delivered blocks before acking.
  bool insert_at_receiver = false;
  // Receiver first matches `tokens` in its own index; matched leading blocks
  // are reused in place and not sent.
  bool incremental = false;
};

struct TransferSpec {
  InstanceId src = 0;
  InstanceId dst = 0;
  ParallelismConfig src_parallelism;
  ParallelismConfig dst_parallelism;
  std::vector<BlockAddr> src_addrs;
  // Pre-allocated destination blocks; skips the allocation round trip.
  std::optional<std::vector<BlockAddr>> dst_addrs;
  TokenList tokens;
  TransferFlags flags;
  TransferMode mode = TransferMode::kByRequest;
  std::vector<SimTime> layer_finish_times;  // by-layer gating, absolute times
  SimTime ready_time = 0.0;                 // by-request gating
  AllocType dst_type = AllocType::kHbm;
  TransferPayload payload;
  std::string purpose;
};

struct TransferRecord {
  std::uint64_t id = 0;
  RequestId request_id = kNoRequest;
  TransferMode mode = TransferMode::kByRequest;
  std::uint64_t n_calls = 0;
  std::uint64_t bytes = 0;
  SimTime start = 0.0;
  SimTime end = 0.0;
  InstanceId src = 0;
  InstanceId dst = 0;
  std::string purpose;
};

struct ChunkSlot {
  std::uint64_t transfer = 0;
  std::uint32_t communicator = 0;
  SimTime start = 0.0;
  SimTime end = 0.0;
};

struct TransferOutcome {
  bool ok = true;
  ErrorCode error = ErrorCode::kPrecondition;
  std::string message;
  std::uint64_t id = 0;
  std::vector<BlockAddr> dst_addrs;
  // Blocks the receiver's index already held under other addresses.
  std::vector<BlockAddr> duplicates;
  std::uint64_t n_calls = 0;
  std::uint64_t bytes = 0;
  std::size_t blocks_sent = 0;
  std::size_t blocks_reused = 0;
  std::uint32_t messages = 0;
  SimTime start = 0.0;
  SimTime end = 0.0;
  TransferPayload payload;
};

// Moves KV blocks between instance pools: allocation at the receiver (one
// round trip unless destination blocks are supplied), transmission per the
// transfer plan over the instance pair's communicators, and an
// acknowledgement, optionally preceded by a receiver-side insert.
//
// Timing is computed when a transfer begins; the caller delivers the
// completion at TransferOutcome::end by calling complete().
class TransferEngine {
 public:
  TransferEngine(NetworkParams network, ModelConfig model, BlockConfig block);

  const NetworkModel& network() const { return network_; }

  // Starts a transfer. Throws DstOutOfMemory when the receiver cannot
  // allocate, ModeLayoutMismatch, InvalidAddr.
  TransferOutcome begin(MemPool& src, MemPool& dst, TransferSpec spec, SimTime now);

  // Delivers the data: copies content tags, hands the allocated blocks to the
  // receiver and inserts if asked. On a receiver-side insert error the
  // receiver's blocks are released and the outcome carries the error.
  TransferOutcome complete(std::uint64_t id, MemPool& dst);

  // Drops an in-flight transfer. Receiver blocks are released when `dst` is
  // given (the receiver is still alive).
  void abort(std::uint64_t id, MemPool* dst);

  // Insert as a separate request/ack exchange; returns when the ack lands.
  SimTime insert_remote(MemPool& dst, TokenSpan tokens, std::span<const BlockAddr> addrs, SimTime now);

  // Time to pull `n_blocks` historical blocks from a peer on idle links,
  // allocation round trip and acknowledgement included.
  SimTime estimate_fetch(std::size_t n_blocks, Medium src_medium, Medium dst_medium,
                         const ParallelismConfig& src_par, const ParallelismConfig& dst_par) const;

  // Mode used to pull historical blocks (no compute to overlap with).
  TransferMode fetch_mode() const;

  std::vector<std::uint64_t> in_flight_involving(InstanceId instance) const;
  bool in_flight(std::uint64_t id) const { return pending_.contains(id); }
  std::size_t in_flight_count() const { return pending_.size(); }
  std::optional<SimTime> completion_time(std::uint64_t id) const;
  // Receiver of an in-flight transfer, kNoInstance if unknown.
  InstanceId destination(std::uint64_t id) const {
    auto it = pending_.find(id);
    return it == pending_.end() ? kNoInstance : it->second.spec.dst;
  }

  const std::vector<TransferRecord>& records() const { return records_; }

  void set_chunk_log(bool on) { log_chunks_ = on; }
  const std::vector<ChunkSlot>& chunk_log() const { return chunk_log_; }

 private:
  struct Pending {
    TransferSpec spec;
    TransferOutcome outcome;
    std::vector<BlockAddr> allocated;  // receiver blocks created for this transfer
    std::vector<BlockAddr> reused;     // receiver blocks pinned from its index
    std::vector<ContentTag> tags;      // source tags of the sent blocks
  };

  struct Link {
    std::vector<SimTime> free_at;
    std::uint64_t next = 0;
  };

  SimTime schedule(Link& link, const TransferPlan& plan, std::size_t first_block,
                   const std::vector<BlockAddr>& src_addrs, const std::vector<BlockAddr>& dst_addrs,
                   const Repartition* shards, SimTime not_before, std::uint64_t id,
                   bool log) const;

  NetworkModel network_;
  ModelConfig model_;
  BlockConfig block_;
  std::map<std::pair<InstanceId, InstanceId>, Link> links_;
  std::map<std::uint64_t, Pending> pending_;
  std::vector<TransferRecord> records_;
  std::uint64_t next_id_ = 1;
  bool log_chunks_ = false;
  mutable std::vector<ChunkSlot> chunk_log_;
};

}  // namespace kvpool
