// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <queue>
#include <vector>

#include "kvpool/core/types.h"

namespace kvpool {

enum class EventKind : std::uint8_t {
  kArrival,
  kPrefillDone,
  kTransferChunkDone,
  kDecodeStep,
  kResponseDone,
  kHeartbeat,
  kFailureInject,
  // Memory was short; try again (instance kick or a pending transfer).
  kRetry,
};

std::string_view to_string(EventKind kind);

struct SimEvent {
  SimTime time = 0.0;
  std::uint64_t seq = 0;
  EventKind kind = EventKind::kArrival;
  // Request index, instance id or transfer id depending on kind.
  std::uint64_t subject = 0;
  std::uint64_t aux = 0;
};

// Min-queue on (time, seq); seq is assigned at push and strictly increases,
// so simultaneous events run in the order they were scheduled.
class EventQueue {
 public:
  std::uint64_t push(SimTime time, EventKind kind, std::uint64_t subject, std::uint64_t aux = 0) {
    heap_.push({time, next_seq_, kind, subject, aux});
    return next_seq_++;
  }
  SimEvent pop() {
    SimEvent e = heap_.top();
    heap_.pop();
    return e;
  }
  bool empty() const { return heap_.empty(); }
  std::size_t size() const { return heap_.size(); }
  const SimEvent& top() const { return heap_.top(); }

 private:
  struct Later {
    bool operator()(const SimEvent& a, const SimEvent& b) const {
      return a.time != b.time ? a.time > b.time : a.seq > b.seq;
    }
  };
  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> heap_;
  std::uint64_t next_seq_ = 0;
};

}  // namespace kvpool
