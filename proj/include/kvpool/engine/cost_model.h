// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvpool/engine/timing_model.h"

namespace kvpool {

enum class ReuseDecision : std::uint8_t { kRecompute, kReuse };

std::string_view to_string(ReuseDecision d);

// One way to serve a request's prompt: reuse `tokens` cached tokens, paying
// `move_time` to bring them into local HBM first.
struct ReuseOption {
  std::uint64_t tokens = 0;
  SimTime move_time = 0.0;
};

// A request in a prefill batch and its reuse options. Option 0 is always
// "recompute everything" (no tokens, no move); further options reuse longer
// prefixes.
struct ReuseCandidate {
  std::uint64_t prompt_tokens = 0;
  std::vector<ReuseOption> options;
};

struct BatchPlan {
  std::vector<std::size_t> chosen;  // option index per candidate
  SimTime total_time = 0.0;         // moves, then one batched prefill
};

// Decides cache reuse for a whole batch. The batch is served by moving every
// chosen prefix (serially) and then running one prefill over the remaining
// tokens, so its time is
//   sum(move_time) + prefill_cost(sum(new tokens), sum(reused tokens)).
// Choices are improved one request at a time until no single change makes
// the batch strictly faster; ties keep the cheaper-to-move option, so
// equal-time cases resolve to recomputation.
class CostModel {
 public:
  explicit CostModel(TimingModel timing) : timing_(timing) {}

  const TimingModel& timing() const { return timing_; }

  SimTime batch_time(std::span<const ReuseCandidate> batch, std::span<const std::size_t> chosen) const;
  BatchPlan plan(std::span<const ReuseCandidate> batch) const;

  // Single request, one reuse option: reuse iff the prefill time saved
  // exceeds the move time.
  ReuseDecision should_reuse(std::uint64_t prompt_tokens, const ReuseOption& option) const;

 private:
  TimingModel timing_;
};

// Per-request view of a plan.
std::vector<ReuseDecision> should_reuse_cache(const CostModel& model, std::span<const ReuseCandidate> batch);

}  // namespace kvpool
