// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kvpool/core/types.h"
#include "kvpool/engine/cost_model.h"
#include "kvpool/mempool/mem_pool.h"

namespace kvpool {

enum class Phase : std::uint8_t { kQueued, kPrefilling, kTransferring, kDecoding, kDone, kFailed };

std::string_view to_string(Phase phase);

struct RequestState {
  Request request;
  Phase phase = Phase::kQueued;

  InstanceId prefill_instance = kNoInstance;
  InstanceId decode_instance = kNoInstance;
  std::vector<ExtraHolder> extra_holders;

  // Active KV on the instance currently serving the request.
  std::vector<BlockAddr> kv_blocks;
  MatchResult matched_prefix;
  // Tokens emitted so far; prefill emits the first.
  std::uint32_t generated = 0;
  std::optional<std::uint64_t> transfer_id;
  std::uint32_t retries = 0;

  SimTime arrival = 0.0;
  SimTime first_token = -1.0;
  SimTime second_token = -1.0;
  SimTime finished = -1.0;

  std::uint64_t prefill_tokens_computed = 0;
  std::uint64_t tokens_reused = 0;
  std::uint64_t bytes_transferred = 0;
  ReuseDecision decision = ReuseDecision::kRecompute;
  std::string failure;

  bool terminal() const { return phase == Phase::kDone || phase == Phase::kFailed; }

  // Prompt followed by the tokens whose KV the decode phase produced: the
  // last emitted token never gets KV.
  TokenList sequence() const;
  // Tokens whose KV is held right now.
  std::size_t kv_tokens() const;

  // Forward-only phase change; throws Precondition otherwise.
  void advance(Phase next);
};

}  // namespace kvpool
