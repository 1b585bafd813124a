// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kvpool/core/config.h"
#include "kvpool/core/types.h"

namespace kvpool {

// One network call.
struct TransferChunk {
  std::uint32_t block = 0;        // token block carried by this call
  std::uint32_t layer_begin = 0;  // layers covered, [begin, end)
  std::uint32_t layer_end = 0;
  std::uint64_t bytes = 0;
  SimTime earliest_start = 0.0;
};

struct TransferPlan {
  TransferMode mode = TransferMode::kByRequest;
  Layout layout = Layout::kDiscrete;
  std::uint64_t n_calls = 0;
  std::uint64_t bytes_total = 0;
  std::vector<TransferChunk> chunks;
};

// Closed-form call count.
std::uint64_t expected_calls(std::uint64_t n_token_blocks, TransferMode mode, Layout layout,
                             std::uint32_t num_layers);

// Bytes of one token block across every layer, K and V included.
std::uint64_t token_block_bytes(const BlockConfig& block, const ModelConfig& model);

// Calls needed to move the KV of `n_tokens` tokens (whole blocks).
//   discrete, by-request: one call per (block, layer, K/V) storage block
//   aggregated, by-request or by-request-agg: one call per block
//   discrete, by-layer: layer-major, 2 calls per block per layer, each gated
//   on its layer's compute finish time
// By-request chunks are gated on `ready_time` (prefill completion).
// Throws ModeLayoutMismatch for by-request-agg on discrete blocks and for
// by-layer on aggregated blocks; Precondition if by-layer lacks L finish times.
TransferPlan plan_transfer(std::uint64_t n_tokens, TransferMode mode, const BlockConfig& block,
                           const ModelConfig& model, std::span<const SimTime> layer_finish_times = {},
                           SimTime ready_time = 0.0);

// Same, over an explicit number of token blocks.
TransferPlan plan_block_transfer(std::uint64_t n_blocks, TransferMode mode, const BlockConfig& block,
                                 const ModelConfig& model,
                                 std::span<const SimTime> layer_finish_times = {},
                                 SimTime ready_time = 0.0);

}  // namespace kvpool
