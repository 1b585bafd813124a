// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/transfer/transfer_plan.h"

#include <fmt/format.h>

#include "kvpool/core/error.h"

namespace kvpool {

namespace {

void check_compatible(TransferMode mode, Layout layout) {
  if (mode == TransferMode::kByRequestAgg && layout == Layout::kDiscrete) {
    throw Error(ErrorCode::kModeLayoutMismatch, "by-request-agg needs the aggregated layout");
  }
  if (mode == TransferMode::kByLayer && layout == Layout::kAggregated) {
    throw Error(ErrorCode::kModeLayoutMismatch, "by-layer is not defined for aggregated blocks");
  }
}

}  // namespace

std::uint64_t expected_calls(std::uint64_t n_token_blocks, TransferMode mode, Layout layout,
                             std::uint32_t num_layers) {
  check_compatible(mode, layout);
  if (layout == Layout::kAggregated) return n_token_blocks;
  return n_token_blocks * 2ULL * num_layers;
}

std::uint64_t token_block_bytes(const BlockConfig& block, const ModelConfig& model) {
  return model.kv_bytes(block.block_size);
}

TransferPlan plan_transfer(std::uint64_t n_tokens, TransferMode mode, const BlockConfig& block,
                           const ModelConfig& model, std::span<const SimTime> layer_finish_times,
                           SimTime ready_time) {
  return plan_block_transfer(tokens_to_blocks(n_tokens, block), mode, block, model,
                             layer_finish_times, ready_time);
}

TransferPlan plan_block_transfer(std::uint64_t n_blocks, TransferMode mode, const BlockConfig& block,
                                 const ModelConfig& model,
                                 std::span<const SimTime> layer_finish_times, SimTime ready_time) {
  check_compatible(mode, block.layout);
  const std::uint32_t layers = model.num_layers;
  if (mode == TransferMode::kByLayer && layer_finish_times.size() != layers) {
    throw Error(ErrorCode::kPrecondition,
                fmt::format("by-layer plan needs {} layer finish times, got {}", layers,
                            layer_finish_times.size()));
  }
  TransferPlan plan;
  plan.mode = mode;
  plan.layout = block.layout;
  const std::uint64_t block_bytes = token_block_bytes(block, model);
  if (block.layout == Layout::kAggregated) {
    plan.chunks.reserve(n_blocks);
    for (std::uint64_t b = 0; b < n_blocks; ++b) {
      plan.chunks.push_back({static_cast<std::uint32_t>(b), 0, layers, block_bytes, ready_time});
    }
  } else {
    // A discrete storage block holds K or V of one layer.
    const std::uint64_t sub_bytes = static_cast<std::uint64_t>(block.block_size) *
                                    model.kv_bytes_per_token_per_layer / 2;
    plan.chunks.reserve(n_blocks * 2 * layers);
    if (mode == TransferMode::kByLayer) {
      for (std::uint32_t l = 0; l < layers; ++l) {
        for (std::uint64_t b = 0; b < n_blocks; ++b) {
          for (int kv = 0; kv < 2; ++kv) {
            plan.chunks.push_back({static_cast<std::uint32_t>(b), l, l + 1, sub_bytes, layer_finish_times[l]});
          }
        }
      }
    } else {
      for (std::uint64_t b = 0; b < n_blocks; ++b) {
        for (std::uint32_t l = 0; l < layers; ++l) {
          for (int kv = 0; kv < 2; ++kv) {
            plan.chunks.push_back({static_cast<std::uint32_t>(b), l, l + 1, sub_bytes, ready_time});
          }
        }
      }
    }
  }
  plan.n_calls = plan.chunks.size();
  for (const auto& c : plan.chunks) plan.bytes_total += c.bytes;
  return plan;
}

}  // namespace kvpool
