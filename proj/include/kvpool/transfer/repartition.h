// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "kvpool/core/types.h"

namespace kvpool {

// Rectangle of one KV block's (layer x head) grid moved from one source rank
// to one destination rank. Heads are measured in units of 1/head_units of the
// head dimension, head_units = lcm(tp_src, tp_dst). Ranks are numbered
// stage * tp + tp_rank.
struct ShardPiece {
  std::uint32_t src_rank = 0;
  std::uint32_t dst_rank = 0;
  std::uint32_t layer_begin = 0;
  std::uint32_t layer_end = 0;
  std::uint32_t head_begin = 0;
  std::uint32_t head_end = 0;

  std::uint64_t area() const {
    return static_cast<std::uint64_t>(layer_end - layer_begin) * (head_end - head_begin);
  }
};

struct Repartition {
  std::uint32_t num_layers = 0;
  std::uint32_t head_units = 1;
  std::vector<ShardPiece> pieces;
};

// Contiguous layer range per pipeline stage; the first L % pp stages take one
// extra layer.
std::vector<std::pair<std::uint32_t, std::uint32_t>> stage_layers(std::uint32_t pp,
                                                                  std::uint32_t num_layers);

// Every non-empty intersection of a source shard with a destination shard.
// Heads split evenly across TP ranks, layers across PP stages.
Repartition repartition(const ParallelismConfig& src, const ParallelismConfig& dst,
                        std::uint32_t num_layers);

}  // namespace kvpool
