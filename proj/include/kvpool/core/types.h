// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kvpool {

using Token = std::uint32_t;
using TokenList = std::vector<Token>;
using TokenSpan = std::span<const Token>;

using InstanceId = std::uint32_t;
using RequestId = std::uint64_t;
using SessionId = std::uint64_t;
using ContentTag = std::uint64_t;

// Simulated seconds.
using SimTime = double;

inline constexpr RequestId kNoRequest = std::numeric_limits<RequestId>::max();
inline constexpr InstanceId kNoInstance = std::numeric_limits<InstanceId>::max();

enum class Medium : std::uint8_t { kHbm = 0, kDram = 1 };

enum class AllocType : std::uint8_t { kHbm, kDram, kMixed };

std::string_view to_string(Medium medium);

// One KV block of B tokens on a given instance and memory tier. The owning
// instance is part of the address.
struct BlockAddr {
  InstanceId instance = 0;
  Medium medium = Medium::kHbm;
  std::uint32_t index = 0;

  auto operator<=>(const BlockAddr&) const = default;
};

struct BlockAddrHash {
  std::size_t operator()(const BlockAddr& addr) const noexcept {
    std::uint64_t key = (static_cast<std::uint64_t>(addr.instance) << 33) |
                        (static_cast<std::uint64_t>(addr.medium) << 32) |
                        addr.index;
    key ^= key >> 33;
    key *= 0xff51afd7ed558ccdULL;
    key ^= key >> 33;
    return static_cast<std::size_t>(key);
  }
};

std::string to_string(const BlockAddr& addr);

enum class Layout : std::uint8_t { kDiscrete, kAggregated };

std::string_view to_string(Layout layout);

struct ModelConfig {
  std::uint32_t num_layers = 40;
  // K and V for one token in one layer: 2 * hidden * sizeof(fp16).
  std::uint64_t kv_bytes_per_token_per_layer = 2 * 5120 * 2;
  std::uint32_t context_window = 4096;

  std::uint64_t kv_bytes(std::uint64_t n_tokens) const {
    return n_tokens * num_layers * kv_bytes_per_token_per_layer;
  }
};

struct BlockConfig {
  std::uint32_t block_size = 16;
  Layout layout = Layout::kDiscrete;

  // Storage blocks needed per B tokens: one per (layer, K/V) pair when
  // discrete, a single block holding every layer when aggregated.
  std::uint64_t storage_blocks_per_token_block(const ModelConfig& model) const {
    return layout == Layout::kDiscrete ? 2ULL * model.num_layers : 1ULL;
  }
};

// ceil(n_tokens / B). Partial final blocks occupy a whole block.
constexpr std::uint64_t tokens_to_blocks(std::uint64_t n_tokens, const BlockConfig& cfg) {
  return (n_tokens + cfg.block_size - 1) / cfg.block_size;
}

// floor(n_tokens / B): the blocks that are completely filled.
constexpr std::uint64_t full_blocks(std::uint64_t n_tokens, const BlockConfig& cfg) {
  return n_tokens / cfg.block_size;
}

struct ParallelismConfig {
  std::uint32_t tp_degree = 1;
  std::uint32_t pp_degree = 1;

  std::uint32_t ranks() const { return tp_degree * pp_degree; }
  bool operator==(const ParallelismConfig&) const = default;
};

enum class InstanceKind : std::uint8_t { kPrefillOnly, kDecodeOnly, kColocated };

std::string_view to_string(InstanceKind kind);

struct InstanceSpec {
  InstanceId id = 0;
  std::string name;
  InstanceKind kind = InstanceKind::kColocated;
  ParallelismConfig parallelism;
  std::uint32_t hbm_capacity_blocks = 4096;
  std::uint32_t dram_capacity_blocks = 0;
  bool caching_enabled = false;
};

struct Request {
  RequestId id = 0;
  SessionId session_id = 0;
  std::uint32_t turn_index = 0;
  TokenList prompt;
  // Tokens the simulated model emits, gen_len of them. Traces derive them
  // from the next turn's prompt so multi-turn reuse is observable.
  TokenList output;
  std::uint32_t gen_len = 1;
  // Earliest time the request may be issued; follow-up turns are further
  // delayed until the previous turn's response completes.
  SimTime arrival_time = 0.0;
  std::map<std::string, std::string> sampling_params;
};

// A peer holding historical KV for prompt tokens [begin, end).
struct ExtraHolder {
  InstanceId instance = kNoInstance;
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Content identity of the KV block covering tokens[0, end): a hash of the
// whole prefix, since KV at any position depends on every earlier token.
ContentTag prefix_tag(TokenSpan tokens, std::size_t end);

// Tags for blocks 0..n_blocks-1 of `tokens`; a trailing partial block is
// tagged by the prefix it actually holds.
std::vector<ContentTag> block_tags(TokenSpan tokens, std::uint32_t block_size,
                                   std::size_t n_blocks);

}  // namespace kvpool
