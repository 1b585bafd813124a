// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kvpool/core/types.h"
#include "kvpool/mempool/block_pool.h"
#include "kvpool/mempool/prefix_tree.h"

namespace kvpool {

struct MatchResult {
  std::size_t matched_tokens = 0;
  std::vector<BlockAddr> addrs;
  std::vector<Medium> media;
};

enum class InsertPolicy { kKeepExisting, kStrict };

struct InsertOutcome {
  // Caller blocks that were not indexed because identical tokens already map
  // to other blocks. They stay active and are freed on their last release.
  std::vector<BlockAddr> duplicates;
  std::size_t added = 0;
};

// Per-instance memory pool: HBM and DRAM block tiers plus the token-prefix
// index over historical blocks.
//
// Reference counting is per block. A fresh allocation starts at one
// reference; pin() adds readers; release() drops one and frees an active
// block at zero. Indexed blocks are historical and survive at zero
// references until evicted, deleted or freed.
class MemPool {
 public:
  using Tree = PrefixTree<BlockAddr, BlockAddrHash>;

  MemPool(InstanceId id, std::uint32_t hbm_blocks, std::uint32_t dram_blocks, BlockConfig block);

  InstanceId id() const { return id_; }
  const BlockConfig& block_config() const { return block_; }

  // Evicts unreferenced historical blocks as needed, then allocates. Mixed
  // takes HBM first and falls back to DRAM. Throws OutOfMemory.
  std::vector<BlockAddr> alloc_mem(std::size_t n, AllocType type, InstanceId allocating_instance,
                                   RequestId owner = kNoRequest);
  std::optional<std::vector<BlockAddr>> try_alloc_mem(std::size_t n, AllocType type,
                                                      InstanceId allocating_instance,
                                                      RequestId owner = kNoRequest);

  // Unconditional free. Indexed blocks leave the index together with every
  // block stored below them. Throws InvalidAddr / DoubleFree before freeing
  // anything.
  void free_mem(std::span<const BlockAddr> addrs);

  // Indexes the full blocks of `tokens`; |addrs| must equal the number of
  // full blocks. Stored blocks become historical.
  InsertOutcome insert(TokenSpan tokens, std::span<const BlockAddr> addrs,
                       InsertPolicy policy = InsertPolicy::kKeepExisting);

  // Longest indexed block-aligned prefix. Refreshes last_access on the path
  // unless `touch` is false.
  MatchResult match(TokenSpan tokens, bool touch = true);
  MatchResult peek(TokenSpan tokens) const;

  // Unlinks the stored sequence equal to the block-aligned part of `tokens`.
  void erase(TokenSpan tokens);

  // Frees up to n unreferenced historical blocks, least recently used leaf
  // first. With `target` set, only blocks of that medium count toward n.
  std::vector<BlockAddr> evict(std::size_t n, std::optional<Medium> target = std::nullopt);

  // Moves up to n unreferenced historical HBM blocks to DRAM, LRU first.
  std::vector<std::pair<BlockAddr, BlockAddr>> swap_out(std::size_t n);

  // Moves DRAM blocks to fresh HBM blocks; returns the new addresses in order.
  std::vector<BlockAddr> swap_in(std::span<const BlockAddr> addrs);

  void pin(std::span<const BlockAddr> addrs);
  void release(std::span<const BlockAddr> addrs);

  // Hands blocks allocated on behalf of a peer over to this instance.
  void adopt(std::span<const BlockAddr> addrs);

  void set_tag(const BlockAddr& addr, ContentTag tag);
  ContentTag tag(const BlockAddr& addr) const;
  const BlockEntry& entry(const BlockAddr& addr) const;
  bool indexed(const BlockAddr& addr) const { return tree_.contains(addr); }

  void advance_clock(SimTime now) { now_ = std::max(now_, now); }
  SimTime now() const { return now_; }

  std::uint32_t capacity(Medium m) const { return tier(m).capacity(); }
  std::uint32_t free_blocks(Medium m) const { return tier(m).free_count(); }
  std::uint32_t allocated_blocks(Medium m) const { return tier(m).allocated_count(); }
  std::size_t indexed_blocks() const { return tree_.stored_blocks(); }
  // Unreferenced historical blocks on `m`: what eviction could reclaim.
  std::size_t evictable_blocks(Medium m) const;

  std::vector<BlockAddr> blocks_allocated_by(InstanceId instance) const;
  // Failure cleanup: frees every block allocated on behalf of `instance`.
  // Returns the freed addresses (index descendants included).
  std::vector<BlockAddr> release_allocated_by(InstanceId instance);

  const Tree& tree() const { return tree_; }

  // Throws Precondition if tiers, index and reference counts disagree.
  void check_invariants() const;

  // One line per index node in preorder: token range, block addresses,
  // last access time. Stable across runs.
  std::string dump_index() const;

 private:
  BlockPool& tier(Medium m) { return m == Medium::kHbm ? hbm_ : dram_; }
  const BlockPool& tier(Medium m) const { return m == Medium::kHbm ? hbm_ : dram_; }
  void check_addr(const BlockAddr& addr) const;
  BlockEntry& mutable_entry(const BlockAddr& addr);
  void free_block(const BlockAddr& addr);
  // A block that left the index: freed if unreferenced, else active again.
  void drop_from_index(const BlockAddr& addr);
  std::size_t evict_pass(std::size_t n, std::optional<Medium> target, bool collateral,
                         std::vector<BlockAddr>& freed);
  void reserve(std::size_t n, AllocType type);
  // Frees `addrs` and cuts their index descendants. Returns every freed address.
  std::vector<BlockAddr> free_many(std::span<const BlockAddr> addrs);
  // Scratch set of addresses: begin_marks() empties it in O(1).
  void begin_marks();
  bool mark(const BlockAddr& addr);  // false if already marked
  bool marked(const BlockAddr& addr) const;

  InstanceId id_;
  BlockConfig block_;
  BlockPool hbm_;
  BlockPool dram_;
  Tree tree_;
  SimTime now_ = 0.0;
  std::vector<std::uint32_t> hbm_marks_;
  std::vector<std::uint32_t> dram_marks_;
  std::uint32_t mark_epoch_ = 0;
};

}  // namespace kvpool
