// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "kvpool/core/types.h"

namespace kvpool {

enum class BlockState : std::uint8_t { kActive, kHistorical };

struct BlockEntry {
  bool allocated = false;
  BlockState state = BlockState::kActive;
  std::uint32_t ref_count = 0;
  ContentTag tag = 0;
  InstanceId allocating_instance = kNoInstance;
  RequestId owner_request = kNoRequest;
};

// Fixed-size block allocator for one (instance, medium) tier. The free list
// is a LIFO stack; freeing a list in reverse allocation order restores the
// exact prior state.
class BlockPool {
 public:
  BlockPool(InstanceId owner, Medium medium, std::uint32_t capacity);

  // Pops `n` blocks; throws OutOfMemory (leaving the pool untouched) if
  // fewer are free.
  std::vector<std::uint32_t> allocate(std::size_t n, InstanceId allocating_instance,
                                      RequestId owner_request);
  void release(std::uint32_t index);

  const BlockEntry& entry(std::uint32_t index) const;
  BlockEntry& entry(std::uint32_t index);
  bool is_allocated(std::uint32_t index) const {
    return index < entries_.size() && entries_[index].allocated;
  }

  std::uint32_t capacity() const { return static_cast<std::uint32_t>(entries_.size()); }
  std::uint32_t free_count() const { return static_cast<std::uint32_t>(free_.size()); }
  std::uint32_t allocated_count() const { return capacity() - free_count(); }
  Medium medium() const { return medium_; }
  InstanceId owner() const { return owner_; }

  BlockAddr addr(std::uint32_t index) const { return {owner_, medium_, index}; }

  // Throws Precondition when the free list and entry table disagree.
  void check_invariants() const;

 private:
  void check_index(std::uint32_t index) const;

  InstanceId owner_;
  Medium medium_;
  std::vector<BlockEntry> entries_;
  std::vector<std::uint32_t> free_;
};

}  // namespace kvpool
