// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/mempool/block_pool.h"

#include <fmt/format.h>

#include "kvpool/core/error.h"

namespace kvpool {

BlockPool::BlockPool(InstanceId owner, Medium medium, std::uint32_t capacity)
    : owner_(owner), medium_(medium), entries_(capacity) {
  free_.reserve(capacity);
  for (std::uint32_t i = capacity; i > 0; --i) free_.push_back(i - 1);
}

std::vector<std::uint32_t> BlockPool::allocate(std::size_t n, InstanceId allocating_instance,
                                               RequestId owner_request) {
  if (n > free_.size()) {
    throw Error(ErrorCode::kOutOfMemory,
                fmt::format("instance {} {}: need {} blocks, {} free", owner_, to_string(medium_), n,
                            free_.size()));
  }
  std::vector<std::uint32_t> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t index = free_.back();
    free_.pop_back();
    BlockEntry& e = entries_[index];
    e = BlockEntry{};
    e.allocated = true;
    e.ref_count = 1;
    e.allocating_instance = allocating_instance;
    e.owner_request = owner_request;
    out.push_back(index);
  }
  return out;
}

void BlockPool::check_index(std::uint32_t index) const {
  if (index >= entries_.size()) {
    throw Error(ErrorCode::kInvalidAddr, to_string(addr(index)) + " out of range");
  }
}

void BlockPool::release(std::uint32_t index) {
  check_index(index);
  BlockEntry& e = entries_[index];
  if (!e.allocated) throw Error(ErrorCode::kDoubleFree, to_string(addr(index)));
  e = BlockEntry{};
  free_.push_back(index);
}

const BlockEntry& BlockPool::entry(std::uint32_t index) const {
  check_index(index);
  return entries_[index];
}

BlockEntry& BlockPool::entry(std::uint32_t index) {
  check_index(index);
  return entries_[index];
}

void BlockPool::check_invariants() const {
  std::vector<bool> seen(entries_.size(), false);
  for (std::uint32_t index : free_) {
    if (index >= entries_.size() || seen[index] || entries_[index].allocated) {
      throw Error(ErrorCode::kPrecondition,
                  fmt::format("free list corrupt at {}", to_string(addr(index))));
    }
    seen[index] = true;
  }
  std::size_t allocated = 0;
  for (const auto& e : entries_) allocated += e.allocated ? 1 : 0;
  if (allocated + free_.size() != entries_.size()) {
    throw Error(ErrorCode::kPrecondition,
                fmt::format("instance {} {}: {} allocated + {} free != {}", owner_,
                            to_string(medium_), allocated, free_.size(), entries_.size()));
  }
}

}  // namespace kvpool
