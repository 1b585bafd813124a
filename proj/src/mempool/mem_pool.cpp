// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/mempool/mem_pool.h"

#include <fmt/format.h>

#include <algorithm>
#include <set>
#include <tuple>

#include "kvpool/core/error.h"

namespace kvpool {

MemPool::MemPool(InstanceId id, std::uint32_t hbm_blocks, std::uint32_t dram_blocks,
                 BlockConfig block)
    : id_(id),
      block_(block),
      hbm_(id, Medium::kHbm, hbm_blocks),
      dram_(id, Medium::kDram, dram_blocks),
      tree_(block.block_size),
      hbm_marks_(hbm_blocks, 0),
      dram_marks_(dram_blocks, 0) {}

void MemPool::begin_marks() {
  if (++mark_epoch_ == 0) {
    std::fill(hbm_marks_.begin(), hbm_marks_.end(), 0);
    std::fill(dram_marks_.begin(), dram_marks_.end(), 0);
    mark_epoch_ = 1;
  }
}

bool MemPool::mark(const BlockAddr& addr) {
  auto& m = (addr.medium == Medium::kHbm ? hbm_marks_ : dram_marks_)[addr.index];
  if (m == mark_epoch_) return false;
  m = mark_epoch_;
  return true;
}

bool MemPool::marked(const BlockAddr& addr) const {
  return (addr.medium == Medium::kHbm ? hbm_marks_ : dram_marks_)[addr.index] == mark_epoch_;
}

void MemPool::check_addr(const BlockAddr& addr) const {
  if (addr.instance != id_ || addr.index >= tier(addr.medium).capacity()) {
    throw Error(ErrorCode::kInvalidAddr,
                fmt::format("{} is not a block of instance {}", to_string(addr), id_));
  }
}

const BlockEntry& MemPool::entry(const BlockAddr& addr) const {
  check_addr(addr);
  return tier(addr.medium).entry(addr.index);
}

BlockEntry& MemPool::mutable_entry(const BlockAddr& addr) {
  check_addr(addr);
  return tier(addr.medium).entry(addr.index);
}

void MemPool::free_block(const BlockAddr& addr) { tier(addr.medium).release(addr.index); }

void MemPool::drop_from_index(const BlockAddr& addr) {
  BlockEntry& e = mutable_entry(addr);
  if (e.ref_count == 0) {
    free_block(addr);
  } else {
    e.state = BlockState::kActive;
  }
}

void MemPool::reserve(std::size_t n, AllocType type) {
  switch (type) {
    case AllocType::kHbm:
      if (n > hbm_.free_count()) evict(n - hbm_.free_count(), Medium::kHbm);
      break;
    case AllocType::kDram:
      if (n > dram_.free_count()) evict(n - dram_.free_count(), Medium::kDram);
      break;
    case AllocType::kMixed: {
      const std::size_t free = hbm_.free_count() + dram_.free_count();
      if (n > free) evict(n - free);
      break;
    }
  }
}

std::vector<BlockAddr> MemPool::alloc_mem(std::size_t n, AllocType type,
                                          InstanceId allocating_instance, RequestId owner) {
  auto got = try_alloc_mem(n, type, allocating_instance, owner);
  if (!got) {
    throw Error(ErrorCode::kOutOfMemory,
                fmt::format("instance {}: cannot allocate {} blocks (HBM free {}, DRAM free {})", id_,
                            n, hbm_.free_count(), dram_.free_count()));
  }
  return std::move(*got);
}

std::optional<std::vector<BlockAddr>> MemPool::try_alloc_mem(std::size_t n, AllocType type,
                                                             InstanceId allocating_instance,
                                                             RequestId owner) {
  reserve(n, type);
  std::size_t from_hbm = 0;
  std::size_t from_dram = 0;
  switch (type) {
    case AllocType::kHbm:
      from_hbm = n;
      break;
    case AllocType::kDram:
      from_dram = n;
      break;
    case AllocType::kMixed:
      from_hbm = std::min<std::size_t>(n, hbm_.free_count());
      from_dram = n - from_hbm;
      break;
  }
  if (from_hbm > hbm_.free_count() || from_dram > dram_.free_count()) return std::nullopt;
  std::vector<BlockAddr> out;
  out.reserve(n);
  for (auto index : hbm_.allocate(from_hbm, allocating_instance, owner)) out.push_back(hbm_.addr(index));
  for (auto index : dram_.allocate(from_dram, allocating_instance, owner)) out.push_back(dram_.addr(index));
  return out;
}

std::vector<BlockAddr> MemPool::free_many(std::span<const BlockAddr> addrs) {
  std::vector<BlockAddr> orphaned;
  if (tree_.stored_blocks() > 0) {
    for (const auto& a : addrs) {
      auto loc = tree_.find(a);
      if (!loc) continue;
      for (const auto& r : tree_.cut(loc->first, loc->second)) {
        if (!marked(r)) orphaned.push_back(r);
      }
    }
  }
  std::vector<BlockAddr> freed;
  freed.reserve(addrs.size() + orphaned.size());
  for (auto it = addrs.rbegin(); it != addrs.rend(); ++it) {
    free_block(*it);
    freed.push_back(*it);
  }
  for (const auto& r : orphaned) {
    const bool unreferenced = entry(r).ref_count == 0;
    drop_from_index(r);
    if (unreferenced) freed.push_back(r);
  }
  return freed;
}

void MemPool::free_mem(std::span<const BlockAddr> addrs) {
  begin_marks();
  for (const auto& a : addrs) {
    check_addr(a);
    if (!tier(a.medium).is_allocated(a.index) || !mark(a)) {
      throw Error(ErrorCode::kDoubleFree, to_string(a));
    }
  }
  free_many(addrs);
}

InsertOutcome MemPool::insert(TokenSpan tokens, std::span<const BlockAddr> addrs,
                              InsertPolicy policy) {
  const std::size_t n = full_blocks(tokens.size(), block_);
  if (addrs.size() != n) {
    throw Error(ErrorCode::kAddrCountMismatch,
                fmt::format("{} tokens need {} block addresses, got {}", tokens.size(), n, addrs.size()));
  }
  for (const auto& a : addrs) {
    if (!entry(a).allocated) throw Error(ErrorCode::kInvalidAddr, to_string(a) + " is not allocated");
  }
  const TokenSpan aligned = tokens.first(n * block_.block_size);
  // A block may be indexed at one position only.
  const auto existing = Tree::values(tree_.walk(aligned));
  for (std::size_t i = 0; i < n; ++i) {
    const bool same_slot = i < existing.size() && existing[i] == addrs[i];
    if (!same_slot && tree_.contains(addrs[i])) {
      throw Error(ErrorCode::kConflictingMapping,
                  to_string(addrs[i]) + " is already indexed under another prefix");
    }
  }
  const auto conflict =
      policy == InsertPolicy::kStrict ? Tree::Conflict::kStrict : Tree::Conflict::kKeepExisting;
  const auto result = tree_.insert(aligned, addrs, now_, conflict);
  InsertOutcome outcome;
  outcome.added = result.added.size();
  for (auto i : result.added) mutable_entry(addrs[i]).state = BlockState::kHistorical;
  for (auto i : result.kept) outcome.duplicates.push_back(addrs[i]);
  return outcome;
}

MatchResult MemPool::match(TokenSpan tokens, bool touch) {
  const auto path = tree_.walk(tokens);
  if (touch) Tree::touch(path, now_);
  MatchResult result;
  result.addrs = Tree::values(path);
  result.matched_tokens = result.addrs.size() * block_.block_size;
  result.media.reserve(result.addrs.size());
  for (const auto& a : result.addrs) result.media.push_back(a.medium);
  return result;
}

MatchResult MemPool::peek(TokenSpan tokens) const {
  return const_cast<MemPool*>(this)->match(tokens, false);
}

void MemPool::erase(TokenSpan tokens) {
  const std::size_t n = full_blocks(tokens.size(), block_);
  for (const auto& a : tree_.erase(tokens.first(n * block_.block_size))) drop_from_index(a);
}

std::size_t MemPool::evict_pass(std::size_t n, std::optional<Medium> target, bool collateral,
                                std::vector<BlockAddr>& freed) {
  using Key = std::tuple<SimTime, std::uint64_t, Tree::Node*>;
  std::set<Key> queue;
  for (auto* leaf : tree_.leaves()) queue.emplace(leaf->last_access, leaf->id, leaf);
  std::size_t counted = 0;
  while (counted < n && !queue.empty()) {
    Tree::Node* leaf = std::get<2>(*queue.begin());
    queue.erase(queue.begin());
    while (counted < n) {
      const BlockAddr tail = leaf->values.back();
      if (entry(tail).ref_count > 0) break;
      if (target && tail.medium != *target && !collateral) break;
      Tree::Node* parent = leaf->parent;
      const bool emptied = leaf->blocks() == 1;
      tree_.pop_tail(leaf);
      free_block(tail);
      freed.push_back(tail);
      if (!target || tail.medium == *target) ++counted;
      if (emptied) {
        if (parent != tree_.root() && parent->children.empty()) {
          queue.emplace(parent->last_access, parent->id, parent);
        }
        break;
      }
    }
  }
  return counted;
}

std::vector<BlockAddr> MemPool::evict(std::size_t n, std::optional<Medium> target) {
  std::vector<BlockAddr> freed;
  const std::size_t got = evict_pass(n, target, false, freed);
  // Blocks of the wanted medium may sit behind other-medium tails.
  if (got < n && target) evict_pass(n - got, target, true, freed);
  return freed;
}

std::size_t MemPool::evictable_blocks(Medium m) const {
  std::size_t count = 0;
  tree_.for_each([&](const Tree::Node& node, std::size_t) {
    for (const auto& a : node.values) {
      if (a.medium == m && entry(a).ref_count == 0) ++count;
    }
  });
  return count;
}

std::vector<std::pair<BlockAddr, BlockAddr>> MemPool::swap_out(std::size_t n) {
  std::vector<std::pair<BlockAddr, BlockAddr>> moved;
  if (n == 0) return moved;
  if (dram_.capacity() == 0) throw Error(ErrorCode::kNoDramCapacity, fmt::format("instance {} has no DRAM tier", id_));
  const std::size_t want = std::min(n, evictable_blocks(Medium::kHbm));
  if (want == 0) return moved;
  if (want > dram_.free_count()) evict(want - dram_.free_count(), Medium::kDram);
  if (dram_.free_count() == 0) {
    throw Error(ErrorCode::kNoDramCapacity, fmt::format("instance {}: DRAM full of pinned blocks", id_));
  }

  struct Candidate {
    SimTime last_access;
    std::size_t depth;
    std::uint64_t id;
    Tree::Node* node;
  };
  std::vector<Candidate> nodes;
  tree_.for_each([&](const Tree::Node& node, std::size_t depth) {
    nodes.push_back({node.last_access, depth, node.id, const_cast<Tree::Node*>(&node)});
  });
  std::sort(nodes.begin(), nodes.end(), [](const Candidate& a, const Candidate& b) {
    if (a.last_access != b.last_access) return a.last_access < b.last_access;
    if (a.depth != b.depth) return a.depth > b.depth;
    return a.id < b.id;
  });
  for (const auto& c : nodes) {
    for (std::size_t i = c.node->values.size(); i > 0 && moved.size() < want; --i) {
      const BlockAddr old = c.node->values[i - 1];
      if (old.medium != Medium::kHbm || entry(old).ref_count > 0) continue;
      if (dram_.free_count() == 0) return moved;
      const BlockEntry copy = entry(old);
      const BlockAddr fresh = dram_.addr(dram_.allocate(1, copy.allocating_instance, copy.owner_request)[0]);
      mutable_entry(fresh) = copy;
      tree_.replace(old, fresh);
      free_block(old);
      moved.emplace_back(old, fresh);
    }
    if (moved.size() >= want) break;
  }
  return moved;
}

std::vector<BlockAddr> MemPool::swap_in(std::span<const BlockAddr> addrs) {
  for (const auto& a : addrs) {
    check_addr(a);
    if (a.medium != Medium::kDram || !dram_.is_allocated(a.index)) {
      throw Error(ErrorCode::kPrecondition, to_string(a) + " is not an allocated DRAM block");
    }
  }
  // Pin the sources so eviction for the HBM side cannot reclaim them.
  pin(addrs);
  std::optional<std::vector<BlockAddr>> fresh;
  try {
    fresh = try_alloc_mem(addrs.size(), AllocType::kHbm, id_);
  } catch (...) {
    release(addrs);
    throw;
  }
  if (!fresh) {
    release(addrs);
    throw Error(ErrorCode::kOutOfMemory,
                fmt::format("instance {}: swap-in of {} blocks, HBM full", id_, addrs.size()));
  }
  for (std::size_t i = 0; i < addrs.size(); ++i) {
    BlockEntry copy = entry(addrs[i]);
    copy.ref_count -= 1;
    mutable_entry((*fresh)[i]) = copy;
    if (tree_.contains(addrs[i])) tree_.replace(addrs[i], (*fresh)[i]);
    free_block(addrs[i]);
  }
  return std::move(*fresh);
}

void MemPool::pin(std::span<const BlockAddr> addrs) {
  for (const auto& a : addrs) {
    BlockEntry& e = mutable_entry(a);
    if (!e.allocated) throw Error(ErrorCode::kPrecondition, "pin of free block " + to_string(a));
    ++e.ref_count;
  }
}

void MemPool::release(std::span<const BlockAddr> addrs) {
  for (const auto& a : addrs) {
    BlockEntry& e = mutable_entry(a);
    if (!e.allocated || e.ref_count == 0) {
      throw Error(ErrorCode::kPrecondition, "release of unreferenced block " + to_string(a));
    }
    if (--e.ref_count == 0 && e.state == BlockState::kActive) free_block(a);
  }
}

void MemPool::adopt(std::span<const BlockAddr> addrs) {
  for (const auto& a : addrs) mutable_entry(a).allocating_instance = id_;
}

void MemPool::set_tag(const BlockAddr& addr, ContentTag tag) { mutable_entry(addr).tag = tag; }

ContentTag MemPool::tag(const BlockAddr& addr) const { return entry(addr).tag; }

std::vector<BlockAddr> MemPool::blocks_allocated_by(InstanceId instance) const {
  std::vector<BlockAddr> out;
  for (const BlockPool* pool : {&hbm_, &dram_}) {
    for (std::uint32_t i = 0; i < pool->capacity(); ++i) {
      const auto& e = pool->entry(i);
      if (e.allocated && e.allocating_instance == instance) out.push_back(pool->addr(i));
    }
  }
  return out;
}

std::vector<BlockAddr> MemPool::release_allocated_by(InstanceId instance) {
  const auto addrs = blocks_allocated_by(instance);
  begin_marks();
  for (const auto& a : addrs) mark(a);
  return free_many(addrs);
}

void MemPool::check_invariants() const {
  hbm_.check_invariants();
  dram_.check_invariants();
  tree_.check_invariants();
  std::size_t historical = 0;
  for (const BlockPool* pool : {&hbm_, &dram_}) {
    for (std::uint32_t i = 0; i < pool->capacity(); ++i) {
      const auto& e = pool->entry(i);
      if (!e.allocated) continue;
      if (e.state == BlockState::kHistorical) {
        ++historical;
        if (!tree_.contains(pool->addr(i))) {
          throw Error(ErrorCode::kPrecondition, "historical block outside index: " + to_string(pool->addr(i)));
        }
      } else if (e.ref_count == 0) {
        throw Error(ErrorCode::kPrecondition, "leaked active block " + to_string(pool->addr(i)));
      }
    }
  }
  if (historical != tree_.stored_blocks()) {
    throw Error(ErrorCode::kPrecondition, "index references blocks that are not historical");
  }
}

std::string MemPool::dump_index() const {
  std::string out;
  const std::size_t b = block_.block_size;
  tree_.for_each([&](const Tree::Node& node, std::size_t depth) {
    out += fmt::format("[{},{})", depth * b, (depth + node.blocks()) * b);
    for (const auto& a : node.values) out += " " + to_string(a);
    out += fmt::format(" last_access={:.6f}{}\n", node.last_access, node.terminal ? " end" : "");
  });
  return out;
}

}  // namespace kvpool
