// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/transfer/transfer_engine.h"

#include <fmt/format.h>

#include <algorithm>

namespace kvpool {

TransferEngine::TransferEngine(NetworkParams network, ModelConfig model, BlockConfig block)
    : network_(network), model_(model), block_(block) {}

TransferMode TransferEngine::fetch_mode() const {
  return block_.layout == Layout::kAggregated ? TransferMode::kByRequestAgg : TransferMode::kByRequest;
}

SimTime TransferEngine::schedule(Link& link, const TransferPlan& plan, std::size_t first_block,
                                 const std::vector<BlockAddr>& src_addrs,
                                 const std::vector<BlockAddr>& dst_addrs, const Repartition* shards,
                                 SimTime not_before, std::uint64_t id, bool log) const {
  if (link.free_at.empty()) link.free_at.assign(std::max<std::uint32_t>(1, network_.params().communicators), 0.0);
  // Call duration depends only on (layers, link class); memoize per plan.
  std::map<std::tuple<std::uint32_t, std::uint32_t, std::uint64_t, bool>, SimTime> memo;
  SimTime last = not_before;
  for (const auto& chunk : plan.chunks) {
    const std::size_t i = first_block + chunk.block;
    const bool fast = src_addrs[i].medium == Medium::kHbm && dst_addrs[i].medium == Medium::kHbm;
    const auto key = std::make_tuple(chunk.layer_begin, chunk.layer_end, chunk.bytes, fast);
    auto it = memo.find(key);
    if (it == memo.end()) {
      const double bw = network_.bandwidth(src_addrs[i].medium, dst_addrs[i].medium);
      it = memo.emplace(key, network_.call_time(chunk.bytes, bw, shards, chunk.layer_begin, chunk.layer_end)).first;
    }
    const auto c = static_cast<std::uint32_t>(link.next++ % link.free_at.size());
    const SimTime start = std::max({not_before, chunk.earliest_start, link.free_at[c]});
    const SimTime end = start + it->second;
    link.free_at[c] = end;
    last = std::max(last, end);
    if (log) chunk_log_.push_back({id, c, start, end});
  }
  return last;
}

TransferOutcome TransferEngine::begin(MemPool& src, MemPool& dst, TransferSpec spec, SimTime now) {
  const std::size_t n = spec.src_addrs.size();
  for (const auto& a : spec.src_addrs) {
    if (!src.entry(a).allocated) throw Error(ErrorCode::kInvalidAddr, to_string(a) + " is not allocated");
  }
  // Validate the plan shape before touching the receiver.
  expected_calls(0, spec.mode, block_.layout, model_.num_layers);

  Pending p;
  const std::uint64_t id = next_id_++;
  TransferOutcome& out = p.outcome;
  out.id = id;
  out.start = now;
  out.payload = spec.payload;

  SimTime ready = now;
  std::vector<BlockAddr> dst_addrs;
  if (spec.dst_addrs) {
    if (spec.dst_addrs->size() != n) {
      throw Error(ErrorCode::kAddrCountMismatch, "destination address count differs from source");
    }
    for (const auto& a : *spec.dst_addrs) {
      if (!dst.entry(a).allocated) throw Error(ErrorCode::kInvalidAddr, to_string(a) + " is not allocated");
    }
    dst_addrs = *spec.dst_addrs;
  } else {
    if (spec.flags.incremental && !spec.tokens.empty()) {
      auto m = dst.match(spec.tokens);
      const std::size_t k = std::min(m.addrs.size(), n);
      p.reused.assign(m.addrs.begin(), m.addrs.begin() + static_cast<std::ptrdiff_t>(k));
      dst.pin(p.reused);
    }
    auto fresh = dst.try_alloc_mem(n - p.reused.size(), spec.dst_type, spec.src, spec.payload.request_id);
    if (!fresh) {
      dst.release(p.reused);
      throw Error(ErrorCode::kDstOutOfMemory,
                  fmt::format("instance {} cannot take {} blocks", spec.dst, n - p.reused.size()));
    }
    p.allocated = std::move(*fresh);
    dst_addrs = p.reused;
    dst_addrs.insert(dst_addrs.end(), p.allocated.begin(), p.allocated.end());
    out.messages += 2;
    ready = now + 2 * network_.message_time();
  }

  const std::size_t first = p.reused.size();
  const std::size_t to_send = n - first;
  std::vector<SimTime> gates = spec.layer_finish_times;
  const TransferPlan plan = plan_block_transfer(to_send, spec.mode, block_, model_,
                                                spec.mode == TransferMode::kByLayer ? std::span<const SimTime>(gates)
                                                                                    : std::span<const SimTime>(),
                                                spec.ready_time);
  std::optional<Repartition> shards;
  if (!(spec.src_parallelism == spec.dst_parallelism) || spec.src_parallelism.ranks() > 1) {
    shards = repartition(spec.src_parallelism, spec.dst_parallelism, model_.num_layers);
  }
  Link& link = links_[{spec.src, spec.dst}];
  const SimTime transmit_end =
      to_send == 0 ? ready
                   : schedule(link, plan, first, spec.src_addrs, dst_addrs, shards ? &*shards : nullptr, ready, id,
                              log_chunks_);
  out.messages += 1;  // acknowledgement
  out.end = transmit_end + network_.message_time();
  out.n_calls = plan.n_calls;
  out.bytes = plan.bytes_total;
  out.blocks_sent = to_send;
  out.blocks_reused = first;
  out.dst_addrs = dst_addrs;

  p.tags.reserve(n);
  for (const auto& a : spec.src_addrs) p.tags.push_back(src.tag(a));
  p.spec = std::move(spec);
  TransferOutcome result = out;
  pending_.emplace(id, std::move(p));
  return result;
}

TransferOutcome TransferEngine::complete(std::uint64_t id, MemPool& dst) {
  auto it = pending_.find(id);
  if (it == pending_.end()) throw Error(ErrorCode::kUnknownId, fmt::format("transfer {}", id));
  Pending p = std::move(it->second);
  pending_.erase(it);
  TransferOutcome& out = p.outcome;
  const auto& addrs = out.dst_addrs;
  for (std::size_t i = p.reused.size(); i < addrs.size(); ++i) dst.set_tag(addrs[i], p.tags[i]);
  dst.adopt(p.allocated);
  dst.advance_clock(out.end);

  if (p.spec.flags.insert_at_receiver) {
    const auto& tokens = p.spec.tokens;
    if (tokens_to_blocks(tokens.size(), block_) != addrs.size()) {
      out.ok = false;
      out.error = ErrorCode::kAddrCountMismatch;
      out.message = fmt::format("{} tokens do not fit {} blocks", tokens.size(), addrs.size());
      dst.release(addrs);
      out.dst_addrs.clear();
      return out;
    }
    const std::size_t full = full_blocks(tokens.size(), block_);
    out.duplicates = dst.insert(tokens, std::span<const BlockAddr>(addrs).first(full)).duplicates;
  }
  records_.push_back({id, p.spec.payload.request_id, p.spec.mode, out.n_calls, out.bytes, out.start, out.end,
                      p.spec.src, p.spec.dst, p.spec.purpose});
  return out;
}

void TransferEngine::abort(std::uint64_t id, MemPool* dst) {
  auto it = pending_.find(id);
  if (it == pending_.end()) return;
  if (dst != nullptr) {
    dst->release(it->second.reused);
    dst->release(it->second.allocated);
  }
  pending_.erase(it);
}

SimTime TransferEngine::insert_remote(MemPool& dst, TokenSpan tokens, std::span<const BlockAddr> addrs,
                                      SimTime now) {
  dst.advance_clock(now + network_.message_time());
  dst.insert(tokens, addrs);
  return now + 2 * network_.message_time();
}

SimTime TransferEngine::estimate_fetch(std::size_t n_blocks, Medium src_medium, Medium dst_medium,
                                       const ParallelismConfig& src_par,
                                       const ParallelismConfig& dst_par) const {
  if (n_blocks == 0) return 0.0;
  const SimTime ready = 2 * network_.message_time();
  const TransferPlan plan = plan_block_transfer(n_blocks, fetch_mode(), block_, model_, {}, ready);
  std::optional<Repartition> shards;
  if (!(src_par == dst_par) || src_par.ranks() > 1) shards = repartition(src_par, dst_par, model_.num_layers);
  Link idle;
  const std::vector<BlockAddr> src(n_blocks, BlockAddr{0, src_medium, 0});
  const std::vector<BlockAddr> dst(n_blocks, BlockAddr{0, dst_medium, 0});
  return schedule(idle, plan, 0, src, dst, shards ? &*shards : nullptr, ready, 0, false) +
         network_.message_time();
}

std::vector<std::uint64_t> TransferEngine::in_flight_involving(InstanceId instance) const {
  std::vector<std::uint64_t> out;
  for (const auto& [id, p] : pending_) {
    if (p.spec.src == instance || p.spec.dst == instance) out.push_back(id);
  }
  return out;
}

std::optional<SimTime> TransferEngine::completion_time(std::uint64_t id) const {
  auto it = pending_.find(id);
  if (it == pending_.end()) return std::nullopt;
  return it->second.outcome.end;
}

}  // namespace kvpool
