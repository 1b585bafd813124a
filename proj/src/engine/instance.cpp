// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/engine/instance.h"

#include <fmt/format.h>

#include <algorithm>

#include "kvpool/core/error.h"
#include "kvpool/engine/batching.h"

namespace kvpool {

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::kQueued:
      return "queued";
    case Phase::kPrefilling:
      return "prefilling";
    case Phase::kTransferring:
      return "transferring";
    case Phase::kDecoding:
      return "decoding";
    case Phase::kDone:
      return "done";
    case Phase::kFailed:
      return "failed";
  }
  return "unknown";
}

TokenList RequestState::sequence() const {
  TokenList seq = request.prompt;
  const std::size_t produced = generated > 0 ? generated - 1 : 0;
  seq.insert(seq.end(), request.output.begin(),
             request.output.begin() + static_cast<std::ptrdiff_t>(std::min(produced, request.output.size())));
  return seq;
}

std::size_t RequestState::kv_tokens() const {
  return request.prompt.size() + (generated > 0 ? generated - 1 : 0);
}

void RequestState::advance(Phase next) {
  const bool ok = next == Phase::kFailed ? !terminal() : static_cast<int>(next) > static_cast<int>(phase);
  if (!ok) {
    throw Error(ErrorCode::kPrecondition, fmt::format("request {}: {} -> {}", request.id, to_string(phase),
                                                      to_string(next)));
  }
  phase = next;
}

Instance::Instance(const InstanceSpec& spec, const SimConfig& config, DesignCaps caps)
    : spec_(spec),
      model_(config.model),
      block_(config.block),
      engine_(config.engine),
      caps_(caps),
      pool_(spec.id, spec.hbm_capacity_blocks, spec.dram_capacity_blocks, config.block),
      cost_(TimingModel(config.engine.timing)) {}

void Instance::add_decoding(RequestState* r) { decoding_.push_back(r); }

void Instance::remove_decoding(const RequestState* r) { std::erase(decoding_, r); }

void Instance::remove_queued(const RequestState* r) { std::erase(queue_, r); }

bool Instance::make_room(std::size_t n, SimTime& elapsed) {
  std::size_t free = pool_.free_blocks(Medium::kHbm);
  if (free >= n) return true;
  if (engine_.swap_to_dram && pool_.capacity(Medium::kDram) > 0) {
    const auto moved = pool_.swap_out(n - free);
    elapsed += cost_.timing().swap_cost(moved.size());
    free = pool_.free_blocks(Medium::kHbm);
  }
  if (free < n) pool_.evict(n - free, Medium::kHbm);
  return pool_.free_blocks(Medium::kHbm) >= n;
}

void Instance::check_tags(const RequestState& r, std::size_t reused_blocks) const {
  const auto expected = block_tags(r.request.prompt, block_.block_size, reused_blocks);
  for (std::size_t i = 0; i < reused_blocks; ++i) {
    if (pool_.tag(r.kv_blocks[i]) != expected[i]) {
      throw Error(ErrorCode::kPrecondition,
                  fmt::format("request {}: reused block {} holds other content", r.request.id, i));
    }
  }
}

namespace {

struct RemoteSegment {
  InstanceId from = kNoInstance;
  std::vector<BlockAddr> addrs;
};

struct Prepared {
  RequestState* r = nullptr;
  MatchResult local;
  std::size_t local_blocks = 0;  // usable local blocks after the cap
  std::size_t hbm_run = 0;       // leading local blocks already in HBM
  std::vector<RemoteSegment> remote;
  std::size_t remote_blocks = 0;
  std::vector<std::size_t> option_blocks;  // reused blocks per cost-model option
};

std::size_t dram_count(std::span<const BlockAddr> addrs) {
  return static_cast<std::size_t>(
      std::count_if(addrs.begin(), addrs.end(), [](const BlockAddr& a) { return a.medium == Medium::kDram; }));
}

}  // namespace

PrefillBatch Instance::run_prefill(SimTime now, const PeerView& peers) {
  PrefillBatch out;
  out.start = now;
  pool_.advance_clock(now);
  auto batch = admit_batch(queue_, engine_.max_batch_tokens, engine_.max_batch_size);
  const std::uint32_t B = block_.block_size;

  // Reuse options per request: nothing, the local HBM run, everything local,
  // everything local plus contiguous remote extensions.
  std::vector<Prepared> prep;
  std::vector<ReuseCandidate> cands;
  for (RequestState* r : batch) {
    Prepared p;
    p.r = r;
    const auto& prompt = r->request.prompt;
    // At least one token must be computed to emit the first output token.
    const std::size_t cap = (prompt.size() - 1) / B;
    p.local = pool_.match(prompt);
    p.local_blocks = std::min(p.local.addrs.size(), cap);
    while (p.hbm_run < p.local_blocks && p.local.addrs[p.hbm_run].medium == Medium::kHbm) ++p.hbm_run;

    std::size_t cursor = p.local_blocks;
    for (const auto& h : r->extra_holders) {
      if (h.instance == id() || h.begin / B > cursor) continue;
      MemPool* peer = peers.pool ? peers.pool(h.instance) : nullptr;
      if (peer == nullptr) continue;
      const auto m = peer->peek(prompt);
      const std::size_t end = std::min({m.addrs.size(), h.end / B, cap});
      if (end <= cursor) continue;
      RemoteSegment seg{h.instance, {m.addrs.begin() + static_cast<std::ptrdiff_t>(cursor),
                                     m.addrs.begin() + static_cast<std::ptrdiff_t>(end)}};
      p.remote_blocks += seg.addrs.size();
      p.remote.push_back(std::move(seg));
      cursor = end;
    }

    ReuseCandidate c;
    c.prompt_tokens = prompt.size();
    c.options.push_back({0, 0.0});
    p.option_blocks.push_back(0);
    if (p.hbm_run > 0) {
      c.options.push_back({p.hbm_run * B, 0.0});
      p.option_blocks.push_back(p.hbm_run);
    }
    const SimTime swap_in =
        cost_.timing().swap_cost(dram_count(std::span(p.local.addrs).first(p.local_blocks)));
    if (p.local_blocks > p.hbm_run) {
      c.options.push_back({p.local_blocks * B, swap_in});
      p.option_blocks.push_back(p.local_blocks);
    }
    if (p.remote_blocks > 0 && peers.transfers != nullptr) {
      SimTime fetch = swap_in;
      for (const auto& seg : p.remote) {
        const InstanceSpec* from = peers.spec(seg.from);
        const Medium slowest = dram_count(seg.addrs) > 0 ? Medium::kDram : Medium::kHbm;
        fetch += peers.transfers->estimate_fetch(seg.addrs.size(), slowest, Medium::kHbm, from->parallelism,
                                                 spec_.parallelism);
      }
      c.options.push_back({(p.local_blocks + p.remote_blocks) * B, fetch});
      p.option_blocks.push_back(p.local_blocks + p.remote_blocks);
    }
    prep.push_back(std::move(p));
    cands.push_back(std::move(c));
  }

  std::vector<std::size_t> chosen(cands.size(), 0);
  if (engine_.reuse_policy == ReusePolicy::kCostModel) {
    chosen = cost_.plan(cands).chosen;
  } else if (engine_.reuse_policy == ReusePolicy::kAlways) {
    for (std::size_t i = 0; i < cands.size(); ++i) chosen[i] = cands[i].options.size() - 1;
  }

  // Realize the plan in FIFO order. Once a request cannot get memory, it and
  // everything behind it go back to the queue front.
  SimTime cursor = now;
  SimTime elapsed = 0.0;
  for (std::size_t i = 0; i < prep.size(); ++i) {
    Prepared& p = prep[i];
    RequestState& r = *p.r;
    if (!out.deferred.empty()) {
      out.deferred.push_back(&r);
      continue;
    }
    const std::size_t reuse = p.option_blocks[chosen[i]];
    const std::size_t local_k = std::min(reuse, p.local_blocks);
    const std::size_t remote_k = reuse - local_k;
    std::vector<BlockAddr> local(p.local.addrs.begin(), p.local.addrs.begin() + static_cast<std::ptrdiff_t>(local_k));
    const std::size_t n_blocks = tokens_to_blocks(r.request.prompt.size(), block_);
    const std::size_t dram_k = dram_count(local);

    pool_.pin(local);
    if (!make_room(n_blocks - local_k + dram_k, elapsed)) {
      pool_.release(local);
      out.deferred.push_back(&r);
      continue;
    }
    // Swap DRAM-resident reused blocks into HBM; the pin moves with them.
    std::vector<BlockAddr> dram_src;
    for (const auto& a : local) {
      if (a.medium == Medium::kDram) dram_src.push_back(a);
    }
    if (!dram_src.empty()) {
      const auto moved = pool_.swap_in(dram_src);
      std::size_t j = 0;
      for (auto& a : local) {
        if (a.medium == Medium::kDram) a = moved[j++];
      }
      elapsed += cost_.timing().swap_cost(dram_src.size());
    }
    cursor = now + elapsed;

    r.kv_blocks = std::move(local);
    // Remote extensions are fetched one holder after another, in token order.
    std::size_t fetched = 0;
    for (const auto& seg : p.remote) {
      if (fetched >= remote_k) break;
      const std::size_t take = std::min(seg.addrs.size(), remote_k - fetched);
      MemPool* peer = peers.pool(seg.from);
      TransferSpec spec;
      spec.src = seg.from;
      spec.dst = id();
      spec.src_parallelism = peers.spec(seg.from)->parallelism;
      spec.dst_parallelism = spec_.parallelism;
      spec.src_addrs.assign(seg.addrs.begin(), seg.addrs.begin() + static_cast<std::ptrdiff_t>(take));
      spec.mode = peers.transfers->fetch_mode();
      spec.ready_time = cursor;
      spec.payload.request_id = r.request.id;
      spec.purpose = "fetch";
      const auto begun = peers.transfers->begin(*peer, pool_, std::move(spec), cursor);
      const auto done = peers.transfers->complete(begun.id, pool_);
      r.kv_blocks.insert(r.kv_blocks.end(), done.dst_addrs.begin(), done.dst_addrs.end());
      r.bytes_transferred += done.bytes;
      cursor = std::max(cursor, done.end);
      fetched += take;
    }
    elapsed = cursor - now;

    const std::size_t reused = r.kv_blocks.size();
    const auto fresh = pool_.alloc_mem(n_blocks - reused, AllocType::kHbm, id(), r.request.id);
    const auto tags = block_tags(r.request.prompt, B, n_blocks);
    for (std::size_t b = 0; b < fresh.size(); ++b) pool_.set_tag(fresh[b], tags[reused + b]);
    r.kv_blocks.insert(r.kv_blocks.end(), fresh.begin(), fresh.end());
    check_tags(r, reused);

    r.matched_prefix = std::move(p.local);
    r.tokens_reused = reused * B;
    r.prefill_tokens_computed = r.request.prompt.size() - r.tokens_reused;
    r.decision = reused > 0 ? ReuseDecision::kReuse : ReuseDecision::kRecompute;
    r.advance(Phase::kPrefilling);
    ++holders_;
    out.computed_tokens += r.prefill_tokens_computed;
    out.reused_tokens += r.tokens_reused;
    out.admitted.push_back(&r);
  }
  for (auto it = out.deferred.rbegin(); it != out.deferred.rend(); ++it) {
    ++(*it)->retries;
    queue_.push_front(*it);
  }

  out.compute_start = now + elapsed;
  const SimTime compute =
      out.admitted.empty() ? 0.0 : cost_.timing().prefill_cost(out.computed_tokens, out.reused_tokens);
  out.finish = out.compute_start + compute;
  out.layer_finish = TimingModel::layer_finish_times(out.compute_start, compute, model_.num_layers);
  return out;
}

DecodeStep Instance::start_decode_step(SimTime now) {
  DecodeStep step;
  step.start = now;
  pool_.advance_clock(now);
  const std::size_t n = std::min<std::size_t>(decoding_.size(), engine_.max_decode_batch);
  std::vector<RequestState*> candidates(decoding_.begin(), decoding_.begin() + static_cast<std::ptrdiff_t>(n));
  SimTime swap = 0.0;
  for (RequestState* r : candidates) {
    // This step appends KV for the most recent token.
    const std::size_t need = tokens_to_blocks(r->kv_tokens() + 1, block_);
    bool ok = true;
    while (r->kv_blocks.size() < need) {
      if (!make_room(1, swap)) {
        ok = false;
        break;
      }
      r->kv_blocks.push_back(pool_.alloc_mem(1, AllocType::kHbm, id(), r->request.id).front());
    }
    if (ok) {
      step.stepped.push_back(r);
    } else {
      r->failure = "capacity-abort";
      release(*r);
      remove_decoding(r);
      step.aborted.push_back(r);
    }
  }
  step.finish = now + swap + (step.stepped.empty() ? 0.0 : cost_.timing().decode_step_cost(step.stepped.size()));
  return step;
}

std::vector<RequestState*> Instance::complete_decode_step(const DecodeStep& step, SimTime now) {
  std::vector<RequestState*> finished;
  for (RequestState* r : step.stepped) {
    if (r->terminal() || r->phase != Phase::kDecoding) continue;
    ++r->generated;
    if (r->generated == 2) r->second_token = now;
    if (r->generated >= r->request.gen_len) {
      remove_decoding(r);
      finished.push_back(r);
    }
  }
  return finished;
}

void Instance::index_prompt(RequestState& r) {
  if (!caps_.prefill_insert) return;
  const auto& prompt = r.request.prompt;
  const std::size_t full = full_blocks(prompt.size(), block_);
  pool_.advance_clock(r.first_token);
  pool_.insert(prompt, std::span<const BlockAddr>(r.kv_blocks).first(full));
}

void Instance::retire(RequestState& r) {
  const TokenList seq = r.sequence();
  const std::size_t n = r.kv_blocks.size();
  const auto tags = block_tags(seq, block_.block_size, n);
  for (std::size_t b = 0; b < n; ++b) pool_.set_tag(r.kv_blocks[b], tags[b]);
  if (caps_.decode_insert) {
    const std::size_t full = std::min(full_blocks(seq.size(), block_), n);
    pool_.insert(std::span<const Token>(seq).first(full * block_.block_size),
                 std::span<const BlockAddr>(r.kv_blocks).first(full));
  }
  release(r);
}

void Instance::hold(RequestState& r, std::vector<BlockAddr> blocks) {
  r.kv_blocks = std::move(blocks);
  ++holders_;
}

void Instance::release(RequestState& r) {
  if (r.kv_blocks.empty()) return;
  pool_.release(r.kv_blocks);
  r.kv_blocks.clear();
  if (holders_ > 0) --holders_;
}

}  // namespace kvpool
