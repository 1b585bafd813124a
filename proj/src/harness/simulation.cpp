// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/harness/simulation.h"

#include <fmt/format.h>

#include <algorithm>

#include "kvpool/core/error.h"

namespace kvpool {

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kArrival:
      return "arrival";
    case EventKind::kPrefillDone:
      return "prefill-done";
    case EventKind::kTransferChunkDone:
      return "transfer-done";
    case EventKind::kDecodeStep:
      return "decode-step";
    case EventKind::kResponseDone:
      return "response-done";
    case EventKind::kHeartbeat:
      return "heartbeat";
    case EventKind::kFailureInject:
      return "failure-inject";
    case EventKind::kRetry:
      return "retry";
  }
  return "unknown";
}

Simulation::Simulation(SimConfig config) : Simulation(config, make_workload(config)) {}

Simulation::Simulation(SimConfig config, Workload workload)
    : config_(std::move(config)),
      workload_(std::move(workload)),
      transfers_(config_.network, config_.model, config_.block),
      scheduler_(config_.scheduler, config_.block.block_size),
      cluster_(config_.cluster.heartbeat_interval, config_.cluster.failure_timeout) {
  validate_config(config_);
  for (const auto& spec : config_.cluster.instances) {
    const DesignCaps caps = spec.kind == InstanceKind::kColocated ? colocated_capabilities(spec.caching_enabled)
                                                                  : capabilities(config_.cluster.design);
    instances_.push_back(std::make_unique<Instance>(spec, config_, caps));
    names_.push_back(spec.name);
    cluster_.register_instance(spec, 0.0);
    disaggregated_ = disaggregated_ || spec.kind != InstanceKind::kColocated;
  }
  retry_pending_.assign(instances_.size(), false);
  load_.assign(instances_.size(), 0);

  // Requests are stored by id; ids follow planned arrival order.
  const std::size_t n = workload_.request_count();
  requests_.resize(n);
  session_of_.assign(n, 0);
  first_request_.assign(workload_.sessions.size(), 0);
  charges_.resize(n);
  for (std::size_t s = 0; s < workload_.sessions.size(); ++s) {
    const auto& session = workload_.sessions[s];
    for (std::size_t k = 0; k < session.turns.size(); ++k) {
      const Request& req = session.turns[k];
      if (req.id >= n || requests_[req.id].request.gen_len != 1 || !requests_[req.id].request.prompt.empty()) {
        throw Error(ErrorCode::kConfigError, fmt::format("workload request id {} is not unique", req.id));
      }
      requests_[req.id].request = req;
      session_of_[req.id] = s;
      if (k == 0) first_request_[s] = req.id;
    }
    events_.push(session.turns.front().arrival_time, EventKind::kArrival, session.turns.front().id);
  }
  pending_ = n;
  for (const auto& f : config_.cluster.failures) {
    events_.push(f.time, EventKind::kFailureInject, instance_id(f.instance));
  }
  events_.push(config_.cluster.heartbeat_interval, EventKind::kHeartbeat, 0);
}

Simulation::~Simulation() = default;

InstanceId Simulation::instance_id(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return static_cast<InstanceId>(i);
  }
  throw Error(ErrorCode::kUnknownId, "instance " + name);
}

bool Simulation::step() {
  if (events_.empty()) {
    if (pending_ > 0) {
      throw Error(ErrorCode::kDeadlockDetected,
                  fmt::format("event queue empty at t={:.6f} with {} requests pending", now_, pending_));
    }
    return false;
  }
  const SimEvent e = events_.pop();
  now_ = std::max(now_, e.time);
  handle(e);
  return true;
}

void Simulation::run_until(SimTime t) {
  while (!events_.empty() && events_.top().time < t) step();
}

MetricsReport Simulation::run() {
  while (step()) {
  }
  return report();
}

void Simulation::handle(const SimEvent& e) {
  switch (e.kind) {
    case EventKind::kArrival:
      on_arrival(e.subject);
      break;
    case EventKind::kPrefillDone:
      on_prefill_done(static_cast<InstanceId>(e.subject), e.aux);
      break;
    case EventKind::kTransferChunkDone:
      on_transfer_done(e.subject);
      break;
    case EventKind::kDecodeStep:
      on_decode_step(static_cast<InstanceId>(e.subject));
      break;
    case EventKind::kResponseDone:
      on_response(e.subject);
      break;
    case EventKind::kHeartbeat:
      on_heartbeat();
      break;
    case EventKind::kFailureInject:
      inject_failure(static_cast<InstanceId>(e.subject));
      break;
    case EventKind::kRetry:
      on_retry(static_cast<InstanceId>(e.subject), e.aux);
      break;
  }
}

ClusterSnapshot Simulation::snapshot() const {
  ClusterSnapshot s;
  for (const auto& inst : instances_) {
    s.instances.push_back({inst->id(), inst->kind(), cluster_.routable(inst->id()), load_[inst->id()]});
  }
  return s;
}

void Simulation::charge(std::size_t req, InstanceId inst, std::uint64_t tokens) {
  charges_[req][inst] += tokens;
  load_[inst] += tokens;
}

void Simulation::discharge(std::size_t req, InstanceId inst) {
  auto it = charges_[req].find(inst);
  if (it == charges_[req].end()) return;
  load_[inst] -= it->second;
  charges_[req].erase(it);
}

void Simulation::on_arrival(std::size_t req) {
  RequestState& r = requests_[req];
  r.arrival = now_;
  RoutingDecision d;
  try {
    d = scheduler_.route(r.request, snapshot(), now_);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kNoLiveInstance) throw;
    fail_request(req, "no-live-instance");
    return;
  }
  if (cluster_.member(d.chosen).status == InstanceStatus::kFailed ||
      (d.decode != kNoInstance && cluster_.member(d.decode).status == InstanceStatus::kFailed)) {
    ++routes_to_failed_;
  }
  RoutingRecord rec;
  rec.request_id = r.request.id;
  rec.chosen = d.decode == kNoInstance ? names_[d.chosen] : names_[d.chosen] + "/" + names_[d.decode];
  rec.matched_len = d.matched_len;
  rec.alternatives = d.alternatives;
  routing_.push_back(std::move(rec));

  r.prefill_instance = d.chosen;
  r.decode_instance = d.decode;
  r.extra_holders = d.extra_holders;
  const std::uint64_t p = r.request.prompt.size();
  if (d.decode == kNoInstance) {
    charge(req, d.chosen, p + r.request.gen_len);
  } else {
    charge(req, d.chosen, p);
    charge(req, d.decode, p + r.request.gen_len);
  }
  instances_[d.chosen]->enqueue(&r);
  kick(d.chosen);
}

void Simulation::kick(InstanceId id) {
  Instance& inst = *instances_[id];
  if (!running(id) || inst.in_iteration()) return;
  if (inst.does_prefill() && !inst.queue().empty()) start_prefill(inst);
  while (!inst.in_iteration() && inst.does_decode() && !inst.decoding().empty()) {
    DecodeStep step = inst.start_decode_step(now_);
    for (RequestState* r : step.aborted) fail_request(index_of(r), "capacity-abort");
    if (step.stepped.empty()) continue;
    inst.set_in_iteration(true);
    events_.push(step.finish, EventKind::kDecodeStep, id);
    steps_[id] = std::move(step);
  }
}

void Simulation::start_prefill(Instance& inst) {
  PeerView peers;
  peers.pool = [this](InstanceId id) -> MemPool* {
    return id < instances_.size() && running(id) ? &instances_[id]->pool() : nullptr;
  };
  peers.spec = [this](InstanceId id) -> const InstanceSpec* { return &instances_[id]->spec(); };
  peers.transfers = &transfers_;

  while (!inst.queue().empty()) {
    PrefillBatch batch = inst.run_prefill(now_, peers);
    if (batch.admitted.empty()) {
      // Nothing holds memory here that could be given back: the head request
      // can never fit.
      const bool stuck = inst.holders() == 0 && inst.decoding().empty();
      if (stuck) {
        RequestState* head = inst.queue().front();
        fail_request(index_of(head), "capacity-abort");
        continue;
      }
      if (!retry_pending_[inst.id()]) {
        retry_pending_[inst.id()] = true;
        events_.push(now_ + config_.engine.retry_backoff, EventKind::kRetry, inst.id(), 0);
      }
      return;
    }
    inst.set_in_iteration(true);
    const std::uint64_t bid = next_batch_++;
    if (inst.kind() == InstanceKind::kPrefillOnly && config_.cluster.transfer_mode == TransferMode::kByLayer) {
      // Layer-wise transfer overlaps with the prefill itself.
      for (RequestState* r : batch.admitted) {
        if (r->request.gen_len > 1) begin_prefill_transfer(index_of(r), &batch.layer_finish);
      }
    }
    events_.push(batch.finish, EventKind::kPrefillDone, inst.id(), bid);
    batches_[bid] = std::move(batch);
    return;
  }
}

bool Simulation::begin_prefill_transfer(std::size_t req, const std::vector<SimTime>* layer_finish) {
  RequestState& r = requests_[req];
  Instance& p = *instances_[r.prefill_instance];
  Instance& d = *instances_[r.decode_instance];
  if (!running(d.id())) {
    fail_request(req, "peer-unreachable");
    return false;
  }
  TransferSpec spec;
  spec.src = p.id();
  spec.dst = d.id();
  spec.src_parallelism = p.spec().parallelism;
  spec.dst_parallelism = d.spec().parallelism;
  spec.src_addrs = r.kv_blocks;
  spec.tokens = r.request.prompt;
  spec.flags.insert_at_receiver = p.caps().insert_on_transfer;
  spec.flags.incremental = p.caps().insert_on_transfer;
  spec.mode = config_.cluster.transfer_mode;
  if (spec.mode == TransferMode::kByLayer) {
    spec.layer_finish_times =
        layer_finish != nullptr ? *layer_finish : std::vector<SimTime>(config_.model.num_layers, now_);
  }
  spec.ready_time = now_;
  spec.payload.request_id = r.request.id;
  spec.payload.prompt = r.request.prompt;
  spec.payload.sampling_params = r.request.sampling_params;
  spec.purpose = "prefill-to-decode";
  TransferOutcome out;
  try {
    out = transfers_.begin(p.pool(), d.pool(), std::move(spec), now_);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kDstOutOfMemory) throw;
    if (d.holders() == 0 && d.decoding().empty()) {
      fail_request(req, "capacity-abort");
    } else {
      events_.push(now_ + config_.engine.retry_backoff, EventKind::kRetry, p.id(), req + 1);
    }
    return false;
  }
  flights_[out.id] = Flight{Flow::kPrefillToDecode, req, p.id(), d.id(), {}, {}};
  r.transfer_id = out.id;
  events_.push(out.end, EventKind::kTransferChunkDone, out.id);
  return true;
}

void Simulation::on_prefill_done(InstanceId id, std::uint64_t bid) {
  auto node = batches_.extract(bid);
  Instance& inst = *instances_[id];
  inst.set_in_iteration(false);
  if (!running(id)) return;
  for (RequestState* r : node.mapped().admitted) {
    if (r->terminal()) continue;
    const std::size_t req = index_of(r);
    r->first_token = now_;
    r->generated = 1;
    inst.index_prompt(*r);
    if (inst.kind() == InstanceKind::kColocated) {
      if (r->request.gen_len == 1) {
        finish_request(req);
      } else {
        r->advance(Phase::kDecoding);
        inst.add_decoding(r);
      }
      continue;
    }
    if (r->request.gen_len == 1) {
      inst.release(*r);
      finish_request(req);
      continue;
    }
    r->advance(Phase::kTransferring);
    if (!r->transfer_id && r->retries < std::numeric_limits<std::uint32_t>::max()) {
      begin_prefill_transfer(req, nullptr);
    }
  }
  kick(id);
}

void Simulation::on_retry(InstanceId id, std::uint64_t aux) {
  if (aux == 0) {
    retry_pending_[id] = false;
    kick(id);
    return;
  }
  const std::size_t req = aux - 1;
  RequestState& r = requests_[req];
  if (r.terminal() || r.transfer_id || !running(id)) return;
  if (r.phase == Phase::kTransferring) begin_prefill_transfer(req, nullptr);
  // Still prefilling: the transfer starts when prefill completes.
}

void Simulation::on_transfer_done(std::uint64_t tid) {
  auto it = flights_.find(tid);
  if (it == flights_.end() || !transfers_.in_flight(tid)) return;
  // A silent peer never finishes; failure handling drops the transfer.
  if (!running(it->second.src) || !running(it->second.dst)) return;
  const Flight f = std::move(it->second);
  flights_.erase(it);
  Instance& src = *instances_[f.src];
  Instance& dst = *instances_[f.dst];
  RequestState& r = requests_[f.request];
  const TransferOutcome out = transfers_.complete(tid, dst.pool());
  r.bytes_transferred += out.bytes;

  if (f.flow == Flow::kDecodeToPrefill) {
    if (out.ok) dst.pool().release(out.dst_addrs);
    src.pool().release(f.src_pins);
    if (out.ok) scheduler_.update_trees(dst.id(), dst.kind(), f.tokens, now_);
    return;
  }
  r.transfer_id.reset();
  src.release(r);
  discharge(f.request, src.id());
  kick(src.id());
  if (!out.ok) {
    fail_request(f.request, "transfer-error");
    return;
  }
  dst.hold(r, out.dst_addrs);
  r.advance(Phase::kDecoding);
  dst.add_decoding(&r);
  kick(dst.id());
}

void Simulation::on_decode_step(InstanceId id) {
  Instance& inst = *instances_[id];
  inst.set_in_iteration(false);
  auto node = steps_.extract(id);
  if (!running(id)) return;
  for (RequestState* r : inst.complete_decode_step(node.mapped(), now_)) finish_request(index_of(r));
  kick(id);
}

void Simulation::finish_request(std::size_t req) {
  RequestState& r = requests_[req];
  r.finished = now_;
  const TokenList seq = r.sequence();
  if (r.decode_instance == kNoInstance) {
    Instance& inst = *instances_[r.prefill_instance];
    inst.retire(r);
    if (inst.caps().decode_insert) {
      scheduler_.update_trees(inst.id(), inst.kind(), seq, now_);
    } else if (inst.caps().prefill_insert) {
      scheduler_.update_trees(inst.id(), inst.kind(), r.request.prompt, now_);
    }
    discharge(req, inst.id());
  } else {
    Instance& p = *instances_[r.prefill_instance];
    if (p.caps().prefill_insert) scheduler_.update_trees(p.id(), p.kind(), r.request.prompt, now_);
    if (r.request.gen_len > 1) {
      Instance& d = *instances_[r.decode_instance];
      const std::size_t full = full_blocks(seq.size(), config_.block);
      std::vector<BlockAddr> pins;
      if (d.caps().return_to_prefill && full > 0 && running(p.id())) {
        pins.assign(r.kv_blocks.begin(), r.kv_blocks.begin() + static_cast<std::ptrdiff_t>(full));
        d.pool().pin(pins);
      }
      d.retire(r);
      if (d.caps().decode_insert) scheduler_.update_trees(d.id(), d.kind(), seq, now_);
      discharge(req, d.id());
      if (!pins.empty()) {
        TransferSpec spec;
        spec.src = d.id();
        spec.dst = p.id();
        spec.src_parallelism = d.spec().parallelism;
        spec.dst_parallelism = p.spec().parallelism;
        spec.src_addrs = pins;
        spec.tokens.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(full * config_.block.block_size));
        spec.flags.insert_at_receiver = true;
        spec.flags.incremental = true;
        spec.mode = transfers_.fetch_mode();
        spec.ready_time = now_;
        spec.payload.request_id = r.request.id;
        spec.purpose = "decode-to-prefill";
        TokenList tokens = spec.tokens;
        try {
          const auto out = transfers_.begin(d.pool(), p.pool(), std::move(spec), now_);
          flights_[out.id] = Flight{Flow::kDecodeToPrefill, req, d.id(), p.id(), pins, std::move(tokens)};
          events_.push(out.end, EventKind::kTransferChunkDone, out.id);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kDstOutOfMemory) throw;
          d.pool().release(pins);
        }
      }
    }
  }
  r.advance(Phase::kDone);
  --pending_;
  events_.push(now_, EventKind::kResponseDone, req);
}

void Simulation::fail_request(std::size_t req, const std::string& why) {
  RequestState& r = requests_[req];
  if (r.terminal()) return;
  for (InstanceId id : {r.prefill_instance, r.decode_instance}) {
    if (id == kNoInstance) continue;
    instances_[id]->remove_queued(&r);
    instances_[id]->remove_decoding(&r);
  }
  if (r.transfer_id) {
    const InstanceId dst = r.decode_instance;
    transfers_.abort(*r.transfer_id, running(dst) ? &instances_[dst]->pool() : nullptr);
    flights_.erase(*r.transfer_id);
    r.transfer_id.reset();
  }
  if (!r.kv_blocks.empty()) {
    const bool at_decode = r.phase == Phase::kDecoding && r.decode_instance != kNoInstance;
    const InstanceId holder = at_decode ? r.decode_instance : r.prefill_instance;
    if (running(holder)) {
      instances_[holder]->release(r);
    } else {
      r.kv_blocks.clear();
    }
  }
  for (const auto& [inst, tokens] : std::map<InstanceId, std::uint64_t>(charges_[req])) discharge(req, inst);
  if (r.failure.empty()) r.failure = why;
  r.advance(Phase::kFailed);
  r.finished = now_;
  --pending_;
  events_.push(now_, EventKind::kResponseDone, req);
}

void Simulation::on_response(std::size_t req) {
  const RequestState& r = requests_[req];
  const Session& session = workload_.sessions[session_of_[req]];
  const std::size_t k = r.request.turn_index;
  if (k + 1 >= session.turns.size()) return;
  const Request& next = session.turns[k + 1];
  events_.push(std::max(next.arrival_time, now_ + session.think[k]), EventKind::kArrival, next.id);
}

void Simulation::inject_failure(InstanceId id) {
  if (cluster_.member(id).status == InstanceStatus::kLive) cluster_.crash(id);
}

void Simulation::on_heartbeat() {
  bool silent = false;
  for (const auto& [id, m] : cluster_.members()) {
    if (m.status != InstanceStatus::kLive) continue;
    if (m.silent) {
      silent = true;
    } else {
      cluster_.heartbeat(id, now_);
    }
  }
  for (InstanceId id : cluster_.overdue(now_)) fail_instance(id);
  // Keep ticking while other work is scheduled or a crash awaits detection.
  if (pending_ > 0 && (!events_.empty() || silent)) {
    events_.push(now_ + config_.cluster.heartbeat_interval, EventKind::kHeartbeat, 0);
  }
}

void Simulation::fail_instance(InstanceId id) {
  std::map<InstanceId, MemPool*> pools;
  for (const auto& inst : instances_) {
    if (inst->id() != id && running(inst->id())) pools[inst->id()] = &inst->pool();
  }
  CleanupReport report = handle_failure(cluster_, id, now_, pools, transfers_, scheduler_);
  for (const auto tid : report.aborted_transfers) {
    auto it = flights_.find(tid);
    if (it == flights_.end()) continue;
    const Flight f = it->second;
    flights_.erase(it);
    if (f.flow == Flow::kDecodeToPrefill) {
      if (running(f.src)) instances_[f.src]->pool().release(f.src_pins);
    } else {
      requests_[f.request].transfer_id.reset();
    }
  }
  for (std::size_t i = 0; i < requests_.size(); ++i) {
    const RequestState& r = requests_[i];
    if (r.terminal() || r.prefill_instance == kNoInstance) continue;
    const bool at_prefill = r.prefill_instance == id &&
                            (r.decode_instance == kNoInstance || r.phase != Phase::kDecoding);
    if (at_prefill || r.decode_instance == id) fail_request(i, "instance-failure");
  }
  bool ok = true;
  for (const auto& [pid, pool] : pools) {
    ok = ok && allocation_conserved(*pool, cluster_);
    try {
      pool->check_invariants();
    } catch (const Error&) {
      ok = false;
    }
  }
  cleanups_.push_back(std::move(report));
  conserved_.push_back(ok);
}

RequestRecord Simulation::record_of(const RequestState& r) const {
  RequestRecord rec;
  rec.request_id = r.request.id;
  rec.session_id = r.request.session_id;
  rec.turn = r.request.turn_index;
  rec.arrival = r.arrival;
  rec.prompt_tokens = r.request.prompt.size();
  rec.gen_len = r.request.gen_len;
  rec.prefill_tokens_computed = r.prefill_tokens_computed;
  rec.tokens_reused = r.tokens_reused;
  rec.bytes_transferred = r.bytes_transferred;
  rec.decision = std::string(to_string(r.decision));
  rec.matched_tokens = r.matched_prefix.matched_tokens;
  rec.prefill_instance = r.prefill_instance == kNoInstance ? "" : names_[r.prefill_instance];
  rec.decode_instance = r.decode_instance == kNoInstance ? "" : names_[r.decode_instance];
  if (r.phase == Phase::kDone) {
    rec.status = "done";
    rec.ttft = r.first_token - r.arrival;
    rec.jct = r.finished - r.arrival;
    if (r.request.gen_len > 1) {
      rec.tpot = (*rec.jct - *rec.ttft) / (r.request.gen_len - 1);
      rec.ttst = r.second_token - r.arrival;
    }
  } else {
    rec.status = r.phase == Phase::kFailed ? r.failure : std::string(to_string(r.phase));
  }
  return rec;
}

MetricsReport Simulation::report() const {
  std::vector<RequestRecord> records;
  records.reserve(requests_.size());
  for (const auto& r : requests_) records.push_back(record_of(r));
  // Makespan ends at the last terminal request, not at trailing heartbeats.
  SimTime makespan = 0.0;
  for (const auto& r : requests_) makespan = std::max(makespan, r.finished);
  return compute_metrics(std::move(records), transfers_.records(), makespan);
}

void Simulation::write_requests_csv(std::ostream& out) const { kvpool::write_requests_csv(out, report().records); }

void Simulation::write_transfers_csv(std::ostream& out) const {
  kvpool::write_transfers_csv(out, transfers_.records(), names_);
}

void Simulation::write_routing_csv(std::ostream& out) const {
  out << "request_id,policy,chosen_instance,matched_len,alternatives\n";
  for (const auto& r : routing_) {
    std::string alts;
    for (const auto& c : r.alternatives) {
      if (!alts.empty()) alts += ';';
      alts += fmt::format("{}:{}:{}", names_[c.id], c.matched, c.load);
    }
    out << fmt::format("{},{},{},{},{}\n", r.request_id, to_string(scheduler_.policy()), r.chosen, r.matched_len,
                       alts);
  }
}

void Simulation::write_summary_csv(std::ostream& out) const { kvpool::write_summary_csv(out, report()); }

MetricsReport run_simulation(const SimConfig& config) {
  Simulation sim(config);
  return sim.run();
}

}  // namespace kvpool
