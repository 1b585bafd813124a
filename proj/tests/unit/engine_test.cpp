// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <deque>
#include <memory>
#include <random>

#include "kvpool/engine/batching.h"
#include "kvpool/engine/cost_model.h"
#include "kvpool/engine/instance.h"
#include "engine_support.h"

namespace kvpool {
namespace {

using testing::colocated_config;
using testing::dram_history;
using testing::iota_tokens;
using testing::make_request;
using testing::prefill_finish;
using testing::serve_prefill;


TEST(TimingModel, PrefillCostShape) {
  TimingModel t;
  EXPECT_EQ(t.prefill_cost(0, 500), 0.0);
  for (std::uint64_t ctx : {0u, 100u, 4000u}) {
    for (std::uint64_t n = 1; n < 4096; n *= 2) EXPECT_LT(t.prefill_cost(n, ctx), t.prefill_cost(n + 1, ctx));
  }
  const auto layers = TimingModel::layer_finish_times(1.0, 4.0, 4);
  EXPECT_DOUBLE_EQ(layers.front(), 2.0);
  EXPECT_DOUBLE_EQ(layers.back(), 5.0);
}

TEST(Batching, FifoFill) {
  std::vector<std::unique_ptr<RequestState>> owned;
  std::deque<RequestState*> q;
  EXPECT_TRUE(admit_batch(q, 250, 16).empty());
  for (int i = 0; i < 3; ++i) {
    owned.push_back(make_request(i, iota_tokens(100)));
    q.push_back(owned.back().get());
  }
  auto batch = admit_batch(q, 250, 16);
  ASSERT_EQ(batch.size(), 2u);
  EXPECT_EQ(batch[0]->request.id, 0u);
  EXPECT_EQ(batch[1]->request.id, 1u);
  EXPECT_EQ(q.size(), 1u);

  owned.push_back(make_request(9, iota_tokens(1000)));
  q.push_front(owned.back().get());
  batch = admit_batch(q, 250, 16);
  ASSERT_EQ(batch.size(), 1u);
  EXPECT_EQ(batch[0]->request.id, 9u);

  for (int i = 0; i < 5; ++i) q.push_back(owned[0].get());
  EXPECT_EQ(admit_batch(q, 100000, 3).size(), 3u);
}

TEST(CostModel, TrivialDecisions) {
  CostModel m{TimingModel{}};
  EXPECT_EQ(m.should_reuse(1024, {0, 0.0}), ReuseDecision::kRecompute);
  EXPECT_EQ(m.should_reuse(1024, {16, 0.0}), ReuseDecision::kReuse);
  std::vector<ReuseCandidate> batch{{1024, {{0, 0.0}}}, {512, {{0, 0.0}, {256, 0.0}}}};
  const auto d = should_reuse_cache(m, batch);
  EXPECT_EQ(d[0], ReuseDecision::kRecompute);
  EXPECT_EQ(d[1], ReuseDecision::kReuse);
}

// Independent restatement of the batch time for the oracle.
double oracle_batch_time(const TimingParams& t, const std::vector<ReuseCandidate>& b,
                         const std::vector<std::size_t>& pick) {
  double fresh = 0, reused = 0, move = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    fresh += static_cast<double>(b[i].prompt_tokens - b[i].options[pick[i]].tokens);
    reused += static_cast<double>(b[i].options[pick[i]].tokens);
    move += b[i].options[pick[i]].move_time;
  }
  return move + t.prefill_alpha * fresh + t.prefill_gamma * fresh * reused;
}

TEST(CostModel, PlanIsLocallyOptimalAndNeverWorse) {
  const TimingParams tp;
  CostModel m{TimingModel{tp}};
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<ReuseCandidate> batch(1 + rng() % 5);
    for (auto& c : batch) {
      c.prompt_tokens = 16 + rng() % 2048;
      c.options.push_back({0, 0.0});
      std::uint64_t prev = 0;
      for (int o = 0, k = static_cast<int>(rng() % 4); o < k; ++o) {
        const std::uint64_t room = (c.prompt_tokens - 1) / 16;
        if (prev / 16 >= room) break;
        prev += 16 * (1 + rng() % (room - prev / 16));
        c.options.push_back({prev, (rng() % 1000) * 1e-5});
      }
    }
    const auto plan = m.plan(batch);
    EXPECT_NEAR(plan.total_time, oracle_batch_time(tp, batch, plan.chosen), 1e-12);
    std::vector<std::size_t> none(batch.size(), 0);
    EXPECT_LE(plan.total_time, oracle_batch_time(tp, batch, none));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t o = 0; o < batch[i].options.size(); ++o) {
        auto alt = plan.chosen;
        alt[i] = o;
        EXPECT_GE(oracle_batch_time(tp, batch, alt), plan.total_time - 1e-15);
      }
    }
  }
}

TEST(CostModel, DramThresholdMatchesTwoPathOracle) {
  const SimConfig c = colocated_config(256, 256);
  const TokenList prompt = iota_tokens(1024);
  std::optional<double> first_reuse;
  bool seen_recompute = false;
  for (std::size_t blocks = 1; blocks < 64; ++blocks) {
    const std::size_t cached = blocks * 16;
    ReuseDecision d{};
    prefill_finish(c, prompt, cached, ReusePolicy::kCostModel, &d);
    const SimTime reuse = prefill_finish(c, prompt, cached, ReusePolicy::kAlways);
    const SimTime recompute = prefill_finish(c, prompt, cached, ReusePolicy::kNever);
    EXPECT_EQ(d == ReuseDecision::kReuse, reuse < recompute) << cached;
    if (d == ReuseDecision::kReuse && !first_reuse) first_reuse = static_cast<double>(cached) / 1024.0;
    if (d == ReuseDecision::kRecompute) {
      seen_recompute = true;
      EXPECT_FALSE(first_reuse) << "decision is not a threshold at " << cached;
    }
  }
  ASSERT_TRUE(first_reuse);
  EXPECT_TRUE(seen_recompute);
  EXPECT_GT(*first_reuse, 0.0);
  EXPECT_LT(*first_reuse, 1.0);
}

TEST(Instance, CachedPromptComputesOnlyTrailingPartialBlock) {
  const SimConfig c = colocated_config();
  Instance inst(c.cluster.instances[0], c, colocated_capabilities(true));
  auto a = make_request(1, iota_tokens(100));
  auto b = make_request(2, iota_tokens(100));
  auto first = serve_prefill(inst, *a);
  EXPECT_EQ(first.computed_tokens, 100u);
  inst.release(*a);
  auto second = serve_prefill(inst, *b, 1.0);
  EXPECT_EQ(second.computed_tokens, 4u);
  EXPECT_EQ(b->tokens_reused, 96u);
  EXPECT_EQ(b->decision, ReuseDecision::kReuse);
  inst.release(*b);

  // A block-aligned prompt still computes its last block.
  auto d = make_request(3, iota_tokens(96));
  auto third = serve_prefill(inst, *d, 2.0);
  EXPECT_EQ(third.computed_tokens, 16u);
  inst.release(*d);
  inst.pool().check_invariants();
}

TEST(Instance, NoCachingRecomputesAndRestoresOccupancy) {
  const SimConfig c = colocated_config();
  Instance inst(c.cluster.instances[0], c, capabilities(CachingDesign::kPdBasic));
  const auto before = inst.pool().free_blocks(Medium::kHbm);
  for (RequestId id = 1; id <= 2; ++id) {
    auto r = make_request(id, iota_tokens(100), 40);
    auto batch = serve_prefill(inst, *r);
    EXPECT_EQ(batch.computed_tokens, 100u);
    inst.retire(*r);
    EXPECT_EQ(inst.pool().free_blocks(Medium::kHbm), before);
  }
  EXPECT_EQ(inst.pool().indexed_blocks(), 0u);
}

TEST(Instance, DecodeAllocatesOneBlockPerBlockOfTokens) {
  const SimConfig c = colocated_config();
  Instance inst(c.cluster.instances[0], c, colocated_capabilities(true));
  auto r = make_request(1, iota_tokens(30), 20);
  serve_prefill(inst, *r);
  r->advance(Phase::kDecoding);
  inst.add_decoding(r.get());
  EXPECT_EQ(r->kv_blocks.size(), 2u);
  SimTime now = 1.0;
  std::vector<RequestState*> finished;
  int steps = 0;
  while (finished.empty()) {
    const auto step = inst.start_decode_step(now);
    EXPECT_EQ(r->kv_blocks.size(), tokens_to_blocks(r->kv_tokens() + 1, c.block));
    EXPECT_NEAR(step.finish - now, TimingModel(c.engine.timing).decode_step_cost(1), 1e-12);
    now = step.finish;
    finished = inst.complete_decode_step(step, now);
    ++steps;
  }
  EXPECT_EQ(steps, 19);
  EXPECT_EQ(r->kv_tokens(), 30u + 19u);
  EXPECT_EQ(r->kv_blocks.size(), 4u);
  inst.retire(*r);
  // Prompt plus generated tokens are indexed: 49 tokens, 3 full blocks.
  EXPECT_EQ(inst.pool().indexed_blocks(), 3u);
  const auto seq = r->sequence();
  EXPECT_EQ(inst.pool().peek(seq).matched_tokens, 48u);
  inst.pool().check_invariants();
}

TEST(Instance, DecodeOutOfMemoryAborts) {
  const SimConfig c = colocated_config(2);
  Instance inst(c.cluster.instances[0], c, colocated_capabilities(false));
  auto r = make_request(1, iota_tokens(32), 5);
  serve_prefill(inst, *r);
  r->advance(Phase::kDecoding);
  inst.add_decoding(r.get());
  const auto step = inst.start_decode_step(1.0);
  ASSERT_EQ(step.aborted.size(), 1u);
  EXPECT_EQ(r->failure, "capacity-abort");
  EXPECT_TRUE(inst.decoding().empty());
  EXPECT_EQ(inst.pool().free_blocks(Medium::kHbm), 2u);
}

TEST(Instance, PrefillOutOfMemoryDefersInOrder) {
  const SimConfig c = colocated_config(8);
  Instance inst(c.cluster.instances[0], c, colocated_capabilities(false));
  auto a = make_request(1, iota_tokens(100));  // 7 blocks
  auto b = make_request(2, iota_tokens(100, 5000));
  auto d = make_request(3, iota_tokens(10, 7000));
  inst.enqueue(a.get());
  inst.enqueue(b.get());
  inst.enqueue(d.get());
  const auto batch = inst.run_prefill(0.0, {});
  ASSERT_EQ(batch.admitted.size(), 1u);
  ASSERT_EQ(batch.deferred.size(), 2u);
  ASSERT_EQ(inst.queue().size(), 2u);
  EXPECT_EQ(inst.queue()[0], b.get());
  EXPECT_EQ(inst.queue()[1], d.get());
  EXPECT_EQ(b->phase, Phase::kQueued);
}

TEST(Instance, RemoteHolderExtendsLocalPrefix) {
  SimConfig c = colocated_config();
  InstanceSpec peer_spec = c.cluster.instances[0];
  peer_spec.id = 1;
  peer_spec.name = "c1";
  c.cluster.instances.push_back(peer_spec);
  Instance local(c.cluster.instances[0], c, colocated_capabilities(true));
  Instance peer(c.cluster.instances[1], c, colocated_capabilities(true));
  TransferEngine transfers(c.network, c.model, c.block);

  const TokenList prompt = iota_tokens(1024);
  auto warm = make_request(1, prompt);
  serve_prefill(peer, *warm);
  peer.release(*warm);

  PeerView view;
  view.pool = [&](InstanceId id) -> MemPool* { return id == 1 ? &peer.pool() : nullptr; };
  view.spec = [&](InstanceId id) -> const InstanceSpec* { return &c.cluster.instances[id]; };
  view.transfers = &transfers;

  auto r = make_request(2, prompt);
  r->extra_holders.push_back({1, 0, 1024});
  local.enqueue(r.get());
  const auto batch = local.run_prefill(5.0, view);
  EXPECT_EQ(r->tokens_reused, 1008u);
  EXPECT_EQ(batch.computed_tokens, 16u);
  EXPECT_GT(batch.compute_start, 5.0);
  EXPECT_GT(r->bytes_transferred, 0u);
  ASSERT_EQ(transfers.records().size(), 1u);
  EXPECT_EQ(transfers.records()[0].purpose, "fetch");
  local.pool().check_invariants();
  peer.pool().check_invariants();
}

TEST(RequestState, PhasesMoveForwardOnly) {
  RequestState r;
  r.advance(Phase::kPrefilling);
  r.advance(Phase::kDecoding);
  EXPECT_THROW(r.advance(Phase::kPrefilling), Error);
  r.advance(Phase::kFailed);
  EXPECT_THROW(r.advance(Phase::kFailed), Error);
}

TEST(Design, CapabilityLadderIsMonotone) {
  const CachingDesign ladder[] = {CachingDesign::kPdBasic, CachingDesign::kPdCaching1, CachingDesign::kPdCaching2,
                                  CachingDesign::kPdCaching3};
  auto count = [](const DesignCaps& d) {
    return int(d.prefill_insert) + int(d.insert_on_transfer) + int(d.decode_insert) + int(d.return_to_prefill);
  };
  for (int i = 1; i < 4; ++i) EXPECT_GT(count(capabilities(ladder[i])), count(capabilities(ladder[i - 1])));
  EXPECT_FALSE(capabilities(CachingDesign::kPdCaching1).decode_insert);
  EXPECT_TRUE(capabilities(CachingDesign::kPdCaching2).insert_on_transfer);
}

}  // namespace
}  // namespace kvpool
