// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "kvpool/core/error.h"
#include "kvpool/transfer/repartition.h"
#include "kvpool/transfer/transfer_engine.h"
#include "kvpool/transfer/transfer_plan.h"

namespace kvpool {
namespace {

TokenList iota_tokens(std::size_t n, Token start = 1) {
  TokenList t(n);
  std::iota(t.begin(), t.end(), start);
  return t;
}

TEST(TransferPlanTest, ReferenceInstanceCallCounts) {
  const ModelConfig model;  // 40 layers
  const auto discrete = plan_transfer(2048, TransferMode::kByRequest, {16, Layout::kDiscrete}, model);
  const auto aggregated = plan_transfer(2048, TransferMode::kByRequestAgg, {16, Layout::kAggregated}, model);
  EXPECT_EQ(discrete.n_calls, 10240u);
  EXPECT_EQ(aggregated.n_calls, 128u);
  EXPECT_EQ(discrete.n_calls / aggregated.n_calls, 80u);
  EXPECT_EQ(discrete.bytes_total, aggregated.bytes_total);
  EXPECT_EQ(aggregated.bytes_total, model.kv_bytes(2048));
}

TEST(TransferPlanTest, ByLayerGatesChunksOnLayerFinish) {
  ModelConfig model;
  model.num_layers = 2;
  const std::vector<SimTime> finish{0.5, 0.9};
  const auto plan = plan_transfer(16, TransferMode::kByLayer, {16, Layout::kDiscrete}, model, finish);
  ASSERT_EQ(plan.n_calls, 4u);
  for (std::size_t k = 1; k <= 4; ++k) {
    EXPECT_DOUBLE_EQ(plan.chunks[k - 1].earliest_start, finish[(k + 1) / 2 - 1]);
  }
}

TEST(TransferPlanTest, CallCountsMatchClosedForms) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const std::uint64_t n = std::uniform_int_distribution<std::uint64_t>(0, 4096)(rng);
    const std::uint32_t b = std::uniform_int_distribution<std::uint32_t>(1, 64)(rng);
    ModelConfig model;
    model.num_layers = std::uniform_int_distribution<std::uint32_t>(1, 96)(rng);
    const std::uint64_t blocks = (n + b - 1) / b;
    const std::vector<SimTime> finish(model.num_layers, 1.0);
    EXPECT_EQ(plan_transfer(n, TransferMode::kByRequest, {b, Layout::kDiscrete}, model).n_calls,
              blocks * 2 * model.num_layers);
    EXPECT_EQ(plan_transfer(n, TransferMode::kByLayer, {b, Layout::kDiscrete}, model, finish).n_calls,
              model.num_layers * blocks * 2);
    EXPECT_EQ(plan_transfer(n, TransferMode::kByRequestAgg, {b, Layout::kAggregated}, model).n_calls, blocks);
  }
}

TEST(TransferPlanTest, RejectsUndefinedCombinations) {
  const ModelConfig model;
  try {
    plan_transfer(32, TransferMode::kByRequestAgg, {16, Layout::kDiscrete}, model);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kModeLayoutMismatch);
  }
  const std::vector<SimTime> finish(model.num_layers, 0.0);
  EXPECT_THROW(plan_transfer(32, TransferMode::kByLayer, {16, Layout::kAggregated}, model, finish), Error);
  EXPECT_THROW(plan_transfer(32, TransferMode::kByLayer, {16, Layout::kDiscrete}, model), Error);
}

TEST(RepartitionTest, PiecesPartitionTheCache) {
  for (std::uint32_t layers : {1u, 7u, 40u}) {
    for (std::uint32_t tp_s = 1; tp_s <= 8; ++tp_s) {
      for (std::uint32_t tp_d = 1; tp_d <= 8; ++tp_d) {
        for (std::uint32_t pp_s = 1; pp_s <= std::min(4u, layers); ++pp_s) {
          for (std::uint32_t pp_d = 1; pp_d <= std::min(4u, layers); ++pp_d) {
            const auto r = repartition({tp_s, pp_s}, {tp_d, pp_d}, layers);
            std::vector<int> cover(static_cast<std::size_t>(layers) * r.head_units, 0);
            for (const auto& p : r.pieces) {
              ASSERT_LT(p.src_rank, tp_s * pp_s);
              ASSERT_LT(p.dst_rank, tp_d * pp_d);
              for (auto l = p.layer_begin; l < p.layer_end; ++l) {
                for (auto h = p.head_begin; h < p.head_end; ++h) ++cover[l * r.head_units + h];
              }
            }
            for (int c : cover) ASSERT_EQ(c, 1) << tp_s << "->" << tp_d << " pp " << pp_s << "->" << pp_d;
          }
        }
      }
    }
  }
}

TEST(RepartitionTest, Tp2ToTp4SplitsEachShardInTwo) {
  const auto r = repartition({2, 1}, {4, 1}, 40);
  ASSERT_EQ(r.pieces.size(), 4u);
  for (std::uint32_t src = 0; src < 2; ++src) {
    EXPECT_EQ(std::count_if(r.pieces.begin(), r.pieces.end(), [&](auto& p) { return p.src_rank == src; }), 2);
  }
}

class TransferEngineTest : public ::testing::Test {
 protected:
  BlockConfig block{16, Layout::kAggregated};
  ModelConfig model;
  NetworkParams net;
  MemPool p{0, 256, 0, block};
  MemPool d{1, 256, 64, block};

  std::vector<BlockAddr> make_src(std::size_t n, const TokenList& tokens) {
    auto addrs = p.alloc_mem(n, AllocType::kHbm, 0);
    const auto tags = block_tags(tokens, block.block_size, n);
    for (std::size_t i = 0; i < n; ++i) p.set_tag(addrs[i], tags[i]);
    return addrs;
  }

  TransferSpec spec(std::vector<BlockAddr> src, TokenList tokens = {}) {
    TransferSpec s;
    s.src = 0;
    s.dst = 1;
    s.src_addrs = std::move(src);
    s.tokens = std::move(tokens);
    s.mode = TransferMode::kByRequestAgg;
    return s;
  }
};

TEST_F(TransferEngineTest, SingleBlockLatency) {
  TransferEngine engine(net, model, block);
  const auto src = make_src(1, iota_tokens(16));
  auto pre = d.alloc_mem(1, AllocType::kHbm, 1);
  auto s = spec(src);
  s.dst_addrs = pre;
  const auto out = engine.begin(p, d, s, 0.0);
  const double bytes = static_cast<double>(model.kv_bytes(16));
  const double call = net.per_call_overhead + bytes / net.hbm_bandwidth;
  EXPECT_EQ(out.messages, 1u);
  EXPECT_DOUBLE_EQ(out.end, call + net.per_call_overhead);

  const auto with_alloc = engine.begin(p, d, spec(src), 1.0);
  EXPECT_EQ(with_alloc.messages, 3u);
  EXPECT_NEAR(with_alloc.end - 1.0, call + 3 * net.per_call_overhead, 1e-12);
}

TEST_F(TransferEngineTest, TagsArriveIntact) {
  TransferEngine engine(net, model, block);
  const auto tokens = iota_tokens(70);
  const auto src = make_src(5, tokens);
  const auto out = engine.begin(p, d, spec(src), 0.0);
  const auto done = engine.complete(out.id, d);
  ASSERT_TRUE(done.ok);
  std::multiset<ContentTag> a, b;
  for (std::size_t i = 0; i < 5; ++i) {
    a.insert(p.tag(src[i]));
    b.insert(d.tag(done.dst_addrs[i]));
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(d.entry(done.dst_addrs[0]).allocating_instance, 1u);
  d.release(done.dst_addrs);
  d.check_invariants();
}

TEST_F(TransferEngineTest, InsertAtReceiverVersusSeparateInsert) {
  const auto tokens = iota_tokens(64);
  const auto src = make_src(4, tokens);

  TransferEngine fused(net, model, block);
  auto s = spec(src, tokens);
  s.flags.insert_at_receiver = true;
  const auto a = fused.begin(p, d, s, 0.0);
  const auto a_done = fused.complete(a.id, d);
  const auto m = d.match(tokens);
  EXPECT_EQ(m.matched_tokens, 64u);
  EXPECT_EQ(m.addrs, a_done.dst_addrs);

  MemPool d2{1, 256, 64, block};
  TransferEngine split(net, model, block);
  const auto b = split.begin(p, d2, spec(src, tokens), 0.0);
  const auto b_done = split.complete(b.id, d2);
  const SimTime acked = split.insert_remote(d2, tokens, b_done.dst_addrs, b_done.end);
  const auto m2 = d2.match(tokens);
  EXPECT_EQ(m2.matched_tokens, m.matched_tokens);
  EXPECT_EQ(m2.addrs, b_done.dst_addrs);
  EXPECT_EQ(d2.indexed_blocks(), d.indexed_blocks());
  EXPECT_EQ(a_done.messages, 3u);
  EXPECT_EQ(b_done.messages + 2, 5u);
  EXPECT_GT(acked, a_done.end);
  EXPECT_NEAR(acked - a_done.end, 2 * net.per_call_overhead, 1e-12);
}

TEST_F(TransferEngineTest, ReceiverInsertMismatchIsReported) {
  TransferEngine engine(net, model, block);
  const auto src = make_src(2, iota_tokens(32));
  auto s = spec(src, iota_tokens(80));
  s.flags.insert_at_receiver = true;
  const auto before = d.free_blocks(Medium::kHbm);
  const auto out = engine.begin(p, d, s, 0.0);
  const auto done = engine.complete(out.id, d);
  EXPECT_FALSE(done.ok);
  EXPECT_EQ(done.error, ErrorCode::kAddrCountMismatch);
  EXPECT_EQ(d.free_blocks(Medium::kHbm), before);
}

TEST_F(TransferEngineTest, IncrementalSendsOnlyMissingBlocks) {
  TransferEngine engine(net, model, block);
  const auto turn1 = iota_tokens(48);
  auto s1 = spec(make_src(3, turn1), turn1);
  s1.flags = {true, true};
  const auto first = engine.complete(engine.begin(p, d, s1, 0.0).id, d);
  EXPECT_EQ(first.blocks_sent, 3u);
  d.release(first.dst_addrs);

  TokenList turn2 = turn1;
  for (Token t = 0; t < 40; ++t) turn2.push_back(9000 + t);
  auto s2 = spec(make_src(tokens_to_blocks(turn2.size(), block), turn2), turn2);
  s2.flags = {true, true};
  const auto second = engine.complete(engine.begin(p, d, s2, 1.0).id, d);
  ASSERT_TRUE(second.ok);
  EXPECT_EQ(second.blocks_reused, 3u);
  // 88 tokens: five full blocks plus a partial one; three are already there.
  EXPECT_EQ(second.blocks_sent, 3u);
  EXPECT_EQ(second.n_calls, 3u);
  EXPECT_EQ(d.match(turn2).matched_tokens, 80u);
  d.release(second.dst_addrs);
  d.check_invariants();
}

TEST_F(TransferEngineTest, DestinationOutOfMemory) {
  MemPool tiny{1, 2, 0, block};
  TransferEngine engine(net, model, block);
  try {
    engine.begin(p, tiny, spec(make_src(3, iota_tokens(48))), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDstOutOfMemory);
  }
  EXPECT_EQ(tiny.free_blocks(Medium::kHbm), 2u);
}

TEST_F(TransferEngineTest, CommunicatorsNeverOverlap) {
  NetworkParams two = net;
  two.communicators = 2;
  TransferEngine engine(two, model, block);
  engine.set_chunk_log(true);
  for (int r = 0; r < 5; ++r) engine.begin(p, d, spec(make_src(7, iota_tokens(112))), 0.001 * r);
  std::map<std::uint32_t, std::vector<std::pair<SimTime, SimTime>>> by_comm;
  for (const auto& c : engine.chunk_log()) by_comm[c.communicator].emplace_back(c.start, c.end);
  EXPECT_EQ(by_comm.size(), 2u);
  for (auto& [comm, slots] : by_comm) {
    std::sort(slots.begin(), slots.end());
    for (std::size_t i = 1; i < slots.size(); ++i) EXPECT_LE(slots[i - 1].second, slots[i].first);
  }
}

TEST_F(TransferEngineTest, ByLayerFinishesNoLaterThanByRequestWhenIdle) {
  BlockConfig discrete{16, Layout::kDiscrete};
  MemPool src{0, 256, 0, discrete};
  MemPool dst{1, 256, 0, discrete};
  const SimTime prefill = 0.03;
  std::vector<SimTime> finish(model.num_layers);
  for (std::uint32_t l = 0; l < model.num_layers; ++l) finish[l] = prefill * (l + 1) / model.num_layers;
  auto addrs = src.alloc_mem(64, AllocType::kHbm, 0);

  TransferEngine layer_engine(net, model, discrete);
  TransferSpec by_layer;
  by_layer.src = 0;
  by_layer.dst = 1;
  by_layer.src_addrs = addrs;
  by_layer.mode = TransferMode::kByLayer;
  by_layer.layer_finish_times = finish;
  const auto a = layer_engine.begin(src, dst, by_layer, 0.0);

  TransferEngine request_engine(net, model, discrete);
  TransferSpec by_request = by_layer;
  by_request.mode = TransferMode::kByRequest;
  by_request.layer_finish_times.clear();
  by_request.ready_time = prefill;
  const auto b = request_engine.begin(src, dst, by_request, 0.0);
  EXPECT_EQ(a.n_calls, b.n_calls);
  EXPECT_LE(a.end, b.end);
}

TEST_F(TransferEngineTest, AsymmetricParallelismCostsPerRank) {
  TransferEngine engine(net, model, block);
  const double bytes = static_cast<double>(model.kv_bytes(16));
  const SimTime same = engine.estimate_fetch(1, Medium::kHbm, Medium::kHbm, {1, 1}, {1, 1});
  EXPECT_NEAR(same, 3 * net.per_call_overhead + net.per_call_overhead + bytes / net.hbm_bandwidth, 1e-12);
  // TP 2 -> 4: each source rank sends two pieces holding half the bytes.
  const SimTime split = engine.estimate_fetch(1, Medium::kHbm, Medium::kHbm, {2, 1}, {4, 1});
  EXPECT_NEAR(split, 3 * net.per_call_overhead + 2 * net.per_call_overhead + bytes / 2 / net.hbm_bandwidth,
              1e-12);
  const SimTime slow = engine.estimate_fetch(1, Medium::kDram, Medium::kHbm, {1, 1}, {1, 1});
  EXPECT_GT(slow, same);
}

}  // namespace
}  // namespace kvpool
