// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "kvpool/engine/timing_model.h"
#include "kvpool/harness/simulation.h"

namespace kvpool {
namespace {

SimConfig small_config(const std::string& setting) {
  SimConfig c = default_config();
  apply_setting(c, setting);
  c.workload = default_workload(WorkloadKind::kChat);
  c.workload.sessions = 6;
  c.workload.request_rate = 0.5;
  c.workload.think_time_mean = 0.5;
  return c;
}

Workload single(TokenList prompt, std::uint32_t gen, SimTime arrival = 0.0) {
  Session s;
  Request r;
  r.prompt = std::move(prompt);
  r.gen_len = gen;
  r.output.assign(gen, 7);
  r.arrival_time = arrival;
  s.turns.push_back(r);
  s.think.push_back(0.0);
  Workload w;
  w.sessions.push_back(std::move(s));
  return w;
}

TokenList iota_tokens(std::size_t n, Token start = 1) {
  TokenList t(n);
  std::iota(t.begin(), t.end(), start);
  return t;
}

TEST(HarnessTest, EventsRunInTimeThenSeqOrder) {
  EventQueue q;
  q.push(2.0, EventKind::kArrival, 0);
  q.push(1.0, EventKind::kArrival, 1);
  q.push(1.0, EventKind::kArrival, 2);
  EXPECT_EQ(q.pop().subject, 1u);
  EXPECT_EQ(q.pop().subject, 2u);
  EXPECT_EQ(q.pop().subject, 0u);
}

// JCT = prefill_cost(p, 0) + (gen - 1) * decode_step_cost(1), computed by hand.
TEST(HarnessTest, SingleColocatedRequestMatchesClosedForm) {
  SimConfig c = default_config();
  apply_setting(c, "PD", 1);
  const std::size_t p = 300;
  const std::uint32_t gen = 11;
  Simulation sim(c, single(iota_tokens(p), gen));
  const MetricsReport m = sim.run();
  ASSERT_EQ(m.completed, 1u);
  const auto& t = c.engine.timing;
  const double prefill = t.prefill_alpha * p;
  const double step = t.decode_alpha + t.decode_delta * 1;
  EXPECT_NEAR(*m.records[0].ttft, prefill, 1e-12);
  EXPECT_NEAR(*m.records[0].jct, prefill + (gen - 1) * step, 1e-12);
  EXPECT_NEAR(*m.records[0].tpot, step, 1e-12);
}

TEST(HarnessTest, SecondIdenticalRequestComputesOnlyPartialBlock) {
  SimConfig c = default_config();
  apply_setting(c, "PD-CC", 1);
  const TokenList prompt = iota_tokens(100);
  Workload w = single(prompt, 4);
  Session s2 = w.sessions[0];
  s2.id = 1;
  s2.turns[0].id = 1;
  s2.turns[0].session_id = 1;
  w.sessions.push_back(s2);
  Simulation sim(c, w);
  const MetricsReport m = sim.run();
  ASSERT_EQ(m.completed, 2u);
  EXPECT_EQ(m.records[0].prefill_tokens_computed, 100u);
  // 96 tokens sit in six full blocks; the trailing 4 are recomputed.
  EXPECT_EQ(m.records[1].prefill_tokens_computed, 4u);
  EXPECT_EQ(m.records[1].tokens_reused, 96u);
}

TEST(HarnessTest, SameSeedGivesIdenticalCsvBytes) {
  for (const char* setting : {"1P1D-CC", "PD-CC", "2P1D"}) {
    std::string out[2];
    for (auto& text : out) {
      Simulation sim(small_config(setting));
      sim.run();
      std::ostringstream os;
      sim.write_requests_csv(os);
      sim.write_transfers_csv(os);
      sim.write_routing_csv(os);
      sim.write_summary_csv(os);
      text = os.str();
    }
    EXPECT_EQ(out[0], out[1]) << setting;
    EXPECT_GT(out[0].size(), 200u);
  }
}

TEST(HarnessTest, DocQaSessionsShareTheirDocument) {
  SimConfig c = default_config();
  c.workload = default_workload(WorkloadKind::kDocQa);
  c.workload.sessions = 1;
  const Workload w = make_workload(c);
  ASSERT_EQ(w.request_count(), 5u);
  const TokenList& first = w.sessions[0].turns[0].prompt;
  for (const auto& r : w.sessions[0].turns) {
    ASSERT_GE(r.prompt.size(), 1024u);
    EXPECT_TRUE(std::equal(first.begin(), first.begin() + 1024, r.prompt.begin()));
  }
  EXPECT_EQ(w.sessions[0].turns[0].arrival_time, 0.0);
}

TEST(HarnessTest, ShareRatioDuplicatesSessions) {
  SimConfig c = default_config();
  c.workload = default_workload(WorkloadKind::kDocQa);
  c.workload.sessions = 4;
  const Workload one = make_workload(c);
  c.workload.share_ratio = 2;
  const Workload two = make_workload(c);
  ASSERT_EQ(two.request_count(), 2 * one.request_count());
  std::set<SessionId> ids;
  for (const auto& s : two.sessions) ids.insert(s.id);
  EXPECT_EQ(ids.size(), two.sessions.size());
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t k = 0; k < two.sessions[i].turns.size(); ++k) {
      EXPECT_EQ(two.sessions[i].turns[k].prompt, two.sessions[i + 4].turns[k].prompt);
    }
  }
}

TEST(HarnessTest, TpotArithmetic) {
  RequestRecord r;
  r.status = "done";
  r.ttft = 1.0;
  r.jct = 3.0;
  r.tpot = (3.0 - 1.0) / (3 - 1);
  const MetricsReport m = compute_metrics({r}, {}, 3.0);
  EXPECT_DOUBLE_EQ(m.tpot.mean, 1.0);
  EXPECT_DOUBLE_EQ(m.jct.mean, m.jct.p99);
}

TEST(HarnessTest, NearestRankPercentile) {
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 1.0);
  EXPECT_EQ(nearest_rank(v, 0.99), 99.0);
  EXPECT_EQ(nearest_rank({5.0}, 0.99), 5.0);
}

TEST(HarnessTest, MetricsIgnoreRecordOrder) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  std::vector<RequestRecord> records(60);
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    r.request_id = i;
    r.status = i % 13 == 0 ? "capacity-abort" : "done";
    if (r.status == "done") {
      r.ttft = u(rng);
      r.jct = *r.ttft + u(rng);
    }
    r.prompt_tokens = 100 + i;
    r.tokens_reused = i;
  }
  const std::string base = summary_row(compute_metrics(records, {}, 10.0));
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(records.begin(), records.end(), rng);
    EXPECT_EQ(summary_row(compute_metrics(records, {}, 10.0)), base);
  }
}

// End-to-end properties over every topology and design.
TEST(HarnessTest, RunsSatisfyLatencyCausalityAndConservation) {
  struct Case {
    std::string setting;
    CachingDesign design;
    TransferMode mode;
    Layout layout;
  };
  std::vector<Case> cases = {
      {"PD", CachingDesign::kPdBasic, TransferMode::kByRequestAgg, Layout::kAggregated},
      {"PD-CC", CachingDesign::kPdBasic, TransferMode::kByRequestAgg, Layout::kAggregated},
      {"1P1D", CachingDesign::kPdBasic, TransferMode::kByLayer, Layout::kDiscrete},
      {"1P1D-CC", CachingDesign::kPdCaching1, TransferMode::kByRequest, Layout::kDiscrete},
      {"2P1D-CC", CachingDesign::kPdCaching2, TransferMode::kByRequestAgg, Layout::kAggregated},
      {"2P2D-CC", CachingDesign::kPdCaching3, TransferMode::kByLayer, Layout::kDiscrete},
  };
  for (const auto& tc : cases) {
    SimConfig c = small_config(tc.setting);
    c.cluster.transfer_mode = tc.mode;
    c.block.layout = tc.layout;
    c.cluster.instance_defaults.hbm_capacity_blocks = tc.layout == Layout::kDiscrete ? 65536 : 4096;
    apply_setting(c, tc.setting);
    if (c.cluster.instances[0].kind != InstanceKind::kColocated) c.cluster.design = tc.design;
    Simulation sim(c);
    const MetricsReport m = sim.run();
    SCOPED_TRACE(tc.setting);
    EXPECT_EQ(m.failed, 0u);
    EXPECT_EQ(m.completed, sim.requests().size());
    std::map<SessionId, SimTime> last_done;
    std::vector<const RequestState*> order;
    for (const auto& r : sim.requests()) order.push_back(&r);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) {
      return std::tie(a->request.session_id, a->request.turn_index) <
             std::tie(b->request.session_id, b->request.turn_index);
    });
    for (const RequestState* r : order) {
      EXPECT_EQ(r->generated, r->request.gen_len);
      EXPECT_GE(r->finished, r->first_token);
      if (r->request.turn_index > 0) {
        EXPECT_GE(r->arrival, last_done[r->request.session_id]);
      }
      last_done[r->request.session_id] = r->finished;
    }
    for (const auto& rec : m.records) EXPECT_GE(*rec.jct, *rec.ttft);
    for (std::size_t i = 0; i < sim.instance_count(); ++i) {
      auto& pool = sim.instance(static_cast<InstanceId>(i)).pool();
      EXPECT_NO_THROW(pool.check_invariants());
      // Once everything has finished, only reclaimable history remains.
      for (Medium medium : {Medium::kHbm, Medium::kDram}) {
        EXPECT_EQ(pool.allocated_blocks(medium), pool.evictable_blocks(medium));
      }
    }
  }
}

TEST(HarnessTest, FailedDecodeInstanceFailsItsRequestsAndFreesPeers) {
  SimConfig c = small_config("2P2D-CC");
  c.workload.sessions = 12;
  c.workload.request_rate = 4.0;
  c.cluster.failures.push_back({0.5, "d0"});
  Simulation sim(c);
  const MetricsReport m = sim.run();
  ASSERT_EQ(sim.cleanups().size(), 1u);
  EXPECT_EQ(sim.cleanups()[0].failed, sim.instance_id("d0"));
  for (bool ok : sim.conservation_checks()) EXPECT_TRUE(ok);
  EXPECT_EQ(sim.routes_to_failed(), 0u);
  EXPECT_EQ(m.completed + m.failed, sim.requests().size());
  const SimTime detected = sim.cleanups()[0].time;
  for (const auto& r : sim.routing_log()) {
    if (sim.requests()[r.request_id].arrival < detected) continue;
    EXPECT_EQ(r.chosen.find("d0"), std::string::npos);
  }
}

TEST(HarnessTest, MissingTraceIsConfigError) {
  SimConfig c = default_config();
  c.workload.source = WorkloadSource::kTrace;
  c.workload.trace_file = "/nonexistent/trace.jsonl";
  try {
    Simulation sim(c);
    FAIL() << "expected ConfigError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
  }
}

}  // namespace
}  // namespace kvpool
