// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "kvpool/core/config.h"
#include "kvpool/core/error.h"
#include "kvpool/core/types.h"

namespace kvpool {
namespace {

TEST(BlockMath, TokensToBlocks) {
  const BlockConfig b16{16, Layout::kDiscrete};
  EXPECT_EQ(tokens_to_blocks(0, b16), 0u);
  EXPECT_EQ(tokens_to_blocks(16, b16), 1u);
  EXPECT_EQ(tokens_to_blocks(17, b16), 2u);
  EXPECT_EQ(tokens_to_blocks(2048, b16), 128u);
  std::uint64_t prev = 0;
  for (std::uint64_t n = 0; n < 1000; ++n) {
    const auto v = tokens_to_blocks(n, b16);
    EXPECT_GE(v, prev);
    EXPECT_EQ(v, n / 16 + (n % 16 ? 1 : 0));
    prev = v;
  }
}

TEST(BlockMath, StorageBlocksPerLayout) {
  const ModelConfig model;
  EXPECT_EQ((BlockConfig{16, Layout::kDiscrete}.storage_blocks_per_token_block(model)), 80u);
  EXPECT_EQ((BlockConfig{16, Layout::kAggregated}.storage_blocks_per_token_block(model)), 1u);
  EXPECT_EQ(model.kv_bytes(16), 16u * 40u * 20480u);
}

TEST(ContentTags, PrefixSensitive) {
  const TokenList a{1, 2, 3, 4, 5, 6, 7, 8};
  TokenList b = a;
  b[0] = 99;
  const auto ta = block_tags(a, 4, 2);
  const auto tb = block_tags(b, 4, 2);
  EXPECT_NE(ta[1], tb[1]);  // differs although block contents match
  EXPECT_EQ(ta[1], prefix_tag(a, 8));
  EXPECT_EQ(ta[0], prefix_tag(a, 4));
}

TEST(Config, DefaultsValidate) {
  const auto c = default_config();
  EXPECT_NO_THROW(validate_config(c));
  EXPECT_EQ(c.cluster.instances.size(), 2u);
  EXPECT_EQ(c.block.block_size, 16u);
  EXPECT_EQ(c.model.num_layers, 40u);
}

TEST(Config, SettingsExpand) {
  SimConfig c = default_config();
  ASSERT_TRUE(apply_setting(c, "3P1D"));
  ASSERT_EQ(c.cluster.instances.size(), 4u);
  EXPECT_EQ(c.cluster.instances[2].kind, InstanceKind::kPrefillOnly);
  EXPECT_EQ(c.cluster.instances[3].kind, InstanceKind::kDecodeOnly);
  EXPECT_EQ(c.cluster.design, CachingDesign::kPdBasic);
  ASSERT_TRUE(apply_setting(c, "PD-CC", 3));
  EXPECT_EQ(c.cluster.instances.size(), 3u);
  EXPECT_TRUE(c.cluster.instances[0].caching_enabled);
  EXPECT_FALSE(apply_setting(c, "P2D"));
  EXPECT_FALSE(apply_setting(c, "0P1D"));
}

TEST(Config, ParseReportsPathAndLine) {
  const std::string text =
      "seed: 7\n"
      "block:\n"
      "  size: 8\n"
      "  layuot: discrete\n";
  try {
    parse_config(text, "x.yaml");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfigError);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("x.yaml:4"), std::string::npos) << msg;
    EXPECT_NE(msg.find("block.layuot"), std::string::npos) << msg;
  }
}

TEST(Config, RejectsBadValues) {
  EXPECT_THROW(parse_config("block: {size: 0}"), Error);
  EXPECT_THROW(parse_config("cluster: {transfer_mode: by-request-agg}\nblock: {layout: discrete}"), Error);
  EXPECT_THROW(parse_config("network: {dram_bandwidth: 1e12}"), Error);
  EXPECT_THROW(parse_config("cluster: {instances: [{kind: prefill}]}"), Error);
  EXPECT_THROW(parse_config("scheduler: {policy: random}"), Error);
  EXPECT_THROW(parse_config("seed: [1"), Error);
}

TEST(Config, OverridesAndRoundTrip) {
  const std::vector<std::string> overrides{"workload.request_rate=2.5", "cluster.setting=2P2D-CC",
                                           "block.layout=aggregated", "scheduler.policy=session_id"};
  const auto c = parse_config("seed: 3\nworkload: {kind: docqa, sessions: 4}\n", "t", overrides);
  EXPECT_DOUBLE_EQ(c.workload.request_rate, 2.5);
  EXPECT_EQ(c.cluster.instances.size(), 4u);
  EXPECT_EQ(c.cluster.design, CachingDesign::kPdCaching3);
  EXPECT_EQ(c.scheduler.policy, Policy::kSessionId);
  EXPECT_EQ(c.workload.shared_prefix_len, 1024u);
  EXPECT_EQ(c.workload.turns.min, 5u);

  const auto text = to_yaml(c);
  const auto again = parse_config(text);
  EXPECT_EQ(to_yaml(again), text);
}

}  // namespace
}  // namespace kvpool
