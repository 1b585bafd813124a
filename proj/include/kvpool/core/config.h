// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kvpool/core/types.h"

namespace kvpool {

enum class TransferMode : std::uint8_t { kByLayer, kByRequest, kByRequestAgg };
enum class CachingDesign : std::uint8_t { kPdBasic, kPdCaching1, kPdCaching2, kPdCaching3 };
enum class Policy : std::uint8_t { kLeastLoad, kSessionId, kPromptTree };
// How prefill decides between reusing cached KV and recomputing it.
enum class ReusePolicy : std::uint8_t { kCostModel, kAlways, kNever };
enum class WorkloadKind : std::uint8_t { kChat, kDocQa, kAgent };
enum class WorkloadSource : std::uint8_t { kSynthetic, kTrace };

std::string_view to_string(TransferMode mode);
std::string_view to_string(CachingDesign design);
std::string_view to_string(Policy policy);
std::string_view to_string(ReusePolicy policy);
std::string_view to_string(WorkloadKind kind);

// Coefficients of the simulated engine's latency model (seconds).
struct TimingParams {
  double prefill_alpha = 3.0e-5;   // per new token
  double prefill_gamma = 1.0e-8;   // per (new token x cached context token)
  double decode_alpha = 0.015;     // per decode iteration
  double decode_delta = 2.0e-4;    // per request in the decode batch
  double swap_cost_per_block = 4.0e-4;
};

struct EngineParams {
  TimingParams timing;
  std::uint32_t max_batch_tokens = 2048;
  std::uint32_t max_batch_size = 16;
  std::uint32_t max_decode_batch = 128;
  // Move LRU historical blocks to DRAM before evicting them from HBM.
  bool swap_to_dram = true;
  // Delay before retrying work that failed for lack of memory.
  double retry_backoff = 0.005;
  ReusePolicy reuse_policy = ReusePolicy::kCostModel;
};

struct NetworkParams {
  double per_call_overhead = 5.0e-6;
  double hbm_bandwidth = 50.0e9;   // bytes / s, HBM <-> HBM
  double dram_bandwidth = 10.0e9;  // bytes / s, either side in DRAM
  std::uint32_t communicators = 1;
};

struct SchedulerParams {
  Policy policy = Policy::kPromptTree;
  double ttl = 300.0;
};

struct FailureInjection {
  SimTime time = 0.0;
  std::string instance;
};

struct ClusterParams {
  // Topology shorthand the roster was expanded from, if any.
  std::string setting;
  // Template for instances created from `setting` or missing per-instance keys.
  InstanceSpec instance_defaults;
  std::vector<InstanceSpec> instances;
  CachingDesign design = CachingDesign::kPdCaching3;
  TransferMode transfer_mode = TransferMode::kByRequestAgg;
  double heartbeat_interval = 1.0;
  double failure_timeout = 3.0;
  std::vector<FailureInjection> failures;
};

// Length distribution: uniform integer in [min, max].
struct LengthRange {
  std::uint32_t min = 1;
  std::uint32_t max = 1;
};

struct WorkloadParams {
  WorkloadSource source = WorkloadSource::kSynthetic;
  WorkloadKind kind = WorkloadKind::kChat;
  std::string trace_file;
  std::uint32_t sessions = 32;
  // Requests per simulated second per instance.
  double request_rate = 1.0;
  std::uint32_t share_ratio = 1;
  double think_time_mean = 0.0;
  std::uint32_t vocab_size = 32000;

  // Shape parameters; defaults depend on `kind` and are filled by the loader.
  LengthRange turns{1, 1};
  LengthRange question_len{1, 1};
  LengthRange gen_len{1, 1};
  std::uint32_t shared_prefix_len = 0;  // per-session document or global example
};

struct SimConfig {
  std::uint64_t seed = 42;
  ModelConfig model;
  BlockConfig block;
  ClusterParams cluster;
  EngineParams engine;
  NetworkParams network;
  SchedulerParams scheduler;
  WorkloadParams workload;
};

// Shape defaults for each synthetic workload kind.
WorkloadParams default_workload(WorkloadKind kind);

// Default two-instance 1P1D cluster with full caching.
SimConfig default_config();

// Parse a YAML document. `overrides` are "dotted.key=value" strings applied
// to the document before interpretation. Throws Error(kConfigError) naming
// the offending key path and source line.
SimConfig parse_config(std::string_view text, std::string_view source_name = "<config>",
                       std::span<const std::string> overrides = {});
SimConfig load_config(const std::filesystem::path& path,
                      std::span<const std::string> overrides = {});

// Semantic checks shared by the loader and programmatic construction.
void validate_config(const SimConfig& config);

// Render as YAML that parse_config accepts (round-trips).
std::string to_yaml(const SimConfig& config);

// Expands a topology shorthand: "PD", "PD-CC" (colocated, `count` instances)
// or "<x>P<y>D", "<x>P<y>D-CC". Returns false on an unrecognized string.
bool apply_setting(SimConfig& config, std::string_view setting, std::uint32_t colocated_count = 2);

}  // namespace kvpool
