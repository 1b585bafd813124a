// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "kvpool/core/types.h"
#include "kvpool/transfer/transfer_engine.h"

namespace kvpool {

struct RequestRecord {
  RequestId request_id = 0;
  SessionId session_id = 0;
  std::uint32_t turn = 0;
  SimTime arrival = 0.0;
  // Latencies relative to arrival; absent for failed requests.
  std::optional<double> ttft;
  std::optional<double> jct;
  std::optional<double> tpot;  // gen_len > 1 only
  std::optional<double> ttst;
  std::uint64_t prefill_tokens_computed = 0;
  std::uint64_t tokens_reused = 0;
  std::uint64_t bytes_transferred = 0;
  std::string decision;
  std::uint64_t prompt_tokens = 0;
  std::uint32_t gen_len = 0;
  // Prefill-side locally matched prefix in tokens.
  std::uint64_t matched_tokens = 0;
  std::string prefill_instance;
  std::string decode_instance;
  std::string status;  // done, failed, capacity-abort
};

struct Summary {
  double mean = 0.0;
  double p99 = 0.0;
  std::size_t count = 0;
};

// Nearest-rank percentile: the ceil(q * n)-th smallest value.
double nearest_rank(std::vector<double> values, double q);
Summary summarize(std::span<const double> values);

struct MetricsReport {
  std::vector<RequestRecord> records;
  std::size_t completed = 0;
  std::size_t failed = 0;
  std::size_t capacity_aborts = 0;
  Summary ttft;
  Summary jct;
  Summary tpot;
  Summary ttst;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t prefill_tokens_computed = 0;
  std::uint64_t tokens_reused = 0;
  double reuse_ratio = 0.0;  // reused / prompt tokens over completed requests
  std::uint64_t transfer_calls = 0;
  std::uint64_t transfer_bytes = 0;
  std::uint64_t p2d_bytes = 0;  // prefill-to-decode only
  SimTime makespan = 0.0;
};

// Aggregates over records. Latency summaries use completed requests only;
// the result does not depend on record order.
MetricsReport compute_metrics(std::vector<RequestRecord> records, std::span<const TransferRecord> transfers,
                              SimTime makespan);

// CSV renderings with fixed column order.
void write_requests_csv(std::ostream& out, std::span<const RequestRecord> records);
void write_transfers_csv(std::ostream& out, std::span<const TransferRecord> transfers,
                         const std::vector<std::string>& instance_names);
void write_summary_csv(std::ostream& out, const MetricsReport& report);
std::string summary_header();
std::string summary_row(const MetricsReport& report);

// Short human-readable line for the terminal.
std::string summary_line(const MetricsReport& report);

}  // namespace kvpool
