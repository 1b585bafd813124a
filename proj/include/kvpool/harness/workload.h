// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "kvpool/core/config.h"

namespace kvpool {

// A conversation. Turn k+1 is issued no earlier than its planned arrival and
// no earlier than turn k's response plus the think time.
struct Session {
  SessionId id = 0;
  std::vector<Request> turns;
  std::vector<SimTime> think;  // delay after each turn's response
};

struct Workload {
  std::vector<Session> sessions;
  std::size_t request_count() const;
};

// Synthetic sessions of the configured kind. Planned arrivals form a Poisson
// stream of rate request_rate * n_instances over all requests, interleaving
// sessions at random while keeping each session's turn order.
Workload generate_workload(const WorkloadParams& params, const ModelConfig& model, std::uint64_t seed,
                           std::uint32_t n_instances);

// Line-delimited JSON records {session_id, turn, prompt_tokens, gen_len}.
// Each turn's output is taken from the next turn's prompt when it extends
// this one, otherwise drawn at random. Arrivals are synthesized as above.
// Throws ConfigError naming the file and line.
Workload load_trace(const std::filesystem::path& path, const WorkloadParams& params, std::uint64_t seed,
                    std::uint32_t n_instances);

// Builds the workload a config asks for.
Workload make_workload(const SimConfig& config);

}  // namespace kvpool
