// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "kvpool/core/config.h"
#include "kvpool/transfer/repartition.h"

namespace kvpool {

// Latency of network calls between instances. HBM-to-HBM traffic uses the
// fast link; anything touching DRAM uses the slow one.
class NetworkModel {
 public:
  explicit NetworkModel(NetworkParams params) : params_(params) {}

  const NetworkParams& params() const { return params_; }

  double bandwidth(Medium src, Medium dst) const {
    return src == Medium::kHbm && dst == Medium::kHbm ? params_.hbm_bandwidth : params_.dram_bandwidth;
  }

  // One control message (allocation request/reply, acknowledgement).
  SimTime message_time() const { return params_.per_call_overhead; }

  // One call moving `bytes` of layers [layer_begin, layer_end). With a
  // repartition, every source rank sends its pieces over its own link; the
  // call lasts as long as the slowest rank.
  SimTime call_time(std::uint64_t bytes, double bandwidth, const Repartition* shards = nullptr,
                    std::uint32_t layer_begin = 0, std::uint32_t layer_end = 0) const;

 private:
  NetworkParams params_;
};

}  // namespace kvpool
