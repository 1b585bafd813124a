// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "kvpool/core/config.h"

namespace kvpool {

// Simulated engine latency.
//   prefill_cost(n_new, n_ctx) = alpha_p * n_new + gamma_p * n_new * n_ctx
//   decode_step_cost(batch)    = alpha_d + delta_d * batch
// n_ctx counts tokens whose KV is already present (reused) when the new
// tokens are computed; a batch is costed with its summed new and context
// token counts.
class TimingModel {
 public:
  explicit TimingModel(TimingParams params = {}) : p_(params) {}

  const TimingParams& params() const { return p_; }

  SimTime prefill_cost(std::uint64_t n_new, std::uint64_t n_context) const {
    const double n = static_cast<double>(n_new);
    return p_.prefill_alpha * n + p_.prefill_gamma * n * static_cast<double>(n_context);
  }

  SimTime decode_step_cost(std::uint64_t batch_size) const {
    return p_.decode_alpha + p_.decode_delta * static_cast<double>(batch_size);
  }

  SimTime swap_cost(std::uint64_t n_blocks) const {
    return p_.swap_cost_per_block * static_cast<double>(n_blocks);
  }

  // Layer l of a prefill spanning [start, start + duration) completes at
  // start + duration * (l + 1) / L.
  static std::vector<SimTime> layer_finish_times(SimTime start, SimTime duration, std::uint32_t layers) {
    std::vector<SimTime> out(layers);
    for (std::uint32_t l = 0; l < layers; ++l) out[l] = start + duration * (l + 1) / layers;
    return out;
  }

 private:
  TimingParams p_;
};

}  // namespace kvpool
