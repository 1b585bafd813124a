// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/transfer/network_model.h"

#include <algorithm>
#include <map>

namespace kvpool {

SimTime NetworkModel::call_time(std::uint64_t bytes, double bandwidth, const Repartition* shards,
                                std::uint32_t layer_begin, std::uint32_t layer_end) const {
  const double whole = params_.per_call_overhead + static_cast<double>(bytes) / bandwidth;
  if (shards == nullptr || shards->pieces.size() <= 1) return whole;

  struct RankLoad {
    std::uint32_t pieces = 0;
    std::uint64_t area = 0;
  };
  std::map<std::uint32_t, RankLoad> per_rank;
  std::uint64_t total_area = 0;
  for (const auto& p : shards->pieces) {
    const std::uint32_t lb = std::max(p.layer_begin, layer_begin);
    const std::uint32_t le = std::min(p.layer_end, layer_end);
    if (lb >= le) continue;
    const std::uint64_t area = static_cast<std::uint64_t>(le - lb) * (p.head_end - p.head_begin);
    auto& load = per_rank[p.src_rank];
    load.pieces += 1;
    load.area += area;
    total_area += area;
  }
  if (total_area == 0) return whole;
  SimTime worst = 0.0;
  for (const auto& [rank, load] : per_rank) {
    const double share = static_cast<double>(load.area) / static_cast<double>(total_area);
    worst = std::max(worst, load.pieces * params_.per_call_overhead +
                                share * static_cast<double>(bytes) / bandwidth);
  }
  return worst;
}

}  // namespace kvpool
