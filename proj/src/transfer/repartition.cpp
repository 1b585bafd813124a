// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/transfer/repartition.h"

#include <algorithm>
#include <numeric>

namespace kvpool {

std::vector<std::pair<std::uint32_t, std::uint32_t>> stage_layers(std::uint32_t pp,
                                                                  std::uint32_t num_layers) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  const std::uint32_t base = num_layers / pp;
  const std::uint32_t extra = num_layers % pp;
  std::uint32_t begin = 0;
  for (std::uint32_t s = 0; s < pp; ++s) {
    const std::uint32_t len = base + (s < extra ? 1 : 0);
    out.emplace_back(begin, begin + len);
    begin += len;
  }
  return out;
}

Repartition repartition(const ParallelismConfig& src, const ParallelismConfig& dst,
                        std::uint32_t num_layers) {
  Repartition r;
  r.num_layers = num_layers;
  r.head_units = std::lcm(src.tp_degree, dst.tp_degree);
  const auto src_stages = stage_layers(src.pp_degree, num_layers);
  const auto dst_stages = stage_layers(dst.pp_degree, num_layers);
  const std::uint32_t src_width = r.head_units / src.tp_degree;
  const std::uint32_t dst_width = r.head_units / dst.tp_degree;

  for (std::uint32_t ss = 0; ss < src.pp_degree; ++ss) {
    for (std::uint32_t st = 0; st < src.tp_degree; ++st) {
      for (std::uint32_t ds = 0; ds < dst.pp_degree; ++ds) {
        const std::uint32_t lb = std::max(src_stages[ss].first, dst_stages[ds].first);
        const std::uint32_t le = std::min(src_stages[ss].second, dst_stages[ds].second);
        if (lb >= le) continue;
        for (std::uint32_t dt = 0; dt < dst.tp_degree; ++dt) {
          const std::uint32_t hb = std::max(st * src_width, dt * dst_width);
          const std::uint32_t he = std::min((st + 1) * src_width, (dt + 1) * dst_width);
          if (hb >= he) continue;
          r.pieces.push_back({ss * src.tp_degree + st, ds * dst.tp_degree + dt, lb, le, hb, he});
        }
      }
    }
  }
  return r;
}

}  // namespace kvpool
