// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/engine/cost_model.h"

namespace kvpool {

std::string_view to_string(ReuseDecision d) {
  return d == ReuseDecision::kReuse ? "reuse" : "recompute";
}

SimTime CostModel::batch_time(std::span<const ReuseCandidate> batch,
                              std::span<const std::size_t> chosen) const {
  std::uint64_t fresh = 0;
  std::uint64_t reused = 0;
  SimTime moves = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& opt = batch[i].options[chosen[i]];
    fresh += batch[i].prompt_tokens - opt.tokens;
    reused += opt.tokens;
    moves += opt.move_time;
  }
  return moves + timing_.prefill_cost(fresh, reused);
}

BatchPlan CostModel::plan(std::span<const ReuseCandidate> batch) const {
  BatchPlan plan;
  plan.chosen.assign(batch.size(), 0);
  plan.total_time = batch_time(batch, plan.chosen);
  // Every accepted change strictly lowers the batch time, so this ends.
  bool improved = true;
  while (improved) {
    improved = false;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t o = 0; o < batch[i].options.size(); ++o) {
        if (o == plan.chosen[i]) continue;
        const std::size_t keep = plan.chosen[i];
        plan.chosen[i] = o;
        const SimTime t = batch_time(batch, plan.chosen);
        if (t < plan.total_time) {
          plan.total_time = t;
          improved = true;
        } else {
          plan.chosen[i] = keep;
        }
      }
    }
  }
  return plan;
}

ReuseDecision CostModel::should_reuse(std::uint64_t prompt_tokens, const ReuseOption& option) const {
  if (option.tokens == 0) return ReuseDecision::kRecompute;
  const SimTime saved = timing_.prefill_cost(prompt_tokens, 0) -
                        timing_.prefill_cost(prompt_tokens - option.tokens, option.tokens);
  return saved > option.move_time ? ReuseDecision::kReuse : ReuseDecision::kRecompute;
}

std::vector<ReuseDecision> should_reuse_cache(const CostModel& model, std::span<const ReuseCandidate> batch) {
  const auto plan = model.plan(batch);
  std::vector<ReuseDecision> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    out.push_back(batch[i].options[plan.chosen[i]].tokens > 0 ? ReuseDecision::kReuse : ReuseDecision::kRecompute);
  }
  return out;
}

}  // namespace kvpool
