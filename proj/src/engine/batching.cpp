// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/engine/batching.h"

#include "kvpool/engine/request_state.h"

namespace kvpool {

std::vector<RequestState*> admit_batch(std::deque<RequestState*>& queue, std::uint32_t max_tokens,
                                       std::uint32_t max_requests) {
  std::vector<RequestState*> batch;
  std::uint64_t tokens = 0;
  while (!queue.empty() && batch.size() < max_requests) {
    const std::uint64_t p = queue.front()->request.prompt.size();
    if (!batch.empty() && tokens + p > max_tokens) break;
    tokens += p;
    batch.push_back(queue.front());
    queue.pop_front();
  }
  return batch;
}

}  // namespace kvpool
