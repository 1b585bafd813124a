// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <deque>
#include <vector>

namespace kvpool {

struct RequestState;

// Pops the longest FIFO prefix of `queue` whose summed prompt length fits
// `max_tokens` and whose size fits `max_requests`. A head request larger
// than `max_tokens` is admitted alone so it is never starved.
std::vector<RequestState*> admit_batch(std::deque<RequestState*>& queue, std::uint32_t max_tokens,
                                       std::uint32_t max_requests);

}  // namespace kvpool
