// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/core/types.h"

#include <fmt/format.h>

#include <algorithm>

#include "kvpool/core/error.h"

namespace kvpool {

std::string_view to_string(Medium medium) {
  return medium == Medium::kHbm ? "HBM" : "DRAM";
}

std::string to_string(const BlockAddr& addr) {
  return fmt::format("{}:{}:{}", addr.instance, to_string(addr.medium), addr.index);
}

std::string_view to_string(Layout layout) {
  return layout == Layout::kDiscrete ? "discrete" : "aggregated";
}

std::string_view to_string(InstanceKind kind) {
  switch (kind) {
    case InstanceKind::kPrefillOnly:
      return "prefill";
    case InstanceKind::kDecodeOnly:
      return "decode";
    case InstanceKind::kColocated:
      return "colocated";
  }
  return "unknown";
}

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kOutOfMemory:
      return "OutOfMemory";
    case ErrorCode::kDoubleFree:
      return "DoubleFree";
    case ErrorCode::kInvalidAddr:
      return "InvalidAddr";
    case ErrorCode::kAddrCountMismatch:
      return "AddrCountMismatch";
    case ErrorCode::kConflictingMapping:
      return "ConflictingMapping";
    case ErrorCode::kNoDramCapacity:
      return "NoDramCapacity";
    case ErrorCode::kPrecondition:
      return "PreconditionViolated";
    case ErrorCode::kDstOutOfMemory:
      return "DstOutOfMemory";
    case ErrorCode::kDstUnreachable:
      return "DstUnreachable";
    case ErrorCode::kModeLayoutMismatch:
      return "ModeLayoutMismatch";
    case ErrorCode::kNoLiveInstance:
      return "NoLiveInstance";
    case ErrorCode::kDuplicateId:
      return "DuplicateId";
    case ErrorCode::kUnknownId:
      return "UnknownId";
    case ErrorCode::kConfigError:
      return "ConfigError";
    case ErrorCode::kDeadlockDetected:
      return "DeadlockDetected";
  }
  return "Unknown";
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t mix_token(std::uint64_t h, Token t) {
  for (int shift = 0; shift < 32; shift += 8) {
    h ^= (t >> shift) & 0xffU;
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

ContentTag prefix_tag(TokenSpan tokens, std::size_t end) {
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < end && i < tokens.size(); ++i) h = mix_token(h, tokens[i]);
  return h ^ (static_cast<std::uint64_t>(end) * 0x9e3779b97f4a7c15ULL);
}

std::vector<ContentTag> block_tags(TokenSpan tokens, std::uint32_t block_size,
                                   std::size_t n_blocks) {
  std::vector<ContentTag> tags;
  tags.reserve(n_blocks);
  std::uint64_t h = kFnvOffset;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t end = std::min<std::size_t>((b + 1) * block_size, tokens.size());
    for (; pos < end; ++pos) h = mix_token(h, tokens[pos]);
    tags.push_back(h ^ (static_cast<std::uint64_t>(end) * 0x9e3779b97f4a7c15ULL));
  }
  return tags;
}

}  // namespace kvpool
