// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kvpool {

enum class ErrorCode {
  kOutOfMemory,
  kDoubleFree,
  kInvalidAddr,
  kAddrCountMismatch,
  kConflictingMapping,
  kNoDramCapacity,
  kPrecondition,
  kDstOutOfMemory,
  kDstUnreachable,
  kModeLayoutMismatch,
  kNoLiveInstance,
  kDuplicateId,
  kUnknownId,
  kConfigError,
  kDeadlockDetected,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace kvpool
