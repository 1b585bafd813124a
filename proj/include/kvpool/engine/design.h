// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kvpool/core/config.h"

namespace kvpool {

// What an instance does with KV it produced, by caching level. Each level
// keeps everything the previous one does.
struct DesignCaps {
  // Prefill side indexes the prompt after prefill.
  bool prefill_insert = false;
  // Prefill-to-decode transfer inserts at the receiver and skips blocks the
  // receiver already holds.
  bool insert_on_transfer = false;
  // Decode side indexes prompt plus generated tokens when a request ends.
  bool decode_insert = false;
  // Decode side ships the KV it produced back to the prefill side.
  bool return_to_prefill = false;
};

inline DesignCaps capabilities(CachingDesign design) {
  DesignCaps caps;
  switch (design) {
    case CachingDesign::kPdCaching3:
      caps.return_to_prefill = true;
      [[fallthrough]];
    case CachingDesign::kPdCaching2:
      caps.insert_on_transfer = true;
      caps.decode_insert = true;
      [[fallthrough]];
    case CachingDesign::kPdCaching1:
      caps.prefill_insert = true;
      [[fallthrough]];
    case CachingDesign::kPdBasic:
      break;
  }
  return caps;
}

// A colocated instance with caching indexes the prompt after prefill and the
// whole sequence when the request ends, on the same pool.
inline DesignCaps colocated_capabilities(bool caching_enabled) {
  DesignCaps caps;
  caps.prefill_insert = caching_enabled;
  caps.decode_insert = caching_enabled;
  return caps;
}

}  // namespace kvpool
