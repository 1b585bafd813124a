// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "kvpool/core/config.h"

namespace kvpool::cli {

// Output directory: explicit flag, then $KVSIM_OUT_DIR, then `fallback`.
std::filesystem::path output_dir(const std::string& flag, const std::filesystem::path& fallback);

// Writes requests.csv, transfers.csv, routing.csv and summary.csv to `dir`
// and returns the one-line summary.
std::string run_to_dir(const SimConfig& config, const std::filesystem::path& dir);

struct SweepAxis {
  std::string key;  // dotted config path
  std::vector<std::string> values;
};

struct ExperimentSpec {
  std::filesystem::path base;
  std::vector<std::string> overrides;
  std::vector<SweepAxis> axes;
};

// Format:
//   base: path/to/config.yaml        # relative to the experiment file
//   overrides: [key=value, ...]      # optional
//   axes:                            # optional; order is enumeration order
//     - {key: workload.request_rate, values: [0.5, 1.0]}
ExperimentSpec load_experiment(const std::filesystem::path& path);

// Cross product in declaration order, first axis outermost. Each point is a
// list of key=value overrides. No axes gives one empty point.
std::vector<std::vector<std::string>> sweep_points(const std::vector<SweepAxis>& axes);

struct SweepResult {
  std::size_t points = 0;
  std::size_t failed = 0;
};

// Runs every point (up to `jobs` at once) into dir/point-NNNN/ and writes the
// combined table dir/sweep.csv. A failed point is recorded and skipped.
SweepResult run_sweep(const ExperimentSpec& spec, const std::filesystem::path& dir, unsigned jobs,
                      std::ostream& log);

// Entry point shared by the kvsim binary and tests. Returns the exit status.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace kvpool::cli
