// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/cli/cli.h"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <CLI11.hpp>
#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "kvpool/core/error.h"
#include "kvpool/harness/simulation.h"

namespace kvpool::cli {

namespace fs = std::filesystem;

fs::path output_dir(const std::string& flag, const fs::path& fallback) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("KVSIM_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return fallback;
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kConfigError, "cannot write " + path.string());
  out << text;
}

template <typename Fn>
std::string render(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string run_to_dir(const SimConfig& config, const fs::path& dir) {
  Simulation sim(config);
  const MetricsReport report = sim.run();
  fs::create_directories(dir);
  write_file(dir / "requests.csv", render([&](std::ostream& os) { sim.write_requests_csv(os); }));
  write_file(dir / "transfers.csv", render([&](std::ostream& os) { sim.write_transfers_csv(os); }));
  write_file(dir / "routing.csv", render([&](std::ostream& os) { sim.write_routing_csv(os); }));
  write_file(dir / "summary.csv", render([&](std::ostream& os) { write_summary_csv(os, report); }));
  return summary_line(report);
}

ExperimentSpec load_experiment(const fs::path& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path.string());
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kConfigError, fmt::format("{}: {}", path.string(), e.what()));
  }
  auto fail = [&](const std::string& msg) {
    throw Error(ErrorCode::kConfigError, fmt::format("{}: {}", path.string(), msg));
  };
  if (!root.IsMap()) fail("expected a mapping");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (key != "base" && key != "overrides" && key != "axes") fail("unknown key '" + key + "'");
  }
  ExperimentSpec spec;
  if (!root["base"] || !root["base"].IsScalar()) fail("base: config path required");
  spec.base = root["base"].as<std::string>();
  if (spec.base.is_relative()) spec.base = (path.parent_path() / spec.base).lexically_normal();
  if (const auto o = root["overrides"]) {
    if (!o.IsSequence()) fail("overrides: expected a list of key=value strings");
    for (const auto& item : o) spec.overrides.push_back(item.as<std::string>());
  }
  if (const auto axes = root["axes"]) {
    if (!axes.IsSequence()) fail("axes: expected a list");
    for (const auto& a : axes) {
      if (!a.IsMap() || !a["key"] || !a["values"] || !a["values"].IsSequence()) {
        fail("axes: each entry needs key and a values list");
      }
      SweepAxis axis;
      axis.key = a["key"].as<std::string>();
      for (const auto& v : a["values"]) axis.values.push_back(v.as<std::string>());
      if (axis.values.empty()) fail("axes: '" + axis.key + "' has no values");
      spec.axes.push_back(std::move(axis));
    }
  }
  return spec;
}

std::vector<std::vector<std::string>> sweep_points(const std::vector<SweepAxis>& axes) {
  std::vector<std::vector<std::string>> points{{}};
  for (const auto& axis : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& p : points) {
      for (const auto& v : axis.values) {
        auto q = p;
        q.push_back(axis.key + "=" + v);
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

SweepResult run_sweep(const ExperimentSpec& spec, const fs::path& dir, unsigned jobs, std::ostream& log) {
  const auto points = sweep_points(spec.axes);
  struct Outcome {
    std::string row;
    std::string error;
  };
  std::vector<Outcome> outcomes(points.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      const fs::path point_dir = dir / fmt::format("point-{:04}", i);
      std::string line;
      try {
        std::vector<std::string> overrides = spec.overrides;
        overrides.insert(overrides.end(), points[i].begin(), points[i].end());
        const SimConfig config = load_config(spec.base, overrides);
        Simulation sim(config);
        const MetricsReport report = sim.run();
        fs::create_directories(point_dir);
        write_file(point_dir / "requests.csv", render([&](std::ostream& os) { sim.write_requests_csv(os); }));
        write_file(point_dir / "transfers.csv", render([&](std::ostream& os) { sim.write_transfers_csv(os); }));
        write_file(point_dir / "routing.csv", render([&](std::ostream& os) { sim.write_routing_csv(os); }));
        write_file(point_dir / "summary.csv", render([&](std::ostream& os) { write_summary_csv(os, report); }));
        outcomes[i].row = summary_row(report);
        line = fmt::format("point {}: {}", i, summary_line(report));
      } catch (const std::exception& e) {
        outcomes[i].error = e.what();
        line = fmt::format("point {} FAILED: {}", i, e.what());
      }
      const std::lock_guard lock(log_mu);
      log << line << '\n';
    }
  };
  std::vector<std::thread> pool;
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(points.size())));
  for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  SweepResult result;
  result.points = points.size();
  std::ostringstream table;
  table << "point";
  for (const auto& axis : spec.axes) table << ',' << csv_field(axis.key);
  table << ",status," << summary_header() << '\n';
  const std::string header = summary_header();
  const std::size_t blank_columns = std::count(header.begin(), header.end(), ',') + 1;
  for (std::size_t i = 0; i < points.size(); ++i) {
    table << i;
    for (const auto& kv : points[i]) table << ',' << csv_field(kv.substr(kv.find('=') + 1));
    if (outcomes[i].error.empty()) {
      table << ",ok," << outcomes[i].row << '\n';
    } else {
      ++result.failed;
      table << ',' << csv_field("error: " + outcomes[i].error) << std::string(blank_columns, ',') << '\n';
    }
  }
  fs::create_directories(dir);
  write_file(dir / "sweep.csv", table.str());
  return result;
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"kvsim: simulate KV-cache pooling across LLM serving instances"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand help for every subcommand");

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_flag;
  std::optional<std::uint64_t> seed;

  auto* run = app.add_subcommand("run", "Run one simulation and write CSV outputs");
  run->add_option("config", config_path, "Config file (YAML)")->required()->check(CLI::ExistingFile);
  run->add_option("-s,--set", overrides, "Override a config value, key.path=value (repeatable)");
  run->add_option("--seed", seed, "Override the random seed");
  run->add_option("-o,--out", out_flag, "Output directory (default $KVSIM_OUT_DIR, else ./out)");

  std::string experiment_path;
  unsigned jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run the cross product of an experiment's axes");
  sweep->add_option("experiment", experiment_path, "Experiment file (YAML)")->required()->check(CLI::ExistingFile);
  sweep->add_option("-o,--out", out_flag, "Output directory (default $KVSIM_OUT_DIR, else ./sweep-out)");
  sweep->add_option("-j,--jobs", jobs, "Points to run concurrently")->check(CLI::PositiveNumber);

  std::vector<std::string> validate_paths;
  bool print = false;
  auto* validate = app.add_subcommand("validate", "Check config files and report the first error in each");
  validate->add_option("configs", validate_paths, "Config files (YAML)")->required();
  validate->add_option("-s,--set", overrides, "Override a config value, key.path=value (repeatable)");
  validate->add_flag("--print", print, "Print the fully resolved config");

  std::optional<double> at;
  std::string only;
  auto* dump = app.add_subcommand("dump-index", "Run a config and print every instance's prefix index");
  dump->add_option("config", config_path, "Config file (YAML)")->required()->check(CLI::ExistingFile);
  dump->add_option("-s,--set", overrides, "Override a config value, key.path=value (repeatable)");
  dump->add_option("--at", at, "Stop at this simulated time instead of running to completion");
  dump->add_option("--instance", only, "Only this instance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*run) {
      if (seed) overrides.push_back(fmt::format("seed={}", *seed));
      const SimConfig config = load_config(config_path, overrides);
      const fs::path dir = output_dir(out_flag, "out");
      out << run_to_dir(config, dir) << '\n';
      return 0;
    }
    if (*sweep) {
      const ExperimentSpec spec = load_experiment(experiment_path);
      const SweepResult r = run_sweep(spec, output_dir(out_flag, "sweep-out"), jobs, out);
      out << fmt::format("{} points, {} failed\n", r.points, r.failed);
      return r.failed == 0 ? 0 : 1;
    }
    if (*validate) {
      int status = 0;
      for (const auto& path : validate_paths) {
        try {
          const SimConfig config = load_config(path, overrides);
          out << "ok: " << path << '\n';
          if (print) out << to_yaml(config) << '\n';
        } catch (const Error& e) {
          err << e.what() << '\n';
          status = 1;
        }
      }
      return status;
    }
    if (*dump) {
      const SimConfig config = load_config(config_path, overrides);
      Simulation sim(config);
      if (at) {
        sim.run_until(*at);
      } else {
        sim.run();
      }
      for (std::size_t i = 0; i < sim.instance_count(); ++i) {
        Instance& inst = sim.instance(static_cast<InstanceId>(i));
        if (!only.empty() && inst.spec().name != only) continue;
        out << fmt::format("== {} ({}) t={:.6f}\n", inst.spec().name, to_string(inst.kind()), sim.now());
        out << inst.pool().dump_index();
      }
      return 0;
    }
  } catch (const Error& e) {
    err << "kvsim: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "kvsim: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace kvpool::cli
