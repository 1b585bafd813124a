// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/core/config.h"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "kvpool/core/error.h"

namespace kvpool {

std::string_view to_string(TransferMode mode) {
  switch (mode) {
    case TransferMode::kByLayer:
      return "by-layer";
    case TransferMode::kByRequest:
      return "by-request";
    case TransferMode::kByRequestAgg:
      return "by-request-agg";
  }
  return "unknown";
}

std::string_view to_string(CachingDesign design) {
  switch (design) {
    case CachingDesign::kPdBasic:
      return "pd-basic";
    case CachingDesign::kPdCaching1:
      return "pd-caching-1";
    case CachingDesign::kPdCaching2:
      return "pd-caching-2";
    case CachingDesign::kPdCaching3:
      return "pd-caching-3";
  }
  return "unknown";
}

std::string_view to_string(Policy policy) {
  switch (policy) {
    case Policy::kLeastLoad:
      return "least-load";
    case Policy::kSessionId:
      return "session-id";
    case Policy::kPromptTree:
      return "prompt-tree";
  }
  return "unknown";
}

std::string_view to_string(ReusePolicy policy) {
  switch (policy) {
    case ReusePolicy::kCostModel:
      return "cost-model";
    case ReusePolicy::kAlways:
      return "always";
    case ReusePolicy::kNever:
      return "never";
  }
  return "unknown";
}

std::string_view to_string(WorkloadKind kind) {
  switch (kind) {
    case WorkloadKind::kChat:
      return "chat";
    case WorkloadKind::kDocQa:
      return "docqa";
    case WorkloadKind::kAgent:
      return "agent";
  }
  return "unknown";
}

WorkloadParams default_workload(WorkloadKind kind) {
  WorkloadParams w;
  w.kind = kind;
  switch (kind) {
    case WorkloadKind::kChat:
      // Multi-turn conversations, broad uniform length spread.
      w.turns = {1, 5};
      w.question_len = {32, 512};
      w.gen_len = {32, 384};
      w.shared_prefix_len = 0;
      break;
    case WorkloadKind::kDocQa:
      // 1k-token document per session, five questions, short answers.
      w.turns = {5, 5};
      w.question_len = {16, 64};
      w.gen_len = {8, 48};
      w.shared_prefix_len = 1024;
      break;
    case WorkloadKind::kAgent:
      // Long two-shot example shared by every session, long generations.
      w.turns = {2, 6};
      w.question_len = {32, 160};
      w.gen_len = {128, 512};
      w.shared_prefix_len = 1536;
      break;
  }
  return w;
}

SimConfig default_config() {
  SimConfig config;
  config.cluster.instance_defaults.hbm_capacity_blocks = 4096;
  config.cluster.instance_defaults.dram_capacity_blocks = 16384;
  config.block.layout = Layout::kAggregated;
  config.workload = default_workload(WorkloadKind::kChat);
  apply_setting(config, "1P1D-CC");
  return config;
}

namespace {

std::string normalize(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    out.push_back(c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

// A YAML mapping plus the dotted path used to reach it, for diagnostics.
class Section {
 public:
  Section(YAML::Node node, std::string path, std::string source)
      : node_(std::move(node)), path_(std::move(path)), source_(std::move(source)) {}

  bool has(const std::string& key) const { return node_ && node_[key].IsDefined(); }

  [[noreturn]] void fail(const YAML::Node& at, const std::string& key,
                         const std::string& message) const {
    const int line = at.Mark().line >= 0 ? at.Mark().line + 1 : node_.Mark().line + 1;
    throw Error(ErrorCode::kConfigError,
                fmt::format("{}:{}: {}: {}", source_, line, join(key), message));
  }

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    fail(has(key) ? node_[key] : node_, key, message);
  }

  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    if (!has(key)) return fallback;
    const YAML::Node value = node_[key];
    try {
      if constexpr (std::is_same_v<T, bool>) {
        return value.as<bool>();
      } else if constexpr (std::is_unsigned_v<T>) {
        const auto raw = value.as<long long>();
        if (raw < 0) fail(key, "must be non-negative");
        return static_cast<T>(raw);
      } else {
        return value.as<T>();
      }
    } catch (const YAML::Exception&) {
      fail(key, "cannot interpret '" + (value.IsScalar() ? value.Scalar() : std::string("<node>")) +
                    "'");
    }
  }

  Section child(const std::string& key) const {
    YAML::Node sub = has(key) ? node_[key] : YAML::Node(YAML::NodeType::Map);
    if (!sub.IsMap()) fail(key, "expected a mapping");
    return Section(sub, join(key), source_);
  }

  std::vector<Section> items(const std::string& key) const {
    std::vector<Section> out;
    if (!has(key)) return out;
    const YAML::Node seq = node_[key];
    if (!seq.IsSequence()) fail(key, "expected a list");
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (!seq[i].IsMap()) fail(seq[i], key, "list items must be mappings");
      out.emplace_back(seq[i], join(key) + "." + std::to_string(i), source_);
    }
    return out;
  }

  LengthRange range(const std::string& key, LengthRange fallback) const {
    if (!has(key)) return fallback;
    const YAML::Node value = node_[key];
    try {
      if (value.IsSequence() && value.size() == 2) {
        return {value[0].as<std::uint32_t>(), value[1].as<std::uint32_t>()};
      }
      if (value.IsMap()) {
        return {value["min"].as<std::uint32_t>(), value["max"].as<std::uint32_t>()};
      }
      if (value.IsScalar()) {
        const auto v = value.as<std::uint32_t>();
        return {v, v};
      }
    } catch (const YAML::Exception&) {
    }
    fail(key, "expected [min, max], {min, max} or a single integer");
  }

  void check_keys(std::initializer_list<std::string_view> allowed) const {
    if (!node_) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        fail(kv.first, key, "unknown key");
      }
    }
  }

  const YAML::Node& node() const { return node_; }

 private:
  YAML::Node node_;
  std::string path_;
  std::string source_;
};

template <typename E, std::size_t N>
E parse_enum(const Section& s, const std::string& key, E fallback,
             const std::pair<std::string_view, E> (&table)[N]) {
  if (!s.has(key)) return fallback;
  const auto raw = normalize(s.get<std::string>(key, ""));
  for (const auto& [name, value] : table) {
    if (raw == name) return value;
  }
  std::string options;
  for (const auto& [name, value] : table) options += (options.empty() ? "" : ", ") + std::string(name);
  s.fail(key, "unknown value '" + raw + "' (expected one of: " + options + ")");
}

constexpr std::pair<std::string_view, Layout> kLayouts[] = {
    {"discrete", Layout::kDiscrete}, {"aggregated", Layout::kAggregated}};
constexpr std::pair<std::string_view, InstanceKind> kKinds[] = {
    {"prefill", InstanceKind::kPrefillOnly},
    {"prefill-only", InstanceKind::kPrefillOnly},
    {"decode", InstanceKind::kDecodeOnly},
    {"decode-only", InstanceKind::kDecodeOnly},
    {"colocated", InstanceKind::kColocated},
    {"pd-colocated", InstanceKind::kColocated}};
constexpr std::pair<std::string_view, CachingDesign> kDesigns[] = {
    {"pd-basic", CachingDesign::kPdBasic},
    {"pd-caching-1", CachingDesign::kPdCaching1},
    {"pd-caching-2", CachingDesign::kPdCaching2},
    {"pd-caching-3", CachingDesign::kPdCaching3}};
constexpr std::pair<std::string_view, TransferMode> kModes[] = {
    {"by-layer", TransferMode::kByLayer},
    {"by-request", TransferMode::kByRequest},
    {"by-request-agg", TransferMode::kByRequestAgg}};
constexpr std::pair<std::string_view, Policy> kPolicies[] = {
    {"least-load", Policy::kLeastLoad},
    {"session-id", Policy::kSessionId},
    {"prompt-tree", Policy::kPromptTree}};
constexpr std::pair<std::string_view, ReusePolicy> kReusePolicies[] = {
    {"cost-model", ReusePolicy::kCostModel}, {"always", ReusePolicy::kAlways}, {"never", ReusePolicy::kNever}};
constexpr std::pair<std::string_view, WorkloadKind> kWorkloadKinds[] = {
    {"chat", WorkloadKind::kChat}, {"docqa", WorkloadKind::kDocQa}, {"agent", WorkloadKind::kAgent}};
constexpr std::pair<std::string_view, WorkloadSource> kSources[] = {
    {"synthetic", WorkloadSource::kSynthetic}, {"trace", WorkloadSource::kTrace}};

std::vector<std::string> split_path(std::string_view dotted) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (start <= dotted.size()) {
    const auto dot = dotted.find('.', start);
    const auto end = dot == std::string_view::npos ? dotted.size() : dot;
    parts.emplace_back(dotted.substr(start, end - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

bool is_index(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

void set_path(YAML::Node node, std::span<const std::string> path, const YAML::Node& value) {
  const std::string& key = path.front();
  if (path.size() == 1) {
    if (is_index(key) && node.IsSequence()) {
      node[std::stoul(key)] = value;
    } else {
      node[key] = value;
    }
    return;
  }
  YAML::Node next;
  if (is_index(key) && node.IsSequence()) {
    const auto idx = std::stoul(key);
    if (idx >= node.size()) {
      throw Error(ErrorCode::kConfigError, "override index out of range: " + key);
    }
    next = node[idx];
  } else {
    if (!node[key].IsDefined() || node[key].IsNull()) node[key] = YAML::Node(YAML::NodeType::Map);
    next = node[key];
  }
  set_path(next, path.subspan(1), value);
}

void apply_override(YAML::Node& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw Error(ErrorCode::kConfigError, "override must look like key.path=value: '" + assignment + "'");
  }
  const auto path = split_path(std::string_view(assignment).substr(0, eq));
  YAML::Node value;
  try {
    value = YAML::Load(assignment.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw Error(ErrorCode::kConfigError, "override '" + assignment + "': " + e.what());
  }
  set_path(root, path, value);
}

InstanceSpec parse_instance(const Section& s, const InstanceSpec& defaults, std::size_t ordinal) {
  s.check_keys({"name", "kind", "tp", "pp", "hbm_blocks", "dram_blocks", "caching"});
  InstanceSpec spec = defaults;
  spec.id = static_cast<InstanceId>(ordinal);
  spec.name = s.get<std::string>("name", fmt::format("i{}", ordinal));
  spec.kind = parse_enum(s, "kind", InstanceKind::kColocated, kKinds);
  spec.parallelism.tp_degree = s.get<std::uint32_t>("tp", defaults.parallelism.tp_degree);
  spec.parallelism.pp_degree = s.get<std::uint32_t>("pp", defaults.parallelism.pp_degree);
  spec.hbm_capacity_blocks = s.get<std::uint32_t>("hbm_blocks", defaults.hbm_capacity_blocks);
  spec.dram_capacity_blocks = s.get<std::uint32_t>("dram_blocks", defaults.dram_capacity_blocks);
  spec.caching_enabled = s.get<bool>("caching", defaults.caching_enabled);
  if (spec.parallelism.tp_degree == 0) s.fail("tp", "must be >= 1");
  if (spec.parallelism.pp_degree == 0) s.fail("pp", "must be >= 1");
  if (spec.hbm_capacity_blocks == 0) s.fail("hbm_blocks", "must be > 0");
  return spec;
}

SimConfig interpret(const YAML::Node& root, const std::string& source) {
  if (root && !root.IsNull() && !root.IsMap()) {
    throw Error(ErrorCode::kConfigError, source + ": top level must be a mapping");
  }
  SimConfig config = default_config();
  const Section top(root ? root : YAML::Node(YAML::NodeType::Map), "", source);
  top.check_keys({"seed", "model", "block", "cluster", "engine", "network", "scheduler", "workload"});

  config.seed = top.get<std::uint64_t>("seed", config.seed);

  const Section model = top.child("model");
  model.check_keys({"num_layers", "hidden_size", "kv_bytes_per_token_per_layer", "context_window"});
  config.model.num_layers = model.get<std::uint32_t>("num_layers", config.model.num_layers);
  if (model.has("hidden_size")) {
    config.model.kv_bytes_per_token_per_layer = 2ULL * 2ULL * model.get<std::uint64_t>("hidden_size", 0);
  }
  config.model.kv_bytes_per_token_per_layer =
      model.get<std::uint64_t>("kv_bytes_per_token_per_layer", config.model.kv_bytes_per_token_per_layer);
  config.model.context_window = model.get<std::uint32_t>("context_window", config.model.context_window);
  if (config.model.num_layers == 0) model.fail("num_layers", "must be > 0");
  if (config.model.kv_bytes_per_token_per_layer == 0) model.fail("kv_bytes_per_token_per_layer", "must be > 0");
  if (config.model.context_window == 0) model.fail("context_window", "must be > 0");

  const Section block = top.child("block");
  block.check_keys({"size", "layout"});
  config.block.block_size = block.get<std::uint32_t>("size", config.block.block_size);
  config.block.layout = parse_enum(block, "layout", config.block.layout, kLayouts);
  if (config.block.block_size == 0) block.fail("size", "must be > 0");

  const Section cluster = top.child("cluster");
  cluster.check_keys({"setting", "colocated_count", "defaults", "instances", "design", "transfer_mode",
                      "heartbeat_interval", "failure_timeout", "failures"});
  const Section defaults = cluster.child("defaults");
  defaults.check_keys({"tp", "pp", "hbm_blocks", "dram_blocks", "caching"});
  auto& tmpl = config.cluster.instance_defaults;
  tmpl.parallelism.tp_degree = defaults.get<std::uint32_t>("tp", tmpl.parallelism.tp_degree);
  tmpl.parallelism.pp_degree = defaults.get<std::uint32_t>("pp", tmpl.parallelism.pp_degree);
  tmpl.hbm_capacity_blocks = defaults.get<std::uint32_t>("hbm_blocks", tmpl.hbm_capacity_blocks);
  tmpl.dram_capacity_blocks = defaults.get<std::uint32_t>("dram_blocks", tmpl.dram_capacity_blocks);
  tmpl.caching_enabled = defaults.get<bool>("caching", tmpl.caching_enabled);

  if (cluster.has("instances")) {
    config.cluster.setting.clear();
    config.cluster.instances.clear();
    std::size_t ordinal = 0;
    for (const auto& item : cluster.items("instances")) {
      config.cluster.instances.push_back(parse_instance(item, tmpl, ordinal++));
    }
  } else {
    const auto setting = cluster.get<std::string>("setting", config.cluster.setting);
    const auto count = cluster.get<std::uint32_t>("colocated_count", 2);
    if (!apply_setting(config, setting, count)) cluster.fail("setting", "unrecognized setting '" + setting + "'");
  }
  config.cluster.design = parse_enum(cluster, "design", config.cluster.design, kDesigns);
  config.cluster.transfer_mode = parse_enum(cluster, "transfer_mode", config.cluster.transfer_mode, kModes);
  config.cluster.heartbeat_interval = cluster.get<double>("heartbeat_interval", config.cluster.heartbeat_interval);
  config.cluster.failure_timeout = cluster.get<double>("failure_timeout", config.cluster.failure_timeout);
  for (const auto& item : cluster.items("failures")) {
    item.check_keys({"time", "instance"});
    if (!item.has("time") || !item.has("instance")) item.fail("time", "failure entries need time and instance");
    config.cluster.failures.push_back({item.get<double>("time", 0.0), item.get<std::string>("instance", "")});
  }

  const Section engine = top.child("engine");
  engine.check_keys({"prefill_alpha", "prefill_gamma", "decode_alpha", "decode_delta", "swap_cost_per_block",
                     "max_batch_tokens", "max_batch_size", "max_decode_batch", "swap_to_dram", "retry_backoff",
                     "reuse_policy"});
  auto& e = config.engine;
  e.timing.prefill_alpha = engine.get<double>("prefill_alpha", e.timing.prefill_alpha);
  e.timing.prefill_gamma = engine.get<double>("prefill_gamma", e.timing.prefill_gamma);
  e.timing.decode_alpha = engine.get<double>("decode_alpha", e.timing.decode_alpha);
  e.timing.decode_delta = engine.get<double>("decode_delta", e.timing.decode_delta);
  e.timing.swap_cost_per_block = engine.get<double>("swap_cost_per_block", e.timing.swap_cost_per_block);
  e.max_batch_tokens = engine.get<std::uint32_t>("max_batch_tokens", e.max_batch_tokens);
  e.max_batch_size = engine.get<std::uint32_t>("max_batch_size", e.max_batch_size);
  e.max_decode_batch = engine.get<std::uint32_t>("max_decode_batch", e.max_decode_batch);
  e.swap_to_dram = engine.get<bool>("swap_to_dram", e.swap_to_dram);
  e.retry_backoff = engine.get<double>("retry_backoff", e.retry_backoff);
  e.reuse_policy = parse_enum(engine, "reuse_policy", e.reuse_policy, kReusePolicies);

  const Section network = top.child("network");
  network.check_keys({"per_call_overhead", "hbm_bandwidth", "dram_bandwidth", "communicators"});
  auto& n = config.network;
  n.per_call_overhead = network.get<double>("per_call_overhead", n.per_call_overhead);
  n.hbm_bandwidth = network.get<double>("hbm_bandwidth", n.hbm_bandwidth);
  n.dram_bandwidth = network.get<double>("dram_bandwidth", n.dram_bandwidth);
  n.communicators = network.get<std::uint32_t>("communicators", n.communicators);

  const Section scheduler = top.child("scheduler");
  scheduler.check_keys({"policy", "ttl"});
  config.scheduler.policy = parse_enum(scheduler, "policy", config.scheduler.policy, kPolicies);
  config.scheduler.ttl = scheduler.get<double>("ttl", config.scheduler.ttl);

  const Section workload = top.child("workload");
  workload.check_keys({"source", "kind", "trace_file", "sessions", "request_rate", "share_ratio",
                       "think_time_mean", "vocab_size", "turns", "question_len", "gen_len",
                       "shared_prefix_len"});
  const auto kind = parse_enum(workload, "kind", config.workload.kind, kWorkloadKinds);
  WorkloadParams w = default_workload(kind);
  w.source = parse_enum(workload, "source", WorkloadSource::kSynthetic, kSources);
  w.trace_file = workload.get<std::string>("trace_file", "");
  w.sessions = workload.get<std::uint32_t>("sessions", config.workload.sessions);
  w.request_rate = workload.get<double>("request_rate", config.workload.request_rate);
  w.share_ratio = workload.get<std::uint32_t>("share_ratio", config.workload.share_ratio);
  w.think_time_mean = workload.get<double>("think_time_mean", config.workload.think_time_mean);
  w.vocab_size = workload.get<std::uint32_t>("vocab_size", config.workload.vocab_size);
  w.turns = workload.range("turns", w.turns);
  w.question_len = workload.range("question_len", w.question_len);
  w.gen_len = workload.range("gen_len", w.gen_len);
  w.shared_prefix_len = workload.get<std::uint32_t>("shared_prefix_len", w.shared_prefix_len);
  config.workload = w;

  return config;
}

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kConfigError, what); }

}  // namespace

bool apply_setting(SimConfig& config, std::string_view setting, std::uint32_t colocated_count) {
  const std::string s = normalize(setting);
  const bool cached = s.size() > 3 && s.ends_with("-cc");
  const std::string base = cached ? s.substr(0, s.size() - 3) : s;
  std::vector<InstanceSpec> roster;
  auto make = [&](InstanceKind kind, const std::string& name) {
    InstanceSpec spec = config.cluster.instance_defaults;
    spec.id = static_cast<InstanceId>(roster.size());
    spec.name = name;
    spec.kind = kind;
    spec.caching_enabled = cached;
    roster.push_back(spec);
  };
  if (base == "pd") {
    if (colocated_count == 0) return false;
    for (std::uint32_t i = 0; i < colocated_count; ++i) make(InstanceKind::kColocated, fmt::format("c{}", i));
  } else {
    // <x>p<y>d
    const auto p = base.find('p');
    const auto d = base.find('d');
    if (p == std::string::npos || d == std::string::npos || p == 0 || d != base.size() - 1 || d <= p + 1) {
      return false;
    }
    const std::string xs = base.substr(0, p);
    const std::string ys = base.substr(p + 1, d - p - 1);
    if (!is_index(xs) || !is_index(ys)) return false;
    const auto x = std::stoul(xs);
    const auto y = std::stoul(ys);
    if (x == 0 || y == 0) return false;
    for (std::size_t i = 0; i < x; ++i) make(InstanceKind::kPrefillOnly, fmt::format("p{}", i));
    for (std::size_t i = 0; i < y; ++i) make(InstanceKind::kDecodeOnly, fmt::format("d{}", i));
    config.cluster.design = cached ? CachingDesign::kPdCaching3 : CachingDesign::kPdBasic;
  }
  config.cluster.setting = std::string(setting);
  config.cluster.instances = std::move(roster);
  return true;
}

void validate_config(const SimConfig& c) {
  if (c.model.num_layers == 0) invalid("model.num_layers must be > 0");
  if (c.model.kv_bytes_per_token_per_layer == 0) invalid("model.kv_bytes_per_token_per_layer must be > 0");
  if (c.model.context_window == 0) invalid("model.context_window must be > 0");
  if (c.block.block_size == 0) invalid("block.size must be > 0");

  const auto& instances = c.cluster.instances;
  if (instances.empty()) invalid("cluster.instances: at least one instance is required");
  std::set<std::string> names;
  std::size_t prefill = 0, decode = 0, colocated = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& spec = instances[i];
    if (spec.id != i) invalid(fmt::format("cluster.instances.{}: id must equal roster position", i));
    if (!names.insert(spec.name).second) invalid(fmt::format("cluster.instances.{}: duplicate name '{}'", i, spec.name));
    if (spec.hbm_capacity_blocks == 0) invalid(fmt::format("cluster.instances.{}.hbm_blocks must be > 0", i));
    if (spec.parallelism.tp_degree == 0 || spec.parallelism.pp_degree == 0) {
      invalid(fmt::format("cluster.instances.{}: tp and pp must be >= 1", i));
    }
    if (spec.parallelism.pp_degree > c.model.num_layers) {
      invalid(fmt::format("cluster.instances.{}.pp exceeds model.num_layers", i));
    }
    switch (spec.kind) {
      case InstanceKind::kPrefillOnly: ++prefill; break;
      case InstanceKind::kDecodeOnly: ++decode; break;
      case InstanceKind::kColocated: ++colocated; break;
    }
  }
  if (colocated > 0 && (prefill > 0 || decode > 0)) {
    invalid("cluster.instances: colocated instances cannot be mixed with prefill/decode instances");
  }
  if (colocated == 0 && (prefill == 0 || decode == 0)) {
    invalid("cluster.instances: disaggregated clusters need at least one prefill and one decode instance");
  }
  const auto mode = c.cluster.transfer_mode;
  if (mode == TransferMode::kByRequestAgg && c.block.layout != Layout::kAggregated) {
    invalid("cluster.transfer_mode: by-request-agg requires block.layout = aggregated");
  }
  if (mode == TransferMode::kByLayer && c.block.layout != Layout::kDiscrete) {
    invalid("cluster.transfer_mode: by-layer requires block.layout = discrete");
  }
  if (!(c.cluster.heartbeat_interval > 0)) invalid("cluster.heartbeat_interval must be > 0");
  if (c.cluster.failure_timeout < c.cluster.heartbeat_interval) {
    invalid("cluster.failure_timeout must be >= cluster.heartbeat_interval");
  }
  for (std::size_t i = 0; i < c.cluster.failures.size(); ++i) {
    const auto& f = c.cluster.failures[i];
    if (f.time < 0) invalid(fmt::format("cluster.failures.{}.time must be >= 0", i));
    if (!names.contains(f.instance)) invalid(fmt::format("cluster.failures.{}.instance: unknown instance '{}'", i, f.instance));
  }

  const auto& t = c.engine.timing;
  if (!(t.prefill_alpha > 0)) invalid("engine.prefill_alpha must be > 0");
  if (!(t.prefill_gamma > 0)) invalid("engine.prefill_gamma must be > 0");
  if (!(t.decode_alpha > 0)) invalid("engine.decode_alpha must be > 0");
  if (!(t.decode_delta > 0)) invalid("engine.decode_delta must be > 0");
  if (!(t.swap_cost_per_block > 0)) invalid("engine.swap_cost_per_block must be > 0");
  if (c.engine.max_batch_tokens == 0) invalid("engine.max_batch_tokens must be > 0");
  if (c.engine.max_batch_size == 0) invalid("engine.max_batch_size must be > 0");
  if (c.engine.max_decode_batch == 0) invalid("engine.max_decode_batch must be > 0");
  if (!(c.engine.retry_backoff > 0)) invalid("engine.retry_backoff must be > 0");

  const auto& n = c.network;
  if (!(n.per_call_overhead > 0)) invalid("network.per_call_overhead must be > 0");
  if (!(n.hbm_bandwidth > 0)) invalid("network.hbm_bandwidth must be > 0");
  if (!(n.dram_bandwidth > 0)) invalid("network.dram_bandwidth must be > 0");
  if (n.dram_bandwidth > n.hbm_bandwidth) invalid("network.dram_bandwidth must not exceed network.hbm_bandwidth");
  if (n.communicators == 0) invalid("network.communicators must be >= 1");

  if (!(c.scheduler.ttl > 0)) invalid("scheduler.ttl must be > 0");

  const auto& w = c.workload;
  if (!(w.request_rate > 0)) invalid("workload.request_rate must be > 0");
  if (w.share_ratio == 0) invalid("workload.share_ratio must be >= 1");
  if (w.think_time_mean < 0) invalid("workload.think_time_mean must be >= 0");
  if (w.source == WorkloadSource::kTrace) {
    if (w.trace_file.empty()) invalid("workload.trace_file is required when workload.source = trace");
  } else {
    if (w.sessions == 0) invalid("workload.sessions must be >= 1");
    if (w.vocab_size < 2) invalid("workload.vocab_size must be >= 2");
    auto check_range = [](const LengthRange& r, const char* key) {
      if (r.min == 0 || r.min > r.max) invalid(fmt::format("workload.{} must satisfy 1 <= min <= max", key));
    };
    check_range(w.turns, "turns");
    check_range(w.question_len, "question_len");
    check_range(w.gen_len, "gen_len");
    const std::uint64_t longest = w.shared_prefix_len +
                                  static_cast<std::uint64_t>(w.question_len.min) + w.gen_len.min;
    if (longest > c.model.context_window) {
      invalid("workload: a single-turn request does not fit model.context_window");
    }
  }
}

SimConfig parse_config(std::string_view text, std::string_view source_name,
                       std::span<const std::string> overrides) {
  const std::string source(source_name);
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::ParserException& e) {
    throw Error(ErrorCode::kConfigError, fmt::format("{}:{}: parse error: {}", source, e.mark.line + 1, e.msg));
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  for (const auto& o : overrides) apply_override(root, o);
  SimConfig config = interpret(root, source);
  validate_config(config);
  return config;
}

SimConfig load_config(const std::filesystem::path& path, std::span<const std::string> overrides) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  SimConfig config = parse_config(buffer.str(), path.string(), overrides);
  auto& trace = config.workload.trace_file;
  if (!trace.empty() && std::filesystem::path(trace).is_relative()) {
    trace = (path.parent_path() / trace).lexically_normal().string();
  }
  return config;
}

std::string to_yaml(const SimConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap
      << YAML::Key << "num_layers" << YAML::Value << c.model.num_layers
      << YAML::Key << "kv_bytes_per_token_per_layer" << YAML::Value << c.model.kv_bytes_per_token_per_layer
      << YAML::Key << "context_window" << YAML::Value << c.model.context_window << YAML::EndMap;
  out << YAML::Key << "block" << YAML::Value << YAML::BeginMap
      << YAML::Key << "size" << YAML::Value << c.block.block_size
      << YAML::Key << "layout" << YAML::Value << std::string(to_string(c.block.layout)) << YAML::EndMap;

  out << YAML::Key << "cluster" << YAML::Value << YAML::BeginMap;
  const auto& d = c.cluster.instance_defaults;
  out << YAML::Key << "defaults" << YAML::Value << YAML::BeginMap
      << YAML::Key << "tp" << YAML::Value << d.parallelism.tp_degree
      << YAML::Key << "pp" << YAML::Value << d.parallelism.pp_degree
      << YAML::Key << "hbm_blocks" << YAML::Value << d.hbm_capacity_blocks
      << YAML::Key << "dram_blocks" << YAML::Value << d.dram_capacity_blocks
      << YAML::Key << "caching" << YAML::Value << d.caching_enabled << YAML::EndMap;
  out << YAML::Key << "instances" << YAML::Value << YAML::BeginSeq;
  for (const auto& spec : c.cluster.instances) {
    out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << spec.name
        << YAML::Key << "kind" << YAML::Value << std::string(to_string(spec.kind))
        << YAML::Key << "tp" << YAML::Value << spec.parallelism.tp_degree
        << YAML::Key << "pp" << YAML::Value << spec.parallelism.pp_degree
        << YAML::Key << "hbm_blocks" << YAML::Value << spec.hbm_capacity_blocks
        << YAML::Key << "dram_blocks" << YAML::Value << spec.dram_capacity_blocks
        << YAML::Key << "caching" << YAML::Value << spec.caching_enabled << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "design" << YAML::Value << std::string(to_string(c.cluster.design));
  out << YAML::Key << "transfer_mode" << YAML::Value << std::string(to_string(c.cluster.transfer_mode));
  out << YAML::Key << "heartbeat_interval" << YAML::Value << c.cluster.heartbeat_interval;
  out << YAML::Key << "failure_timeout" << YAML::Value << c.cluster.failure_timeout;
  out << YAML::Key << "failures" << YAML::Value << YAML::BeginSeq;
  for (const auto& f : c.cluster.failures) {
    out << YAML::BeginMap << YAML::Key << "time" << YAML::Value << f.time
        << YAML::Key << "instance" << YAML::Value << f.instance << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;

  const auto& t = c.engine.timing;
  out << YAML::Key << "engine" << YAML::Value << YAML::BeginMap
      << YAML::Key << "prefill_alpha" << YAML::Value << t.prefill_alpha
      << YAML::Key << "prefill_gamma" << YAML::Value << t.prefill_gamma
      << YAML::Key << "decode_alpha" << YAML::Value << t.decode_alpha
      << YAML::Key << "decode_delta" << YAML::Value << t.decode_delta
      << YAML::Key << "swap_cost_per_block" << YAML::Value << t.swap_cost_per_block
      << YAML::Key << "max_batch_tokens" << YAML::Value << c.engine.max_batch_tokens
      << YAML::Key << "max_batch_size" << YAML::Value << c.engine.max_batch_size
      << YAML::Key << "max_decode_batch" << YAML::Value << c.engine.max_decode_batch
      << YAML::Key << "swap_to_dram" << YAML::Value << c.engine.swap_to_dram
      << YAML::Key << "retry_backoff" << YAML::Value << c.engine.retry_backoff
      << YAML::Key << "reuse_policy" << YAML::Value << std::string(to_string(c.engine.reuse_policy))
      << YAML::EndMap;
  out << YAML::Key << "network" << YAML::Value << YAML::BeginMap
      << YAML::Key << "per_call_overhead" << YAML::Value << c.network.per_call_overhead
      << YAML::Key << "hbm_bandwidth" << YAML::Value << c.network.hbm_bandwidth
      << YAML::Key << "dram_bandwidth" << YAML::Value << c.network.dram_bandwidth
      << YAML::Key << "communicators" << YAML::Value << c.network.communicators << YAML::EndMap;
  out << YAML::Key << "scheduler" << YAML::Value << YAML::BeginMap
      << YAML::Key << "policy" << YAML::Value << std::string(to_string(c.scheduler.policy))
      << YAML::Key << "ttl" << YAML::Value << c.scheduler.ttl << YAML::EndMap;

  const auto& w = c.workload;
  auto range = [&out](const LengthRange& r) {
    out << YAML::Flow << YAML::BeginSeq << r.min << r.max << YAML::EndSeq;
  };
  out << YAML::Key << "workload" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "source" << YAML::Value
      << std::string(w.source == WorkloadSource::kTrace ? "trace" : "synthetic");
  out << YAML::Key << "kind" << YAML::Value << std::string(to_string(w.kind));
  if (!w.trace_file.empty()) out << YAML::Key << "trace_file" << YAML::Value << w.trace_file;
  out << YAML::Key << "sessions" << YAML::Value << w.sessions;
  out << YAML::Key << "request_rate" << YAML::Value << w.request_rate;
  out << YAML::Key << "share_ratio" << YAML::Value << w.share_ratio;
  out << YAML::Key << "think_time_mean" << YAML::Value << w.think_time_mean;
  out << YAML::Key << "vocab_size" << YAML::Value << w.vocab_size;
  out << YAML::Key << "turns" << YAML::Value;
  range(w.turns);
  out << YAML::Key << "question_len" << YAML::Value;
  range(w.question_len);
  out << YAML::Key << "gen_len" << YAML::Value;
  range(w.gen_len);
  out << YAML::Key << "shared_prefix_len" << YAML::Value << w.shared_prefix_len;
  out << YAML::EndMap;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace kvpool
