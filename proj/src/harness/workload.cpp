// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/harness/workload.h"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>

#include "kvpool/core/error.h"

namespace kvpool {

std::size_t Workload::request_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.turns.size();
  return n;
}

namespace {

using Rng = std::mt19937_64;

std::uint32_t draw(Rng& rng, const LengthRange& r) {
  return std::uniform_int_distribution<std::uint32_t>(r.min, r.max)(rng);
}

TokenList random_tokens(Rng& rng, std::size_t n, std::uint32_t vocab) {
  std::uniform_int_distribution<Token> dist(0, vocab - 1);
  TokenList t(n);
  for (auto& x : t) x = dist(rng);
  return t;
}

SimTime draw_think(Rng& rng, double mean) {
  return mean > 0 ? std::exponential_distribution<double>(1.0 / mean)(rng) : 0.0;
}

// Duplicates the base sessions `share_ratio` times with fresh ids, then lays
// every request on one Poisson stream.
Workload finish(std::vector<Session> base, const WorkloadParams& params, Rng& rng, std::uint32_t n_instances) {
  Workload w;
  const std::uint32_t copies = std::max<std::uint32_t>(1, params.share_ratio);
  for (std::uint32_t c = 0; c < copies; ++c) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      Session dup = base[i];
      dup.id = static_cast<SessionId>(c * base.size() + i);
      for (auto& t : dup.turns) t.session_id = dup.id;
      w.sessions.push_back(std::move(dup));
    }
  }
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < w.sessions.size(); ++i) slots.insert(slots.end(), w.sessions[i].turns.size(), i);
  std::shuffle(slots.begin(), slots.end(), rng);

  const double rate = params.request_rate * std::max<std::uint32_t>(1, n_instances);
  std::exponential_distribution<double> gap(rate);
  std::vector<std::size_t> next_turn(w.sessions.size(), 0);
  SimTime t = 0.0;
  RequestId id = 0;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    if (k > 0) t += gap(rng);
    Request& r = w.sessions[slots[k]].turns[next_turn[slots[k]]++];
    r.arrival_time = t;
    r.id = id++;
  }
  return w;
}

}  // namespace

Workload generate_workload(const WorkloadParams& params, const ModelConfig& model, std::uint64_t seed,
                           std::uint32_t n_instances) {
  Rng rng(seed);
  const TokenList global_prefix =
      params.kind == WorkloadKind::kAgent ? random_tokens(rng, params.shared_prefix_len, params.vocab_size)
                                          : TokenList{};
  std::vector<Session> base(params.sessions);
  for (std::size_t s = 0; s < base.size(); ++s) {
    Session& session = base[s];
    session.id = s;
    TokenList context = params.kind == WorkloadKind::kDocQa
                            ? random_tokens(rng, params.shared_prefix_len, params.vocab_size)
                            : global_prefix;
    const std::uint32_t turns = draw(rng, params.turns);
    for (std::uint32_t k = 0; k < turns; ++k) {
      const TokenList question = random_tokens(rng, draw(rng, params.question_len), params.vocab_size);
      const std::uint32_t gen = draw(rng, params.gen_len);
      const SimTime think = draw_think(rng, params.think_time_mean);
      if (context.size() + question.size() + gen > model.context_window) break;
      Request r;
      r.session_id = session.id;
      r.turn_index = k;
      r.prompt = context;
      r.prompt.insert(r.prompt.end(), question.begin(), question.end());
      r.gen_len = gen;
      r.output = random_tokens(rng, gen, params.vocab_size);
      context = r.prompt;
      context.insert(context.end(), r.output.begin(), r.output.end());
      session.turns.push_back(std::move(r));
      session.think.push_back(think);
    }
  }
  std::erase_if(base, [](const Session& s) { return s.turns.empty(); });
  return finish(std::move(base), params, rng, n_instances);
}

Workload load_trace(const std::filesystem::path& path, const WorkloadParams& params, std::uint64_t seed,
                    std::uint32_t n_instances) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfigError, fmt::format("{}: cannot open trace", path.string()));
  struct Row {
    std::uint64_t turn;
    TokenList prompt;
    std::uint32_t gen_len;
  };
  std::map<std::uint64_t, std::vector<Row>> by_session;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Row row{j.at("turn").get<std::uint64_t>(), j.at("prompt_tokens").get<TokenList>(),
              j.at("gen_len").get<std::uint32_t>()};
      if (row.prompt.empty() || row.gen_len == 0) throw std::invalid_argument("empty prompt or gen_len 0");
      by_session[j.at("session_id").get<std::uint64_t>()].push_back(std::move(row));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kConfigError, fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  Rng rng(seed);
  std::vector<Session> base;
  for (auto& [sid, rows] : by_session) {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.turn < b.turn; });
    Session s;
    s.id = base.size();
    for (std::size_t k = 0; k < rows.size(); ++k) {
      Request r;
      r.session_id = s.id;
      r.turn_index = static_cast<std::uint32_t>(k);
      r.prompt = rows[k].prompt;
      r.gen_len = rows[k].gen_len;
      r.sampling_params["trace_session"] = std::to_string(sid);
      const TokenList* next = k + 1 < rows.size() ? &rows[k + 1].prompt : nullptr;
      if (next != nullptr && next->size() >= r.prompt.size() + r.gen_len &&
          std::equal(r.prompt.begin(), r.prompt.end(), next->begin())) {
        r.output.assign(next->begin() + static_cast<std::ptrdiff_t>(r.prompt.size()),
                        next->begin() + static_cast<std::ptrdiff_t>(r.prompt.size() + r.gen_len));
      } else {
        r.output = random_tokens(rng, r.gen_len, params.vocab_size);
      }
      s.turns.push_back(std::move(r));
      s.think.push_back(draw_think(rng, params.think_time_mean));
    }
    base.push_back(std::move(s));
  }
  return finish(std::move(base), params, rng, n_instances);
}

Workload make_workload(const SimConfig& config) {
  const auto n = static_cast<std::uint32_t>(config.cluster.instances.size());
  if (config.workload.source == WorkloadSource::kTrace) {
    return load_trace(config.workload.trace_file, config.workload, config.seed, n);
  }
  return generate_workload(config.workload, config.model, config.seed, n);
}

}  // namespace kvpool
