// Copyright (C) 2026 The kvpool Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpool/harness/metrics.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace kvpool {

namespace {

std::string num(double v) { return fmt::format("{:.9g}", v); }

std::string opt(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

}  // namespace

double nearest_rank(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  // Sum in sorted order so the mean does not depend on record order.
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double total = 0.0;
  for (double v : sorted) total += v;
  s.mean = total / static_cast<double>(sorted.size());
  s.p99 = nearest_rank(std::move(sorted), 0.99);
  return s;
}

MetricsReport compute_metrics(std::vector<RequestRecord> records, std::span<const TransferRecord> transfers,
                              SimTime makespan) {
  MetricsReport m;
  std::sort(records.begin(), records.end(),
            [](const RequestRecord& a, const RequestRecord& b) { return a.request_id < b.request_id; });
  std::vector<double> ttft, jct, tpot, ttst;
  for (const auto& r : records) {
    if (r.status != "done") {
      ++m.failed;
      if (r.status == "capacity-abort") ++m.capacity_aborts;
      continue;
    }
    ++m.completed;
    if (r.ttft) ttft.push_back(*r.ttft);
    if (r.jct) jct.push_back(*r.jct);
    if (r.tpot) tpot.push_back(*r.tpot);
    if (r.ttst) ttst.push_back(*r.ttst);
    m.prompt_tokens += r.prompt_tokens;
    m.prefill_tokens_computed += r.prefill_tokens_computed;
    m.tokens_reused += r.tokens_reused;
  }
  m.ttft = summarize(ttft);
  m.jct = summarize(jct);
  m.tpot = summarize(tpot);
  m.ttst = summarize(ttst);
  m.reuse_ratio = m.prompt_tokens == 0 ? 0.0 : static_cast<double>(m.tokens_reused) / m.prompt_tokens;
  for (const auto& t : transfers) {
    m.transfer_calls += t.n_calls;
    m.transfer_bytes += t.bytes;
    if (t.purpose == "prefill-to-decode") m.p2d_bytes += t.bytes;
  }
  m.makespan = makespan;
  m.records = std::move(records);
  return m;
}

void write_requests_csv(std::ostream& out, std::span<const RequestRecord> records) {
  out << "request_id,session_id,turn,arrival,ttft,jct,tpot,prefill_tokens_computed,tokens_reused,"
         "bytes_transferred,decision,prompt_tokens,gen_len,ttst,matched_tokens,prefill_instance,"
         "decode_instance,status\n";
  for (const auto& r : records) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", r.request_id, r.session_id,
                       r.turn, num(r.arrival), opt(r.ttft), opt(r.jct), opt(r.tpot), r.prefill_tokens_computed,
                       r.tokens_reused, r.bytes_transferred, r.decision, r.prompt_tokens, r.gen_len, opt(r.ttst),
                       r.matched_tokens, r.prefill_instance, r.decode_instance, r.status);
  }
}

void write_transfers_csv(std::ostream& out, std::span<const TransferRecord> transfers,
                         const std::vector<std::string>& names) {
  auto name = [&](InstanceId id) { return id < names.size() ? names[id] : std::to_string(id); };
  out << "transfer_id,request_id,purpose,mode,src,dst,n_calls,bytes,start,end\n";
  for (const auto& t : transfers) {
    out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", t.id, t.request_id, t.purpose, to_string(t.mode),
                       name(t.src), name(t.dst), t.n_calls, t.bytes, num(t.start), num(t.end));
  }
}

std::string summary_header() {
  return "completed,failed,capacity_aborts,ttft_mean,ttft_p99,jct_mean,jct_p99,tpot_mean,tpot_p99,ttst_mean,"
         "ttst_p99,prompt_tokens,prefill_tokens_computed,tokens_reused,reuse_ratio,transfer_calls,transfer_bytes,"
         "p2d_bytes,makespan";
}

std::string summary_row(const MetricsReport& m) {
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}", m.completed, m.failed,
                     m.capacity_aborts, num(m.ttft.mean), num(m.ttft.p99), num(m.jct.mean), num(m.jct.p99),
                     num(m.tpot.mean), num(m.tpot.p99), num(m.ttst.mean), num(m.ttst.p99), m.prompt_tokens,
                     m.prefill_tokens_computed, m.tokens_reused, num(m.reuse_ratio), m.transfer_calls,
                     m.transfer_bytes, m.p2d_bytes, num(m.makespan));
}

void write_summary_csv(std::ostream& out, const MetricsReport& m) {
  out << summary_header() << '\n' << summary_row(m) << '\n';
}

std::string summary_line(const MetricsReport& m) {
  return fmt::format(
      "requests done={} failed={} | ttft mean={:.4f}s p99={:.4f}s | jct mean={:.4f}s p99={:.4f}s | "
      "tpot mean={:.4f}s p99={:.4f}s | reuse={:.3f} | transfer calls={} bytes={}",
      m.completed, m.failed, m.ttft.mean, m.ttft.p99, m.jct.mean, m.jct.p99, m.tpot.mean, m.tpot.p99,
      m.reuse_ratio, m.transfer_calls, m.transfer_bytes);
}

}  // namespace kvpool
