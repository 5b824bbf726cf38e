// Copyright 2026 The writerid Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "writerid/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include <spdlog/spdlog.h>

#include "writerid/parallel.hpp"

namespace writerid::retrieval {

double cosine_distance(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw ConfigError("cosine_distance: length mismatch (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    spdlog::warn("cosine_distance: zero vector, distance defined as 1");
    return 1.0;
  }
  return std::clamp(1.0 - a.dot(b) / (na * nb), 0.0, 2.0);
}

std::size_t RankedList::relevant_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const RankedEntry& e) { return e.relevant; }));
}

std::vector<RankedList> rank_all(std::span<const encoding::GlobalDescriptor> descriptors, int jobs) {
  const std::size_t n = descriptors.size();
  if (n < 2) throw ConfigError("rank_all: need at least two documents");
  for (const auto& d : descriptors) {
    if (d.values.size() != descriptors[0].values.size()) throw ConfigError("rank_all: descriptor lengths differ");
  }

  std::vector<RankedList> out(n);
  parallel_for(n, jobs, [&](std::size_t q) {
    RankedList& list = out[q];
    list.query = q;
    list.query_writer_id = descriptors[q].writer_id;
    list.query_doc_id = descriptors[q].doc_id;
    list.entries.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (i == q) continue;
      list.entries.push_back({i, descriptors[i].writer_id, descriptors[i].doc_id,
                              cosine_distance(descriptors[q].values, descriptors[i].values),
                              descriptors[i].writer_id == descriptors[q].writer_id});
    }
    std::sort(list.entries.begin(), list.entries.end(), [](const RankedEntry& a, const RankedEntry& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      if (a.doc_id != b.doc_id) return a.doc_id < b.doc_id;
      return a.writer_id < b.writer_id;
    });
  });
  return out;
}

std::optional<double> average_precision(const RankedList& ranked) {
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranked.entries.size(); ++k) {
    if (!ranked.entries[k].relevant) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) return std::nullopt;
  return sum / static_cast<double>(hits);
}

std::optional<double> hard_top_k(std::span<const RankedList> rankings, int k) {
  if (k < 1) throw ConfigError("hard_top_k: k must be >= 1");
  std::size_t counted = 0;
  std::size_t short_lists = 0;
  std::size_t correct = 0;
  for (const auto& r : rankings) {
    const std::size_t relevant = r.relevant_count();
    if (relevant == 0) continue;
    ++counted;
    if (relevant < static_cast<std::size_t>(k)) {
      ++short_lists;
      continue;
    }
    const bool all = std::all_of(r.entries.begin(), r.entries.begin() + k, [](const RankedEntry& e) { return e.relevant; });
    if (all) ++correct;
  }
  if (short_lists > 0) {
    spdlog::info("hard_top_k: {} queries have fewer than {} relevant documents and count as misses", short_lists, k);
  }
  if (counted == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(counted);
}

EvalReport evaluate(std::span<const RankedList> rankings) {
  EvalReport report;
  report.queries = rankings.size();
  double sum = 0.0;
  std::size_t counted = 0;
  std::size_t max_relevant = 0;
  for (const auto& r : rankings) {
    const auto ap = average_precision(r);
    report.per_query.push_back({r.query_writer_id, r.query_doc_id, ap});
    if (!ap) {
      ++report.excluded_queries;
      spdlog::warn("evaluate: query {}/{} has no relevant documents, excluded from mAP", r.query_writer_id,
                   r.query_doc_id);
      continue;
    }
    sum += *ap;
    ++counted;
    max_relevant = std::max(max_relevant, r.relevant_count());
  }
  report.mean_average_precision = counted > 0 ? sum / static_cast<double>(counted) : 0.0;
  for (int k = 1; k <= static_cast<int>(max_relevant); ++k) {
    if (auto v = hard_top_k(rankings, k)) report.hard_top_k[k] = *v;
  }
  return report;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string format_report(const EvalReport& report) {
  std::ostringstream out;
  out << "queries=" << report.queries << "\n";
  out << "excluded_queries=" << report.excluded_queries << "\n";
  out << "mAP=" << fixed(report.mean_average_precision) << "\n";
  for (const auto& [k, v] : report.hard_top_k) out << "top" << k << "=" << fixed(v) << "\n";
  return out.str();
}

std::string format_per_query_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "writer_id,doc_id,ap\n";
  for (const auto& q : report.per_query) {
    out << q.writer_id << "," << q.doc_id << "," << (q.average_precision ? fixed(*q.average_precision) : "") << "\n";
  }
  return out.str();
}

std::string format_rankings(std::span<const RankedList> rankings, std::size_t max_entries) {
  std::ostringstream out;
  for (const auto& r : rankings) {
    out << r.query_writer_id << "/" << r.query_doc_id << ":";
    for (std::size_t i = 0; i < std::min(max_entries, r.entries.size()); ++i) {
      const auto& e = r.entries[i];
      out << " " << e.writer_id << "/" << e.doc_id << "(" << fixed(e.distance) << (e.relevant ? ",+" : "") << ")";
    }
    out << "\n";
  }
  return out.str();
}

}  // namespace writerid::retrieval
