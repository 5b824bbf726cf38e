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

// Leave-one-out cosine retrieval with average precision and hard TOP-k.

#ifndef WRITERID_RETRIEVAL_HPP_
#define WRITERID_RETRIEVAL_HPP_

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "writerid/common.hpp"
#include "writerid/encoding.hpp"

namespace writerid::retrieval {

// 1 - a.b / (|a||b|), clamped to [0, 2]. A zero vector on either side gives 1.
double cosine_distance(const Vector& a, const Vector& b);

struct RankedEntry {
  std::size_t index = 0;  // position in the input descriptor list
  std::string writer_id;
  std::string doc_id;
  double distance = 0.0;
  bool relevant = false;  // same writer as the query
};

struct RankedList {
  std::size_t query = 0;
  std::string query_writer_id;
  std::string query_doc_id;
  std::vector<RankedEntry> entries;  // query excluded, ascending distance

  std::size_t relevant_count() const;
};

// Every document queries all others. Ties in distance are ordered by
// (doc_id, writer_id).
std::vector<RankedList> rank_all(std::span<const encoding::GlobalDescriptor> descriptors, int jobs = 1);

// sum_k P(k) rel(k) / #relevant; nullopt when the query has no relevant document.
std::optional<double> average_precision(const RankedList& ranked);

// Fraction of queries whose k best entries are all relevant, over the
// queries with at least one relevant document (nullopt if there are none).
// A query with fewer than k relevant documents cannot succeed and counts as
// a miss, which keeps the score non-increasing in k.
std::optional<double> hard_top_k(std::span<const RankedList> rankings, int k);

struct QueryResult {
  std::string writer_id;
  std::string doc_id;
  std::optional<double> average_precision;
};

struct EvalReport {
  double mean_average_precision = 0.0;
  std::map<int, double> hard_top_k;  // k = 1 .. max relevant per query
  std::vector<QueryResult> per_query;
  std::size_t queries = 0;
  std::size_t excluded_queries = 0;  // no relevant documents
};

EvalReport evaluate(std::span<const RankedList> rankings);

// key=value lines: queries, excluded_queries, mAP, top1, top2, ...
std::string format_report(const EvalReport& report);
// writer_id,doc_id,ap
std::string format_per_query_csv(const EvalReport& report);
// One line per query with its best `max_entries` results.
std::string format_rankings(std::span<const RankedList> rankings, std::size_t max_entries = 10);

}  // namespace writerid::retrieval

#endif  // WRITERID_RETRIEVAL_HPP_
