/*
 * Copyright 2026 The tbps Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Text-to-image retrieval evaluation: Rank-k and mAP over a gallery.

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tbps/corpus.hpp"
#include "tbps/encoder.hpp"
#include "tbps/kernels.hpp"

namespace tbps {

struct RankingResult {
  int query_id = 0;
  std::vector<int> ordered_gallery_ids;  // descending similarity, ties by id
  std::vector<int> relevant_set;          // sorted
};

// Orders gallery ids by descending score, ties broken by ascending id.
std::vector<int> order_by_score(std::span<const double> scores, std::span<const int> gallery_ids);

RankingResult make_ranking(int query_id, std::span<const double> scores, std::span<const int> gallery_ids,
                           std::span<const int> gallery_identities, int query_identity);

struct RankOptions {
  // Re-rank the top-k candidates by ITM match probability (0 = off).
  int itm_rerank_top_k = 0;
  Exec exec = Exec::parallel;
};

RankingResult rank_gallery(const EncoderParams& model, const Caption& query, int query_id, int query_identity,
                           std::span<const SyntheticImage> gallery, const RankOptions& opts = {});

// All queries against one gallery; gallery features are computed once.
std::vector<RankingResult> rank_all(const EncoderParams& model, std::span<const TestQuery> queries,
                                    std::span<const SyntheticImage> gallery, const RankOptions& opts = {});

double rank_k(std::span<const RankingResult> results, int k);
double average_precision(const RankingResult& r);
double mean_ap(std::span<const RankingResult> results);

struct MetricRow {
  std::string metric;
  int k = 0;
  double value = 0.0;
};

struct RetrievalMetrics {
  double r1 = 0.0, r5 = 0.0, r10 = 0.0, map = 0.0;
  std::vector<MetricRow> rows() const;
};

RetrievalMetrics summarize(std::span<const RankingResult> results);
RetrievalMetrics evaluate(const EncoderParams& model, const CorpusSplit& split, const RankOptions& opts = {});

// metric,k,value
void write_metrics_csv(const std::filesystem::path& path, const RetrievalMetrics& m);
std::string format_report(const RetrievalMetrics& m);

}  // namespace tbps
