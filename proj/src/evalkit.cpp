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

#include "tbps/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "tbps/pcmask.hpp"

namespace tbps {

std::vector<int> order_by_score(std::span<const double> scores, std::span<const int> gallery_ids) {
  require(scores.size() == gallery_ids.size(), "order_by_score: size mismatch");
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : gallery_ids[a] < gallery_ids[b];
  });
  std::vector<int> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(gallery_ids[i]);
  return out;
}

RankingResult make_ranking(int query_id, std::span<const double> scores, std::span<const int> gallery_ids,
                           std::span<const int> gallery_identities, int query_identity) {
  require(!gallery_ids.empty(), "rank_gallery: empty gallery");
  require(gallery_identities.size() == gallery_ids.size(), "make_ranking: identity list size mismatch");
  RankingResult r;
  r.query_id = query_id;
  r.ordered_gallery_ids = order_by_score(scores, gallery_ids);
  for (std::size_t i = 0; i < gallery_ids.size(); ++i)
    if (gallery_identities[i] == query_identity) r.relevant_set.push_back(gallery_ids[i]);
  std::sort(r.relevant_set.begin(), r.relevant_set.end());
  return r;
}

namespace {

struct GalleryIndex {
  std::vector<int> ids, identities;
  Mat feats;
};

GalleryIndex index_gallery(const EncoderParams& model, std::span<const SyntheticImage> gallery, Exec exec) {
  require(!gallery.empty(), "rank_gallery: empty gallery");
  GalleryIndex g;
  for (const SyntheticImage& img : gallery) {
    g.ids.push_back(img.image_id);
    g.identities.push_back(img.identity_id);
  }
  g.feats = image_features(model, gallery, exec);
  return g;
}

void rerank(const EncoderParams& model, const Caption& query, std::span<const SyntheticImage> gallery,
            RankingResult& r, int top_k) {
  const int k = std::min<int>(top_k, static_cast<int>(r.ordered_gallery_ids.size()));
  std::vector<double> probs;
  std::vector<int> head(r.ordered_gallery_ids.begin(), r.ordered_gallery_ids.begin() + k);
  for (int id : head) {
    const auto it = std::find_if(gallery.begin(), gallery.end(), [&](const SyntheticImage& g) { return g.image_id == id; });
    probs.push_back(match_probability(model, *it, query));
  }
  const std::vector<int> reordered = order_by_score(probs, head);
  std::copy(reordered.begin(), reordered.end(), r.ordered_gallery_ids.begin());
}

}  // namespace

RankingResult rank_gallery(const EncoderParams& model, const Caption& query, int query_id, int query_identity,
                           std::span<const SyntheticImage> gallery, const RankOptions& opts) {
  const long masks_before = mask_application_counter().load();
  const GalleryIndex g = index_gallery(model, gallery, opts.exec);
  const Mat q = text_global_feature(model, query);
  const Mat sims = cosine_similarity(q, g.feats, Exec::serial);
  const std::vector<double> scores(sims.data(), sims.data() + sims.size());
  RankingResult r = make_ranking(query_id, scores, g.ids, g.identities, query_identity);
  if (opts.itm_rerank_top_k > 0) rerank(model, query, gallery, r, opts.itm_rerank_top_k);
  if (mask_application_counter().load() != masks_before)
    throw ContractError("rank_gallery: masking was applied on the inference path");
  return r;
}

std::vector<RankingResult> rank_all(const EncoderParams& model, std::span<const TestQuery> queries,
                                    std::span<const SyntheticImage> gallery, const RankOptions& opts) {
  const long masks_before = mask_application_counter().load();
  const GalleryIndex g = index_gallery(model, gallery, opts.exec);
  std::vector<Caption> captions;
  captions.reserve(queries.size());
  for (const TestQuery& q : queries) captions.push_back(q.caption);
  const Mat sims = cosine_similarity(text_features(model, captions, opts.exec), g.feats, opts.exec);

  std::vector<RankingResult> out(queries.size());
  const int n = static_cast<int>(queries.size());
#pragma omp parallel for schedule(dynamic) if (opts.exec == Exec::parallel)
  for (int i = 0; i < n; ++i) {
    const std::vector<double> scores(sims.row(i).data(), sims.row(i).data() + sims.cols());
    const TestQuery& q = queries[static_cast<std::size_t>(i)];
    out[static_cast<std::size_t>(i)] = make_ranking(q.query_id, scores, g.ids, g.identities, q.identity_id);
    if (opts.itm_rerank_top_k > 0) rerank(model, q.caption, gallery, out[static_cast<std::size_t>(i)], opts.itm_rerank_top_k);
  }
  if (mask_application_counter().load() != masks_before)
    throw ContractError("rank_all: masking was applied on the inference path");
  return out;
}

double rank_k(std::span<const RankingResult> results, int k) {
  require(k >= 1, "rank_k: k must be at least 1");
  if (results.empty()) return 0.0;
  int hits = 0;
  for (const RankingResult& r : results) {
    int kk = k;
    if (kk > static_cast<int>(r.ordered_gallery_ids.size())) {
      spdlog::warn("rank_k: k={} exceeds gallery size {}; clamping", k, r.ordered_gallery_ids.size());
      kk = static_cast<int>(r.ordered_gallery_ids.size());
    }
    for (int i = 0; i < kk; ++i)
      if (std::binary_search(r.relevant_set.begin(), r.relevant_set.end(), r.ordered_gallery_ids[static_cast<std::size_t>(i)])) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double average_precision(const RankingResult& r) {
  require(!r.relevant_set.empty(), "average_precision: query has no relevant gallery item");
  int found = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < r.ordered_gallery_ids.size(); ++i) {
    if (!std::binary_search(r.relevant_set.begin(), r.relevant_set.end(), r.ordered_gallery_ids[i])) continue;
    ++found;
    acc += static_cast<double>(found) / static_cast<double>(i + 1);
  }
  return acc / static_cast<double>(r.relevant_set.size());
}

double mean_ap(std::span<const RankingResult> results) {
  if (results.empty()) return 0.0;
  double acc = 0.0;
  for (const RankingResult& r : results) acc += average_precision(r);
  return acc / static_cast<double>(results.size());
}

std::vector<MetricRow> RetrievalMetrics::rows() const {
  return {{"rank", 1, r1}, {"rank", 5, r5}, {"rank", 10, r10}, {"mAP", 0, map}};
}

RetrievalMetrics summarize(std::span<const RankingResult> results) {
  return {rank_k(results, 1), rank_k(results, 5), rank_k(results, 10), mean_ap(results)};
}

RetrievalMetrics evaluate(const EncoderParams& model, const CorpusSplit& split, const RankOptions& opts) {
  return summarize(rank_all(model, split.test_queries, split.test_gallery, opts));
}

void write_metrics_csv(const std::filesystem::path& path, const RetrievalMetrics& m) {
  std::ofstream os(path);
  if (!os) throw StageError("cannot write metrics " + path.string());
  os.precision(17);
  os << "metric,k,value\n";
  for (const MetricRow& r : m.rows()) os << r.metric << ',' << r.k << ',' << r.value << '\n';
}

std::string format_report(const RetrievalMetrics& m) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "R-1 " << 100.0 * m.r1 << "  R-5 " << 100.0 * m.r5 << "  R-10 " << 100.0 * m.r10 << "  mAP "
     << 100.0 * m.map;
  return os.str();
}

}  // namespace tbps
