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

#include "tbps/objectives.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "tbps/kernels.hpp"

namespace tbps {

std::vector<int> Batch::identities() const {
  std::vector<int> ids;
  ids.reserve(items.size());
  for (const PairedSample* s : items) ids.push_back(s->image.identity_id);
  return ids;
}

Mat contrastive_targets(std::span<const int> ids, int batch) {
  Mat t = Mat::Zero(batch, batch);
  if (ids.empty()) {
    t.setIdentity();
    return t;
  }
  require(static_cast<int>(ids.size()) == batch, "contrastive_targets: id count mismatch");
  for (int i = 0; i < batch; ++i) {
    int same = 0;
    for (int j = 0; j < batch; ++j) same += ids[static_cast<std::size_t>(i)] == ids[static_cast<std::size_t>(j)];
    for (int j = 0; j < batch; ++j)
      if (ids[static_cast<std::size_t>(i)] == ids[static_cast<std::size_t>(j)]) t(i, j) = 1.0 / same;
  }
  return t;
}

ad::Var itc_loss(ad::Tape& t, ad::Var image_cls, ad::Var text_cls, ad::Var tau, std::span<const int> ids) {
  const int b = static_cast<int>(t.value(image_cls).rows());
  require(b >= 1, "itc_loss: empty batch");
  require(t.value(text_cls).rows() == b, "itc_loss: image/text row count mismatch");
  require(t.value(tau)(0, 0) > 0.0, "itc_loss: temperature must be positive");
  const Mat targets = contrastive_targets(ids, b);
  ad::Var nv = ad::l2_normalize_rows(t, image_cls);
  ad::Var nt = ad::l2_normalize_rows(t, text_cls);
  ad::Var i2t = ad::divide(t, ad::matmul_nt(t, nv, nt), tau);
  ad::Var t2i = ad::divide(t, ad::matmul_nt(t, nt, nv), tau);
  ad::Var both = ad::add(t, ad::soft_cross_entropy(t, i2t, targets), ad::soft_cross_entropy(t, t2i, targets));
  return ad::scale(t, both, 0.5 / b);
}

double itc_loss(const Mat& image_cls, const Mat& text_cls, double tau, std::span<const int> ids) {
  if (!(tau > 0.0)) throw ContractError("itc_loss: temperature must be positive");
  ad::Tape t(false);
  ad::Var loss = itc_loss(t, t.constant(image_cls), t.constant(text_cls), t.constant(Mat::Constant(1, 1, tau)), ids);
  return t.value(loss)(0, 0);
}

Mat scaled_similarity(const Mat& image_cls, const Mat& text_cls, double tau) {
  ad::Tape t(false);
  ad::Var nv = ad::l2_normalize_rows(t, t.constant(image_cls));
  ad::Var nt = ad::l2_normalize_rows(t, t.constant(text_cls));
  return t.value(ad::matmul_nt(t, nv, nt)) / tau;
}

namespace {

int draw_index(const RowVec& logits, const std::vector<char>& valid, bool hard, Rng& rng) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    if (valid[static_cast<std::size_t>(j)]) m = std::max(m, logits(j));
  if (!std::isfinite(m)) return -1;
  std::vector<double> w(static_cast<std::size_t>(logits.size()), 0.0);
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.size(); ++j) {
    if (!valid[static_cast<std::size_t>(j)]) continue;
    w[static_cast<std::size_t>(j)] = hard ? std::exp(logits(j) - m) : 1.0;
    total += w[static_cast<std::size_t>(j)];
  }
  std::uniform_real_distribution<double> u(0.0, total);
  const double r = u(rng);
  double acc = 0.0;
  int last = -1;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j] <= 0.0) continue;
    acc += w[j];
    last = static_cast<int>(j);
    if (r < acc) return last;
  }
  return last;
}

}  // namespace

NegativePlan sample_negatives(const Mat& sim_i2t, std::span<const int> ids, bool hard, Rng& rng) {
  const auto b = static_cast<int>(sim_i2t.rows());
  require(sim_i2t.cols() == b && static_cast<int>(ids.size()) == b, "sample_negatives: shape mismatch");
  NegativePlan plan;
  plan.image_for_text.assign(static_cast<std::size_t>(b), -1);
  plan.text_for_image.assign(static_cast<std::size_t>(b), -1);
  for (int i = 0; i < b; ++i) {
    std::vector<char> valid(static_cast<std::size_t>(b));
    for (int j = 0; j < b; ++j) valid[static_cast<std::size_t>(j)] = ids[static_cast<std::size_t>(j)] != ids[static_cast<std::size_t>(i)];
    plan.image_for_text[static_cast<std::size_t>(i)] = draw_index(sim_i2t.col(i).transpose(), valid, hard, rng);
    plan.text_for_image[static_cast<std::size_t>(i)] = draw_index(sim_i2t.row(i), valid, hard, rng);
  }
  return plan;
}

std::vector<ItmJob> itm_jobs(const NegativePlan& plan, int batch) {
  std::vector<ItmJob> jobs;
  for (int i = 0; i < batch; ++i) jobs.push_back({i, i, 1});
  for (int i = 0; i < batch; ++i)
    if (int j = plan.image_for_text[static_cast<std::size_t>(i)]; j >= 0) jobs.push_back({i, j, 0});
  for (int i = 0; i < batch; ++i)
    if (int j = plan.text_for_image[static_cast<std::size_t>(i)]; j >= 0) jobs.push_back({j, i, 0});
  return jobs;
}

double itm_loss(const Mat& logits, std::span<const int> labels) {
  require(logits.cols() == 2 && logits.rows() == static_cast<Eigen::Index>(labels.size()),
          "itm_loss: expected one 2-way logit row per label");
  if (labels.empty()) return 0.0;
  ad::Tape t(false);
  return t.value(ad::cross_entropy(t, t.constant(logits), labels))(0, 0) / static_cast<double>(labels.size());
}

double itm_loss(const EncoderParams& params, const Batch& batch, const NegativePlan& plan) {
  const int b = static_cast<int>(batch.size());
  const std::vector<ItmJob> jobs = itm_jobs(plan, b);
  if (static_cast<int>(jobs.size()) == b) {
    spdlog::warn("itm_loss: batch has no valid negatives (single identity); skipping");
    return 0.0;
  }
  std::vector<EmbeddingSequence> text_emb, image_feats;
  for (int i = 0; i < b; ++i) {
    text_emb.push_back(embed_text(params, batch.caption(static_cast<std::size_t>(i))));
    image_feats.push_back(encode_image(params, embed_image(params, batch.image(static_cast<std::size_t>(i)))));
  }
  Mat logits(static_cast<Eigen::Index>(jobs.size()), 2);
  std::vector<int> labels;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const EmbeddingSequence fused = fuse(params, text_emb[static_cast<std::size_t>(jobs[k].text)],
                                         image_feats[static_cast<std::size_t>(jobs[k].image)]);
    ad::Tape t(false);
    logits.row(static_cast<Eigen::Index>(k)) = t.value(itm_logits(t, params, t.constant(fused.vectors)));
    labels.push_back(jobs[k].label);
  }
  return itm_loss(logits, labels);
}

double itm_loss(const EncoderParams& params, const Batch& batch, const Mat& f_sims,
                const ObjectiveOptions& opts, std::uint64_t seed) {
  Rng rng(seed);
  const std::vector<int> ids = batch.identities();
  return itm_loss(params, batch, sample_negatives(f_sims, ids, opts.hard_negatives, rng));
}

LossBreakdown total_loss(const EncoderParams& params, const Batch& batch,
                         std::span<const MaskOutcome> masks, const ObjectiveOptions& opts,
                         std::uint64_t seed) {
  return batch_gradient(params, batch, masks, opts, seed, Exec::serial).loss;
}

}  // namespace tbps
