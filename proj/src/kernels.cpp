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

#include "tbps/kernels.hpp"

#include <spdlog/spdlog.h>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tbps {

namespace {

// Fixed reduction granularity; keeps the summation order independent of the
// number of threads.
constexpr int kChunk = 8;

int chunk_count(int n) { return (n + kChunk - 1) / kChunk; }

const MaskOutcome* mask_for(std::span<const MaskOutcome> masks, std::size_t i) {
  return masks.empty() ? nullptr : &masks[i];
}

struct SampleGraph {
  ad::Tape tape;
  ad::Var image_feats, text_emb, text_feats;
};

void build_sample(SampleGraph& g, const EncoderParams& p, const Batch& batch,
                  std::span<const MaskOutcome> masks, std::size_t i) {
  ad::Tape& t = g.tape;
  const MaskOutcome* m = mask_for(masks, i);
  g.image_feats = encode_blocks(t, p, p.image_blocks, embed_image(t, p, batch.image(i).patches, m), ad::Var{});
  g.text_emb = embed_text(t, p, batch.caption(i).tokens, m);
  g.text_feats = encode_blocks(t, p, p.text_blocks, g.text_emb, ad::Var{});
}

struct FusionResult {
  double loss = 0.0;
  Mat grad_text, grad_image;
};

void check_loss(double v, const char* what) {
  if (!std::isfinite(v)) throw DivergenceError(std::string(what) + ": non-finite loss");
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

BatchGradient batch_gradient(const EncoderParams& params, const Batch& batch,
                             std::span<const MaskOutcome> masks, const ObjectiveOptions& opts,
                             std::uint64_t seed, Exec exec, const NegativePlan* forced_negatives) {
  const int b = static_cast<int>(batch.size());
  require(b >= 1, "batch_gradient: empty batch");
  require(masks.empty() || static_cast<int>(masks.size()) == b, "batch_gradient: one mask per sample");
  const bool par = exec == Exec::parallel;
  const int d = params.config.width;

  // Per-sample encoder graphs.
  std::vector<SampleGraph> samples(static_cast<std::size_t>(b));
#pragma omp parallel for schedule(dynamic) if (par)
  for (int i = 0; i < b; ++i) build_sample(samples[static_cast<std::size_t>(i)], params, batch, masks, static_cast<std::size_t>(i));

  Mat fv(b, d), ft(b, d);
  for (int i = 0; i < b; ++i) {
    const SampleGraph& g = samples[static_cast<std::size_t>(i)];
    fv.row(i) = g.tape.value(g.image_feats).row(0);
    ft.row(i) = g.tape.value(g.text_feats).row(0);
  }
  const std::vector<int> ids = batch.identities();

  BatchGradient out;
  out.grads.resize(params.store.size());

  // Contrastive loss on the global features.
  Mat grad_fv, grad_ft;
  {
    ad::Tape t;
    ad::Var v = t.input(fv), w = t.input(ft);
    ad::Var tau = t.param(params.tau, params.store.value(params.tau));
    ad::Var loss = itc_loss(t, v, w, tau, ids);
    out.loss.itc = t.value(loss)(0, 0);
    check_loss(out.loss.itc, "itc");
    t.backward(loss);
    grad_fv = t.grad(v);
    grad_ft = t.grad(w);
    t.collect_param_grads(out.grads);
  }

  if (forced_negatives) {
    out.negatives = *forced_negatives;
  } else {
    Rng rng(derive_seed(seed, 0x6e6567ULL));
    out.negatives = sample_negatives(scaled_similarity(fv, ft, params.temperature()), ids,
                                     opts.hard_negatives, rng);
  }
  const std::vector<ItmJob> jobs = itm_jobs(out.negatives, b);
  const int njobs = static_cast<int>(jobs.size());
  out.loss.itm_skipped = njobs == b;
  if (out.loss.itm_skipped) spdlog::warn("batch_gradient: no valid ITM negatives in batch; skipping ITM");

  std::vector<Mat> seed_text(static_cast<std::size_t>(b)), seed_image(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) {
    const SampleGraph& g = samples[static_cast<std::size_t>(i)];
    seed_text[static_cast<std::size_t>(i)] = Mat::Zero(g.tape.value(g.text_emb).rows(), d);
    seed_image[static_cast<std::size_t>(i)] = Mat::Zero(g.tape.value(g.image_feats).rows(), d);
    seed_image[static_cast<std::size_t>(i)].row(0) += grad_fv.row(i);
  }

  std::vector<ad::GradStore> fusion_chunks;
  if (!out.loss.itm_skipped) {
    out.loss.itm_pairs = njobs;
    const double w = 1.0 / njobs;
    std::vector<FusionResult> results(static_cast<std::size_t>(njobs));
    fusion_chunks.resize(static_cast<std::size_t>(chunk_count(njobs)));
#pragma omp parallel for schedule(dynamic) if (par)
    for (int c = 0; c < chunk_count(njobs); ++c) {
      ad::GradStore& store = fusion_chunks[static_cast<std::size_t>(c)];
      store.resize(params.store.size());
      for (int k = c * kChunk; k < std::min(njobs, (c + 1) * kChunk); ++k) {
        const ItmJob& job = jobs[static_cast<std::size_t>(k)];
        const SampleGraph& tg = samples[static_cast<std::size_t>(job.text)];
        const SampleGraph& ig = samples[static_cast<std::size_t>(job.image)];
        ad::Tape t;
        ad::Var temb = t.input(tg.tape.value(tg.text_emb));
        ad::Var feats = t.input(ig.tape.value(ig.image_feats));
        const int label = job.label;
        ad::Var loss = ad::scale(t, ad::cross_entropy(t, itm_logits(t, params, fuse(t, params, temb, feats)),
                                                      std::span<const int>(&label, 1)),
                                 w);
        t.backward(loss);
        FusionResult& r = results[static_cast<std::size_t>(k)];
        r.loss = t.value(loss)(0, 0);
        r.grad_text = t.grad(temb);
        r.grad_image = t.grad(feats);
        t.collect_param_grads(store);
      }
    }
    for (int k = 0; k < njobs; ++k) {
      const FusionResult& r = results[static_cast<std::size_t>(k)];
      out.loss.itm += r.loss;
      seed_text[static_cast<std::size_t>(jobs[static_cast<std::size_t>(k)].text)] += r.grad_text;
      seed_image[static_cast<std::size_t>(jobs[static_cast<std::size_t>(k)].image)] += r.grad_image;
    }
    check_loss(out.loss.itm, "itm");
  }

  // Backward through every sample graph.
  std::vector<ad::GradStore> sample_chunks(static_cast<std::size_t>(chunk_count(b)));
#pragma omp parallel for schedule(dynamic) if (par)
  for (int c = 0; c < chunk_count(b); ++c) {
    ad::GradStore& store = sample_chunks[static_cast<std::size_t>(c)];
    store.resize(params.store.size());
    for (int i = c * kChunk; i < std::min(b, (c + 1) * kChunk); ++i) {
      SampleGraph& g = samples[static_cast<std::size_t>(i)];
      Mat text_seed = Mat::Zero(g.tape.value(g.text_feats).rows(), d);
      text_seed.row(0) = grad_ft.row(i);
      g.tape.seed(g.text_feats, text_seed);
      g.tape.seed(g.image_feats, seed_image[static_cast<std::size_t>(i)]);
      g.tape.seed(g.text_emb, seed_text[static_cast<std::size_t>(i)]);
      g.tape.sweep();
      g.tape.collect_param_grads(store);
    }
  }

  for (const ad::GradStore& s : fusion_chunks) out.grads.add(s);
  for (const ad::GradStore& s : sample_chunks) out.grads.add(s);
  return out;
}

BatchGradient batch_gradient_reference(const EncoderParams& params, const Batch& batch,
                                       std::span<const MaskOutcome> masks,
                                       const ObjectiveOptions& opts, std::uint64_t seed,
                                       const NegativePlan* forced_negatives) {
  const int b = static_cast<int>(batch.size());
  require(b >= 1, "batch_gradient_reference: empty batch");
  ad::Tape t;
  std::vector<ad::Var> feats, embs, vcls, tcls;
  for (int i = 0; i < b; ++i) {
    const MaskOutcome* m = mask_for(masks, static_cast<std::size_t>(i));
    feats.push_back(encode_blocks(t, params, params.image_blocks,
                                  embed_image(t, params, batch.image(static_cast<std::size_t>(i)).patches, m), ad::Var{}));
    embs.push_back(embed_text(t, params, batch.caption(static_cast<std::size_t>(i)).tokens, m));
    ad::Var tf = encode_blocks(t, params, params.text_blocks, embs.back(), ad::Var{});
    vcls.push_back(ad::slice_rows(t, feats.back(), 0, 1));
    tcls.push_back(ad::slice_rows(t, tf, 0, 1));
  }
  const std::vector<int> ids = batch.identities();
  ad::Var fv = ad::concat_rows(t, vcls);
  ad::Var ft = ad::concat_rows(t, tcls);
  ad::Var tau = t.param(params.tau, params.store.value(params.tau));
  ad::Var itc = itc_loss(t, fv, ft, tau, ids);

  BatchGradient out;
  out.loss.itc = t.value(itc)(0, 0);
  if (forced_negatives) {
    out.negatives = *forced_negatives;
  } else {
    Rng rng(derive_seed(seed, 0x6e6567ULL));
    out.negatives = sample_negatives(scaled_similarity(t.value(fv), t.value(ft), params.temperature()), ids,
                                     opts.hard_negatives, rng);
  }
  const std::vector<ItmJob> jobs = itm_jobs(out.negatives, b);
  ad::Var total = itc;
  out.loss.itm_skipped = static_cast<int>(jobs.size()) == b;
  if (!out.loss.itm_skipped) {
    std::vector<ad::Var> logits;
    std::vector<int> labels;
    for (const ItmJob& job : jobs) {
      logits.push_back(itm_logits(t, params, fuse(t, params, embs[static_cast<std::size_t>(job.text)],
                                                  feats[static_cast<std::size_t>(job.image)])));
      labels.push_back(job.label);
    }
    ad::Var itm = ad::scale(t, ad::cross_entropy(t, ad::concat_rows(t, logits), labels), 1.0 / jobs.size());
    out.loss.itm = t.value(itm)(0, 0);
    out.loss.itm_pairs = static_cast<int>(jobs.size());
    total = ad::add(t, itc, itm);
  }
  t.backward(total);
  out.grads.resize(params.store.size());
  t.collect_param_grads(out.grads);
  return out;
}

Mat image_features(const EncoderParams& params, std::span<const SyntheticImage> images, Exec exec) {
  Mat out(static_cast<Eigen::Index>(images.size()), params.config.width);
  const int n = static_cast<int>(images.size());
#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
  for (int i = 0; i < n; ++i) out.row(i) = image_global_feature(params, images[static_cast<std::size_t>(i)]);
  return out;
}

Mat text_features(const EncoderParams& params, std::span<const Caption> captions, Exec exec) {
  Mat out(static_cast<Eigen::Index>(captions.size()), params.config.width);
  const int n = static_cast<int>(captions.size());
#pragma omp parallel for schedule(dynamic) if (exec == Exec::parallel)
  for (int i = 0; i < n; ++i) out.row(i) = text_global_feature(params, captions[static_cast<std::size_t>(i)]);
  return out;
}

Mat cosine_similarity(const Mat& queries, const Mat& gallery, Exec exec) {
  require(queries.cols() == gallery.cols(), "cosine_similarity: width mismatch");
  const Mat g = gallery.rowwise().normalized();
  Mat out(queries.rows(), gallery.rows());
  const int n = static_cast<int>(queries.rows());
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
  for (int i = 0; i < n; ++i) {
    const double qn = queries.row(i).norm();
    const RowVec q = qn > 0.0 ? RowVec(queries.row(i) / qn) : RowVec(queries.row(i));
    out.row(i).noalias() = q * g.transpose();
  }
  return out;
}

}  // namespace tbps
