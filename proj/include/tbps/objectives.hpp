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

// Retrieval-stage losses: symmetric image-text contrastive loss over the
// global features, binary image-text matching over fused features with hard
// negatives, and their unweighted sum.

#include <cstdint>
#include <span>
#include <vector>

#include "tbps/autodiff.hpp"
#include "tbps/corpus.hpp"
#include "tbps/encoder.hpp"
#include "tbps/pcmask.hpp"

namespace tbps {

inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 0.5;

struct Batch {
  std::vector<const PairedSample*> items;

  std::size_t size() const { return items.size(); }
  const SyntheticImage& image(std::size_t i) const { return items[i]->image; }
  const Caption& caption(std::size_t i) const { return items[i]->caption; }
  int identity(std::size_t i) const { return items[i]->image.identity_id; }
  std::vector<int> identities() const;
};

struct ObjectiveOptions {
  bool hard_negatives = true;
};

// Soft contrastive targets: row i is uniform over columns sharing identity i.
// An empty id list means every row is its own identity.
Mat contrastive_targets(std::span<const int> ids, int batch);

// Symmetric InfoNCE over L2-normalized rows (row i of each matrix is a
// positive pair). Returns 0 for a single-row batch.
double itc_loss(const Mat& image_cls, const Mat& text_cls, double tau, std::span<const int> ids = {});
ad::Var itc_loss(ad::Tape& t, ad::Var image_cls, ad::Var text_cls, ad::Var tau, std::span<const int> ids);

// Cosine similarity / tau; rows are images, columns are texts.
Mat scaled_similarity(const Mat& image_cls, const Mat& text_cls, double tau);

// One negative per positive per direction; -1 when the row has no candidate
// of a different identity.
struct NegativePlan {
  std::vector<int> image_for_text;
  std::vector<int> text_for_image;
};

// Hard negatives are drawn per row proportionally to softmax(similarity),
// excluding same-identity columns; with hard == false the draw is uniform
// over the valid columns.
NegativePlan sample_negatives(const Mat& sim_i2t, std::span<const int> ids, bool hard, Rng& rng);

struct ItmJob {
  int text = 0;
  int image = 0;
  int label = 0;  // 1 = match
};

// Positive pairs first, then text-side negatives, then image-side negatives.
std::vector<ItmJob> itm_jobs(const NegativePlan& plan, int batch);

// Mean binary cross-entropy (two-way softmax) over rows of logits.
double itm_loss(const Mat& logits, std::span<const int> labels);

// Fused-feature matching loss for a batch under an explicit negative plan,
// using unmasked inputs.
double itm_loss(const EncoderParams& params, const Batch& batch, const NegativePlan& plan);
// Same, drawing the negative plan from the ITC similarity matrix f_sims.
double itm_loss(const EncoderParams& params, const Batch& batch, const Mat& f_sims,
                const ObjectiveOptions& opts, std::uint64_t seed);

struct LossBreakdown {
  double itc = 0.0;
  double itm = 0.0;
  int itm_pairs = 0;
  bool itm_skipped = false;
  double total() const { return itc + itm; }
};

// L = L_itc + L_itm on (optionally masked) features.
LossBreakdown total_loss(const EncoderParams& params, const Batch& batch,
                         std::span<const MaskOutcome> masks, const ObjectiveOptions& opts,
                         std::uint64_t seed);

}  // namespace tbps
