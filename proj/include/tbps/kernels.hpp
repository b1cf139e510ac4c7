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

// Data-parallel batch kernels.
//
// batch_gradient() splits a retrieval batch into per-sample encoder graphs
// and per-pair fusion graphs, runs them under OpenMP, and reduces gradients
// in a fixed chunk order, so serial and parallel execution produce
// bit-identical results for any thread count.
//
// batch_gradient_reference() builds the whole batch on one tape. It is kept
// as the independent route the parallel kernel is tested against.

#include <cstdint>
#include <span>

#include "tbps/autodiff.hpp"
#include "tbps/encoder.hpp"
#include "tbps/objectives.hpp"
#include "tbps/pcmask.hpp"

namespace tbps {

enum class Exec { serial, parallel };

struct BatchGradient {
  LossBreakdown loss;
  ad::GradStore grads;
  NegativePlan negatives;
};

// masks: empty for unmasked training, else one outcome per sample.
// forced_negatives: overrides the sampled negative plan (gradient checks).
BatchGradient batch_gradient(const EncoderParams& params, const Batch& batch,
                             std::span<const MaskOutcome> masks, const ObjectiveOptions& opts,
                             std::uint64_t seed, Exec exec,
                             const NegativePlan* forced_negatives = nullptr);

BatchGradient batch_gradient_reference(const EncoderParams& params, const Batch& batch,
                                       std::span<const MaskOutcome> masks,
                                       const ObjectiveOptions& opts, std::uint64_t seed,
                                       const NegativePlan* forced_negatives = nullptr);

// Unmasked global features, one row per input.
Mat image_features(const EncoderParams& params, std::span<const SyntheticImage> images, Exec exec);
Mat text_features(const EncoderParams& params, std::span<const Caption> captions, Exec exec);

// Cosine similarity matrix between query rows and gallery rows.
Mat cosine_similarity(const Mat& queries, const Mat& gallery, Exec exec);

// Threads available to parallel kernels (1 without OpenMP).
int max_threads();

}  // namespace tbps
