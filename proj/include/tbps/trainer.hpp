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

// Retrieval-stage training loop: curriculum-admitted prefix per epoch,
// seeded shuffling, masking per batch (training only), adaptive-moment
// updates with global-norm clipping.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tbps/curriculum.hpp"
#include "tbps/encoder.hpp"
#include "tbps/evalkit.hpp"
#include "tbps/kernels.hpp"
#include "tbps/objectives.hpp"
#include "tbps/pcmask.hpp"

namespace tbps {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 64;
  // Toy-width default; the reference value for a pretrained backbone is 1e-5.
  double learning_rate = 1e-4;
  std::uint64_t seed = 0;
  MaskConfig mask = MaskConfig::disabled();
  ObjectiveOptions objectives;
  double clip_norm = 5.0;
  // Std-dev of per-step Gaussian patch jitter (augmentation); 0 disables.
  double jitter = 0.0;
  int warmup_epochs = 5;
  int checkpoint_every = 5;
  std::filesystem::path checkpoint_dir;  // empty = no checkpoints
  Exec exec = Exec::parallel;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss_itc = 0.0;
  double loss_itm = 0.0;
  int admitted_count = 0;
  int steps = 0;
  double max_grad_norm = 0.0;
  double probe_r1 = -1.0;  // -1 when no probe set was supplied
};

struct TrainResult {
  EncoderParams params;
  std::vector<EpochRecord> history;
};

struct ProbeSet {
  std::span<const TestQuery> queries;
  std::span<const SyntheticImage> gallery;
};

// Labeled pairs take ids 0..N_l-1, pseudo pairs follow.
std::vector<PairedSample> assemble_training_set(std::span<const ImageTextPair> labeled,
                                                std::span<const ImageTextPair> pseudo);

TrainResult train(const TrainConfig& config, const EncoderConfig& encoder, std::span<const PairedSample> samples,
                  const CurriculumPlan* plan = nullptr, const ProbeSet* probe = nullptr);

// Trains the warm-up scorer when the measurer needs one, then scores every
// pair. Human pairs always score 0.
std::vector<NoiseScore> warmup_and_score(const TrainConfig& config, const EncoderConfig& encoder,
                                         std::span<const PairedSample> samples, const Vocabulary& vocab,
                                         Measurer measurer = Measurer::blipscore_analog,
                                         EncoderParams* scorer_out = nullptr);

// epoch,loss_itc,loss_itm,admitted_count,steps,max_grad_norm,probe_r1
void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);

}  // namespace tbps
