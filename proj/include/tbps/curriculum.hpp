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

// Noise-guided progressive training: score each training pair's noise level,
// sort ascending, and admit a growing low-noise prefix per epoch.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tbps/corpus.hpp"
#include "tbps/encoder.hpp"

namespace tbps {

enum class Measurer { blipscore_analog, clipscore_analog, sentence_length, random };
enum class Scheduler { linear, baby_step, root2, off };

std::string to_string(Measurer m);
std::string to_string(Scheduler s);
Measurer parse_measurer(const std::string& s);
Scheduler parse_scheduler(const std::string& s);

struct NoiseScore {
  int sample_id = 0;
  double score = 0.0;
  Measurer measurer = Measurer::blipscore_analog;
};

// noise = 1 - psi, with psi clamped into [0, 1] first.
double noise_from_match(double psi);

struct MeasureContext {
  // Scorer for blipscore_analog (warm-up model) and clipscore_analog
  // (untrained encoder).
  const EncoderParams* scorer = nullptr;
  // Longest content-token count in the training set (sentence_length).
  int max_content_tokens = 1;
  std::uint64_t seed = 0;
};

NoiseScore measure_noise(const PairedSample& pair, const MeasureContext& ctx, Measurer measurer,
                         const Vocabulary& vocab);

// Scores every pair; read-only over the scorer, parallel over pairs.
std::vector<NoiseScore> measure_all(std::span<const PairedSample> pairs, const MeasureContext& ctx,
                                    Measurer measurer, const Vocabulary& vocab);

// min(1, lambda0 + (1 - lambda0) / t_grow * t)
double lambda_linear(int t, double lambda0, int t_grow);
// min(1, sqrt(lambda0^2 + (1 - lambda0^2) * t / t_grow))
double lambda_root2(int t, double lambda0, int t_grow);

// Cumulative admitted counts per epoch; one more equal-size bucket (remainder
// in the last) every epochs_per_bucket epochs.
std::vector<int> baby_step_counts(int total, int buckets, int epochs_per_bucket, int epochs);

struct SchedulerParams {
  Scheduler scheduler = Scheduler::linear;
  double lambda0 = 0.3;
  int t_grow = 15;
  int buckets = 4;
  int epochs_per_bucket = 5;
  int epochs = 20;
};

struct CurriculumPlan {
  std::vector<int> sorted_ids;  // ascending score, ties by sample id
  SchedulerParams params;
  std::vector<int> epoch_counts;

  int admitted_count(int epoch) const;
  std::span<const int> admitted(int epoch) const;
};

CurriculumPlan build_plan(std::span<const NoiseScore> scores, const SchedulerParams& params);

// Persisted audit table: sample_id,measurer,score
void write_scores_csv(const std::filesystem::path& path, std::span<const NoiseScore> scores);
std::vector<NoiseScore> read_scores_csv(const std::filesystem::path& path);

// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace tbps
