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

// Flat experiment configuration: one "dotted.key = value" per line, '#'
// starts a comment. Unknown keys and malformed values are ConfigErrors.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tbps/captioner.hpp"
#include "tbps/corpus.hpp"
#include "tbps/curriculum.hpp"
#include "tbps/trainer.hpp"

namespace tbps {

struct PipelineConfig {
  std::uint64_t seed = 0;
  CorpusSpec corpus;

  // Generation stage.
  bool caption_pretrain = true;
  int caption_pretrain_epochs = 5;
  FinetuneOptions caption{.epochs = 60, .lr = 3e-3, .batch_size = 8, .seed = 0, .freeze_attention = true};
  Decoder decoder;
  int texts_per_image = 1;
  bool use_pseudo = true;

  // Retrieval stage.
  int encoder_width = 32;
  int encoder_heads = 2;
  int encoder_layers = 2;
  // Width-32 counterpart of the usual 0.02 at transformer-base width.
  double encoder_init_scale = 0.1;
  double tau_init = 0.07;
  TrainConfig train = [] {
    TrainConfig t;
    t.learning_rate = 1e-3;
    t.epochs = 30;
    t.warmup_epochs = 20;
    return t;
  }();
  Measurer measurer = Measurer::blipscore_analog;
  SchedulerParams schedule{.scheduler = Scheduler::off};
  int itm_rerank_top_k = 0;

  EncoderConfig encoder_config() const;
};

PipelineConfig parse_config(std::string_view text);
PipelineConfig load_config(const std::filesystem::path& path);

// Applies one key=value override on top of an existing config.
void set_config_value(PipelineConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const PipelineConfig& config, std::string_view key);
const std::vector<std::string>& config_keys();

// Canonical text: every key in fixed order, shortest round-trip numerals.
std::string to_text(const PipelineConfig& config);

// Stage-scoped views. Each stage hash covers exactly the keys its artifact
// depends on, so e.g. a mask sweep reuses corpus, captioner, and pseudo set.
enum class Stage { corpus, captioner, pseudo, scores, retrieval };
std::string stage_name(Stage s);
std::string stage_text(const PipelineConfig& config, Stage s);
std::string stage_hash(const PipelineConfig& config, Stage s);

// 64-bit FNV-1a, hex-encoded.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace tbps
