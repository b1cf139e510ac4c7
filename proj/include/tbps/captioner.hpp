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

// Generation stage: a small image-conditioned autoregressive token model.
// Patches are projected by a shared map and exposed to one causal attention
// block as extra key/value slots: patch keys come from a learned per-position
// embedding, patch values from the projected content.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "tbps/autodiff.hpp"
#include "tbps/corpus.hpp"
#include "tbps/kernels.hpp"
#include "tbps/params.hpp"

namespace tbps {

struct CaptionerConfig {
  int width = 32;
  int heads = 2;
  int mlp_hidden = 64;
  int num_patches = 16;
  int patch_dim = 16;
  int vocab_size = 64;
  int max_len = 16;  // total tokens including BOS and EOS
  double init_scale = 0.02;  // patch-position embeddings

  static CaptionerConfig for_corpus(const CorpusSpec& spec);
};

struct CaptionerParams {
  CaptionerParams() = default;
  CaptionerParams(const CaptionerConfig& config, std::uint64_t seed);

  CaptionerConfig config;
  ParamStore store;
  ad::ParamId img_w = -1, img_b = -1, img_pos = -1, tok_emb = -1;
  ad::ParamId ln1_g = -1, ln1_b = -1, wq = -1, wk = -1, wv = -1, wo = -1, bo = -1;
  ad::ParamId ln2_g = -1, ln2_b = -1, w1 = -1, b1 = -1, w2 = -1, b2 = -1;
  ad::ParamId lnf_g = -1, lnf_b = -1, head_w = -1, head_b = -1;
};

// Logits; row r follows prefix token u_r and predicts u_{r+1}.
ad::Var captioner_logits(ad::Tape& t, const CaptionerParams& p, const Mat& patches,
                         std::span<const TokenId> prefix);

// Summed negative log-likelihood of every non-BOS token given the image and
// the preceding tokens.
double lm_loss(const CaptionerParams& p, const SyntheticImage& image, const Caption& caption);
ad::Var lm_loss(ad::Tape& t, const CaptionerParams& p, const SyntheticImage& image, const Caption& caption);

// One softmax row per predicted token (rows follow caption positions 1..n).
Mat teacher_forced_distributions(const CaptionerParams& p, const SyntheticImage& image,
                                 const Caption& caption);

struct FinetuneOptions {
  int epochs = 30;
  double lr = 3e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
  // Keep the patch-selection weights (patch positions, query, key) fixed.
  bool freeze_attention = false;
};

struct FinetuneResult {
  CaptionerParams params;
  std::vector<double> epoch_token_loss;  // mean per-token loss, measured after each epoch
};

FinetuneResult finetune(const CaptionerParams& init, std::span<const ImageTextPair> labeled,
                        const FinetuneOptions& opts);

// Generic-domain pretraining: the same attribute schema rendered with value
// patterns the target corpus never uses, fully captioned. Teaches grammar and
// where to look; the target appearance of every value is left to finetuning.
struct PretrainOptions {
  int epochs = 5;
  double lr = 3e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

CorpusSplit generic_domain(const CorpusSpec& spec, std::uint64_t seed);
CaptionerParams pretrain_generic(const CaptionerParams& init, const CorpusSpec& spec, const PretrainOptions& opts);

// Mean per-token loss over a set of pairs.
double mean_token_loss(const CaptionerParams& p, std::span<const ImageTextPair> pairs);

enum class DecoderKind { greedy, sample };

struct Decoder {
  DecoderKind kind = DecoderKind::greedy;
  double top_p = 0.9;
};

// Emits tokens after BOS until EOS or max_len. When truth is given, the
// caption's oracle corruption rate is the fraction of emitted value tokens
// that contradict it.
Caption generate_pseudo_text(const CaptionerParams& p, const SyntheticImage& image,
                             const Vocabulary& vocab, const Decoder& decoder, std::uint64_t seed,
                             const AttributeIdentity* truth = nullptr);

// Pseudo-labeled set: texts_per_image captions for every unlabeled image.
std::vector<ImageTextPair> generate_pseudo_set(const CaptionerParams& p, const CorpusSplit& split,
                                               const Decoder& decoder, std::uint64_t seed,
                                               int texts_per_image = 1, Exec exec = Exec::parallel);

// One JSON record per line: {"image_id": ..., "caption": {...}}. Images are
// resolved against the split's unlabeled set on read.
void write_pseudo_set(const std::filesystem::path& path, std::span<const ImageTextPair> pairs);
std::vector<ImageTextPair> read_pseudo_set(const std::filesystem::path& path, const CorpusSplit& split);

}  // namespace tbps
