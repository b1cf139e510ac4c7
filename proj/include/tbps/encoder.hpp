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

// Retrieval backbone: image encoder, text encoder and the image-grounded
// fusion encoder. Every block is pre-norm with residual output layers
// initialized to zero, so a freshly built encoder is the identity map.
// Fusion blocks reuse the text blocks' weights and add a cross-attention
// layer over the layer-normed image tokens.

#include <cstdint>
#include <vector>

#include "tbps/autodiff.hpp"
#include "tbps/corpus.hpp"
#include "tbps/params.hpp"
#include "tbps/pcmask.hpp"

namespace tbps {

struct EncoderConfig {
  int width = 32;
  int heads = 2;
  int layers = 2;
  int mlp_hidden = 64;
  int num_patches = 16;
  int patch_dim = 16;
  int vocab_size = 64;
  int max_text_len = 16;
  double init_scale = 0.02;
  double tau_init = 0.07;

  static EncoderConfig for_corpus(const CorpusSpec& spec, int width = 32);
};

struct BlockParams {
  ad::ParamId ln1_g, ln1_b, wq, wk, wv, wo, bo;
  bool cross = false;
  ad::ParamId lnx_g = -1, lnx_b = -1, lnc_g = -1, lnc_b = -1, xwq = -1, xwk = -1, xwv = -1, xwo = -1, xbo = -1;
  ad::ParamId ln2_g, ln2_b, w1, b1, w2, b2;
};

struct EncoderParams {
  EncoderParams() = default;
  EncoderParams(const EncoderConfig& config, std::uint64_t seed);

  EncoderConfig config;
  ParamStore store;
  ad::ParamId patch_w = -1, patch_b = -1, img_pos = -1, img_cls = -1, img_proto = -1;
  ad::ParamId tok_emb = -1, txt_pos = -1, txt_cls = -1, txt_proto = -1;
  ad::ParamId itm_w = -1, itm_b = -1, tau = -1;
  std::vector<BlockParams> image_blocks, text_blocks, fusion_blocks;

  double temperature() const { return store.value(tau)(0, 0); }
};

enum class SequenceOrigin { image, text, fused };

struct EmbeddingSequence {
  Mat vectors;  // (L + 1) x d, slot 0 = classification embedding
  SequenceOrigin origin = SequenceOrigin::image;

  RowVec cls() const { return vectors.row(0); }
};

// Collects attention probability matrices (one per head per attention call).
using AttentionTrace = std::vector<Mat>;

// ---- graph builders (differentiable) --------------------------------------

ad::Var embed_image(ad::Tape& t, const EncoderParams& p, const Mat& patches, const MaskOutcome* mask);
ad::Var embed_text(ad::Tape& t, const EncoderParams& p, std::span<const TokenId> tokens,
                   const MaskOutcome* mask);
ad::Var encode_blocks(ad::Tape& t, const EncoderParams& p, const std::vector<BlockParams>& blocks,
                      ad::Var x, ad::Var context, AttentionTrace* trace = nullptr);
ad::Var fuse(ad::Tape& t, const EncoderParams& p, ad::Var text_emb, ad::Var image_feats,
             AttentionTrace* trace = nullptr);
// 1 x 2 match/mismatch logits from the fused classification row; column 1 = match.
ad::Var itm_logits(ad::Tape& t, const EncoderParams& p, ad::Var fused);

// ---- value API ------------------------------------------------------------

EmbeddingSequence embed_image(const EncoderParams& p, const SyntheticImage& image,
                              const MaskOutcome* mask = nullptr);
EmbeddingSequence encode_image(const EncoderParams& p, const EmbeddingSequence& emb,
                               AttentionTrace* trace = nullptr);
EmbeddingSequence embed_text(const EncoderParams& p, const Caption& caption,
                             const MaskOutcome* mask = nullptr);
EmbeddingSequence encode_text(const EncoderParams& p, const EmbeddingSequence& emb,
                              AttentionTrace* trace = nullptr);
EmbeddingSequence fuse(const EncoderParams& p, const EmbeddingSequence& text_emb,
                       const EmbeddingSequence& image_feats, AttentionTrace* trace = nullptr);

// Unmasked inference helpers.
RowVec image_global_feature(const EncoderParams& p, const SyntheticImage& image);
RowVec text_global_feature(const EncoderParams& p, const Caption& caption);
// Softmax match probability from the ITM head.
double match_probability(const EncoderParams& p, const SyntheticImage& image, const Caption& caption);

}  // namespace tbps
