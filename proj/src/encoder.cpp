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

#include "tbps/encoder.hpp"

#include <numeric>
#include <string>

namespace tbps {

EncoderConfig EncoderConfig::for_corpus(const CorpusSpec& spec, int width) {
  EncoderConfig c;
  c.width = width;
  c.mlp_hidden = 2 * width;
  c.num_patches = spec.num_patches;
  c.patch_dim = spec.patch_dim;
  c.vocab_size = Vocabulary(spec).size();
  c.max_text_len = spec.max_caption_length();
  return c;
}

namespace {

struct Init {
  ParamStore& store;
  Rng rng;
  double scale;

  ad::ParamId gaussian(const std::string& name, int rows, int cols) {
    std::normal_distribution<double> n(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return store.add(name, std::move(m));
  }
  ad::ParamId zeros(const std::string& name, int rows, int cols) {
    return store.add(name, Mat::Zero(rows, cols));
  }
  ad::ParamId ones(const std::string& name, int rows, int cols) {
    return store.add(name, Mat::Ones(rows, cols));
  }
};

BlockParams make_block(Init& init, const std::string& prefix, const EncoderConfig& c) {
  const int d = c.width;
  BlockParams b;
  b.ln1_g = init.ones(prefix + "ln1.g", 1, d);
  b.ln1_b = init.zeros(prefix + "ln1.b", 1, d);
  b.wq = init.gaussian(prefix + "attn.wq", d, d);
  b.wk = init.gaussian(prefix + "attn.wk", d, d);
  b.wv = init.gaussian(prefix + "attn.wv", d, d);
  b.wo = init.zeros(prefix + "attn.wo", d, d);
  b.bo = init.zeros(prefix + "attn.bo", 1, d);
  b.ln2_g = init.ones(prefix + "ln2.g", 1, d);
  b.ln2_b = init.zeros(prefix + "ln2.b", 1, d);
  b.w1 = init.gaussian(prefix + "mlp.w1", d, c.mlp_hidden);
  b.b1 = init.zeros(prefix + "mlp.b1", 1, c.mlp_hidden);
  b.w2 = init.zeros(prefix + "mlp.w2", c.mlp_hidden, d);
  b.b2 = init.zeros(prefix + "mlp.b2", 1, d);
  return b;
}

// A fusion block is the matching text block plus its own cross-attention.
BlockParams make_fusion_block(Init& init, const std::string& prefix, const EncoderConfig& c,
                              const BlockParams& text) {
  const int d = c.width;
  BlockParams b = text;
  b.cross = true;
  b.lnx_g = init.ones(prefix + "lnx.g", 1, d);
  b.lnx_b = init.zeros(prefix + "lnx.b", 1, d);
  b.lnc_g = init.ones(prefix + "lnc.g", 1, d);
  b.lnc_b = init.zeros(prefix + "lnc.b", 1, d);
  b.xwq = init.gaussian(prefix + "xattn.wq", d, d);
  b.xwk = init.gaussian(prefix + "xattn.wk", d, d);
  b.xwv = init.gaussian(prefix + "xattn.wv", d, d);
  b.xwo = init.zeros(prefix + "xattn.wo", d, d);
  b.xbo = init.zeros(prefix + "xattn.bo", 1, d);
  return b;
}

ad::Var P(ad::Tape& t, const EncoderParams& p, ad::ParamId id) { return t.param(id, p.store.value(id)); }

ad::Var linear(ad::Tape& t, const EncoderParams& p, ad::Var x, ad::ParamId w) {
  return ad::matmul(t, x, P(t, p, w));
}

ad::Var linear(ad::Tape& t, const EncoderParams& p, ad::Var x, ad::ParamId w, ad::ParamId b) {
  return ad::add_row(t, ad::matmul(t, x, P(t, p, w)), P(t, p, b));
}

ad::Var block_forward(ad::Tape& t, const EncoderParams& p, const BlockParams& b, ad::Var x,
                      ad::Var context, AttentionTrace* trace) {
  const int heads = p.config.heads;
  std::vector<Mat> probs;
  {
    ad::Var h = ad::layer_norm(t, x, P(t, p, b.ln1_g), P(t, p, b.ln1_b));
    ad::Var a = ad::attention(t, linear(t, p, h, b.wq), linear(t, p, h, b.wk), linear(t, p, h, b.wv),
                              heads, false, trace ? &probs : nullptr);
    if (trace) trace->insert(trace->end(), probs.begin(), probs.end());
    x = ad::add(t, x, linear(t, p, a, b.wo, b.bo));
  }
  if (b.cross) {
    require(context.valid(), "fusion block needs image features");
    ad::Var h = ad::layer_norm(t, x, P(t, p, b.lnx_g), P(t, p, b.lnx_b));
    ad::Var ctx = ad::layer_norm(t, context, P(t, p, b.lnc_g), P(t, p, b.lnc_b));
    ad::Var a = ad::attention(t, linear(t, p, h, b.xwq), linear(t, p, ctx, b.xwk), linear(t, p, ctx, b.xwv),
                              heads, false, trace ? &probs : nullptr);
    if (trace) trace->insert(trace->end(), probs.begin(), probs.end());
    x = ad::add(t, x, linear(t, p, a, b.xwo, b.xbo));
  }
  ad::Var h = ad::layer_norm(t, x, P(t, p, b.ln2_g), P(t, p, b.ln2_b));
  h = ad::gelu(t, linear(t, p, h, b.w1, b.b1));
  return ad::add(t, x, linear(t, p, h, b.w2, b.b2));
}

void check_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw DivergenceError(std::string(what) + ": non-finite activations");
}

}  // namespace

EncoderParams::EncoderParams(const EncoderConfig& c, std::uint64_t seed) : config(c) {
  require(c.width % c.heads == 0, "encoder: width must be divisible by heads");
  require(c.tau_init > 0.0, "encoder: temperature must be positive");
  Init init{store, Rng(derive_seed(seed, 0x656e63ULL)), c.init_scale};
  const int d = c.width;
  patch_w = init.gaussian("img.proj.w", c.patch_dim, d);
  patch_b = init.zeros("img.proj.b", 1, d);
  img_pos = init.gaussian("img.pos", c.num_patches + 1, d);
  img_cls = init.gaussian("img.cls", 1, d);
  img_proto = init.zeros("img.proto", 1, d);
  tok_emb = init.gaussian("txt.emb", c.vocab_size, d);
  txt_pos = init.gaussian("txt.pos", c.max_text_len + 1, d);
  txt_cls = init.gaussian("txt.cls", 1, d);
  txt_proto = init.zeros("txt.proto", 1, d);
  for (int l = 0; l < c.layers; ++l)
    image_blocks.push_back(make_block(init, "img.block" + std::to_string(l) + ".", c));
  for (int l = 0; l < c.layers; ++l)
    text_blocks.push_back(make_block(init, "txt.block" + std::to_string(l) + ".", c));
  for (int l = 0; l < c.layers; ++l)
    fusion_blocks.push_back(
        make_fusion_block(init, "fuse.block" + std::to_string(l) + ".", c, text_blocks[static_cast<std::size_t>(l)]));
  itm_w = init.gaussian("itm.w", d, 2);
  itm_b = init.zeros("itm.b", 1, 2);
  tau = store.add("tau", Mat::Constant(1, 1, c.tau_init));
}

// ---- graph builders --------------------------------------------------------

ad::Var embed_image(ad::Tape& t, const EncoderParams& p, const Mat& patches, const MaskOutcome* mask) {
  const EncoderConfig& c = p.config;
  require(patches.rows() == c.num_patches && patches.cols() == c.patch_dim,
          "embed_image: patch grid shape mismatch");
  std::vector<int> kept;
  if (mask) {
    kept = mask->kept_patch_indices;
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if (kept[i] < 0 || kept[i] >= c.num_patches)
        throw ContractError("embed_image: mask references an out-of-range patch");
      if (i > 0 && kept[i] <= kept[i - 1])
        throw ContractError("embed_image: kept patch indices must be strictly increasing");
    }
    mask_application_counter().fetch_add(1, std::memory_order_relaxed);
  } else {
    kept.resize(static_cast<std::size_t>(c.num_patches));
    std::iota(kept.begin(), kept.end(), 0);
  }
  Mat rows(static_cast<Eigen::Index>(kept.size()), c.patch_dim);
  for (std::size_t i = 0; i < kept.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = patches.row(kept[i]);

  std::vector<ad::Var> parts{P(t, p, p.img_cls)};
  if (!kept.empty()) {
    ad::Var proj = linear(t, p, t.constant(std::move(rows)), p.patch_w, p.patch_b);
    if (mask && mask->image_channel_keep.size() > 0) {
      require(mask->image_channel_keep.rows() == static_cast<Eigen::Index>(kept.size()),
              "embed_image: channel mask rows must match kept patches");
      proj = ad::channel_mix(t, proj, P(t, p, p.img_proto), mask->image_channel_keep);
    }
    parts.push_back(proj);
  }
  std::vector<int> pos_rows{0};
  for (int k : kept) pos_rows.push_back(k + 1);
  ad::Var seq = ad::concat_rows(t, parts);
  return ad::add(t, seq, ad::gather_rows(t, P(t, p, p.img_pos), pos_rows));
}

ad::Var embed_text(ad::Tape& t, const EncoderParams& p, std::span<const TokenId> tokens,
                   const MaskOutcome* mask) {
  const EncoderConfig& c = p.config;
  require(!tokens.empty(), "embed_text: empty caption");
  require(static_cast<int>(tokens.size()) <= c.max_text_len, "embed_text: caption exceeds max length");
  std::vector<int> ids(tokens.begin(), tokens.end());
  for (int id : ids) require(id >= 0 && id < c.vocab_size, "embed_text: token outside vocabulary");
  if (mask) {
    for (int pos : mask->masked_token_positions) {
      if (pos < 0 || pos >= static_cast<int>(ids.size()))
        throw ContractError("embed_text: mask references an out-of-range token");
      ids[static_cast<std::size_t>(pos)] = Vocabulary::kMask;
    }
    mask_application_counter().fetch_add(1, std::memory_order_relaxed);
  }
  ad::Var emb = ad::gather_rows(t, P(t, p, p.tok_emb), ids);
  if (mask && mask->text_channel_keep.size() > 0) {
    require(mask->text_channel_keep.rows() == static_cast<Eigen::Index>(ids.size()),
            "embed_text: channel mask rows must match caption length");
    emb = ad::channel_mix(t, emb, P(t, p, p.txt_proto), mask->text_channel_keep);
  }
  std::vector<int> pos_rows(ids.size() + 1);
  std::iota(pos_rows.begin(), pos_rows.end(), 0);
  std::vector<ad::Var> parts{P(t, p, p.txt_cls), emb};
  ad::Var seq = ad::concat_rows(t, parts);
  return ad::add(t, seq, ad::gather_rows(t, P(t, p, p.txt_pos), pos_rows));
}

ad::Var encode_blocks(ad::Tape& t, const EncoderParams& p, const std::vector<BlockParams>& blocks,
                      ad::Var x, ad::Var context, AttentionTrace* trace) {
  for (const BlockParams& b : blocks) x = block_forward(t, p, b, x, context, trace);
  return x;
}

ad::Var fuse(ad::Tape& t, const EncoderParams& p, ad::Var text_emb, ad::Var image_feats,
             AttentionTrace* trace) {
  if (t.value(text_emb).cols() != t.value(image_feats).cols())
    throw ContractError("fuse: width mismatch between text embeddings and image features");
  return encode_blocks(t, p, p.fusion_blocks, text_emb, image_feats, trace);
}

ad::Var itm_logits(ad::Tape& t, const EncoderParams& p, ad::Var fused) {
  ad::Var cls = ad::slice_rows(t, fused, 0, 1);
  return linear(t, p, cls, p.itm_w, p.itm_b);
}

// ---- value API -------------------------------------------------------------

EmbeddingSequence embed_image(const EncoderParams& p, const SyntheticImage& image, const MaskOutcome* mask) {
  ad::Tape t(false);
  return {t.value(embed_image(t, p, image.patches, mask)), SequenceOrigin::image};
}

EmbeddingSequence encode_image(const EncoderParams& p, const EmbeddingSequence& emb, AttentionTrace* trace) {
  require(emb.origin == SequenceOrigin::image, "encode_image: expected an image embedding");
  ad::Tape t(false);
  ad::Var out = encode_blocks(t, p, p.image_blocks, t.constant(emb.vectors), ad::Var{}, trace);
  check_finite(t.value(out), "encode_image");
  return {t.value(out), SequenceOrigin::image};
}

EmbeddingSequence embed_text(const EncoderParams& p, const Caption& caption, const MaskOutcome* mask) {
  ad::Tape t(false);
  return {t.value(embed_text(t, p, caption.tokens, mask)), SequenceOrigin::text};
}

EmbeddingSequence encode_text(const EncoderParams& p, const EmbeddingSequence& emb, AttentionTrace* trace) {
  require(emb.origin == SequenceOrigin::text, "encode_text: expected a text embedding");
  ad::Tape t(false);
  ad::Var out = encode_blocks(t, p, p.text_blocks, t.constant(emb.vectors), ad::Var{}, trace);
  check_finite(t.value(out), "encode_text");
  return {t.value(out), SequenceOrigin::text};
}

EmbeddingSequence fuse(const EncoderParams& p, const EmbeddingSequence& text_emb,
                       const EmbeddingSequence& image_feats, AttentionTrace* trace) {
  require(text_emb.origin == SequenceOrigin::text, "fuse: expected text embeddings");
  require(image_feats.origin == SequenceOrigin::image, "fuse: expected image features");
  ad::Tape t(false);
  ad::Var out = fuse(t, p, t.constant(text_emb.vectors), t.constant(image_feats.vectors), trace);
  check_finite(t.value(out), "fuse");
  return {t.value(out), SequenceOrigin::fused};
}

RowVec image_global_feature(const EncoderParams& p, const SyntheticImage& image) {
  return encode_image(p, embed_image(p, image)).cls();
}

RowVec text_global_feature(const EncoderParams& p, const Caption& caption) {
  return encode_text(p, embed_text(p, caption)).cls();
}

double match_probability(const EncoderParams& p, const SyntheticImage& image, const Caption& caption) {
  ad::Tape t(false);
  ad::Var feats = encode_blocks(t, p, p.image_blocks, embed_image(t, p, image.patches, nullptr), ad::Var{});
  ad::Var temb = embed_text(t, p, caption.tokens, nullptr);
  const Mat probs = ad::softmax_rows(t.value(itm_logits(t, p, fuse(t, p, temb, feats))));
  return probs(0, 1);
}

}  // namespace tbps
